//! Static layer graphs: construction, forward evaluation, reverse-mode
//! gradients and FLOP accounting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::layers;
use crate::tensor::Tensor;

pub type NodeId = usize;
pub type ParamId = usize;

/// Per-item shape of a node (batch dimension excluded).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    /// `(C, H, W)` feature map; spatial size unknown until run time when `None`.
    Map {
        channels: usize,
        size: Option<(usize, usize)>,
    },
    Vector(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Input { slot: usize },
    Conv { input: NodeId, weights: ParamId, bias: ParamId },
    Depthwise { input: NodeId, weights: ParamId, bias: ParamId },
    MaxPool2 { input: NodeId },
    Upsample2 { input: NodeId },
    Relu { input: NodeId },
    LeakyRelu { input: NodeId, slope: f64 },
    Sigmoid { input: NodeId },
    Softmax { input: NodeId },
    Concat { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Flatten { input: NodeId },
    Dense { input: NodeId, weights: ParamId, bias: ParamId },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Input { .. } => "input",
            Layer::Conv { .. } => "conv",
            Layer::Depthwise { .. } => "dwconv",
            Layer::MaxPool2 { .. } => "maxpool2",
            Layer::Upsample2 { .. } => "upsample2",
            Layer::Relu { .. } => "relu",
            Layer::LeakyRelu { .. } => "leaky_relu",
            Layer::Sigmoid { .. } => "sigmoid",
            Layer::Softmax { .. } => "softmax",
            Layer::Concat { .. } => "concat",
            Layer::Add { .. } => "add",
            Layer::Flatten { .. } => "flatten",
            Layer::Dense { .. } => "dense",
        }
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Layer::Input { .. } => vec![],
            Layer::Concat { a, b } | Layer::Add { a, b } => vec![a, b],
            Layer::Conv { input, .. }
            | Layer::Depthwise { input, .. }
            | Layer::MaxPool2 { input }
            | Layer::Upsample2 { input }
            | Layer::Relu { input }
            | Layer::LeakyRelu { input, .. }
            | Layer::Sigmoid { input }
            | Layer::Softmax { input }
            | Layer::Flatten { input }
            | Layer::Dense { input, .. } => vec![input],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub layer: Layer,
}

/// Named parameter tensors in creation order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

#[derive(Clone, Debug)]
pub struct InputSpec {
    pub name: String,
    pub shape: Shape,
}

/// Network description plus its parameters. Nodes are stored in
/// topological order: every input reference precedes its consumer.
#[derive(Clone, Debug)]
pub struct LayerGraph {
    nodes: Vec<Node>,
    params: ParamStore,
    inputs: Vec<InputSpec>,
    output: NodeId,
}

/// Activations recorded by [`LayerGraph::forward_tape`].
#[derive(Clone, Debug, Default)]
pub struct Tape {
    values: Vec<Tensor>,
}

impl Tape {
    pub fn value(&self, node: NodeId) -> Option<&Tensor> {
        self.values.get(node)
    }

    pub fn output(&self) -> Option<&Tensor> {
        self.values.last()
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<Tensor>,
    pub inputs: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(graph: &LayerGraph) -> Self {
        Self {
            params: graph
                .params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.dims()))
                .collect(),
            inputs: Vec::new(),
        }
    }

    /// Adds the parameter gradients of `other` (input gradients are dropped).
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.params.iter_mut().for_each(|t| t.scale(factor));
    }
}

impl LayerGraph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn inputs(&self) -> &[InputSpec] {
        &self.inputs
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.element_count()
    }

    /// Rounds every parameter to the nearest 32-bit real, the precision of
    /// serialized weights.
    pub fn round_params_to_f32(&mut self) {
        for t in &mut self.params.tensors {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    fn check_inputs(&self, inputs: &[&Tensor]) -> Result<()> {
        if inputs.len() != self.inputs.len() {
            return Err(NnError::Shape(format!(
                "graph takes {} inputs, got {}",
                self.inputs.len(),
                inputs.len()
            )));
        }
        for (spec, t) in self.inputs.iter().zip(inputs) {
            let ok = match (spec.shape, t.dims()) {
                (Shape::Vector(len), [_, l]) => *l == len,
                (Shape::Map { channels, size }, [_, c, h, w]) => {
                    *c == channels && size.map_or(true, |s| s == (*h, *w))
                }
                _ => false,
            };
            if !ok || t.dims()[0] == 0 {
                return Err(NnError::Shape(format!(
                    "input `{}` expects {:?}, got {:?}",
                    spec.name,
                    spec.shape,
                    t.dims()
                )));
            }
        }
        Ok(())
    }

    fn eval_node(&self, id: NodeId, values: &[Option<Tensor>], inputs: &[&Tensor]) -> Result<Tensor> {
        let get = |n: NodeId| -> &Tensor { values[n].as_ref().expect("topological order") };
        let p = |id: ParamId| self.params.get(id);
        Ok(match self.nodes[id].layer {
            Layer::Input { slot } => inputs[slot].clone(),
            Layer::Conv { input, weights, bias } => layers::conv2d(get(input), p(weights), p(bias))?,
            Layer::Depthwise { input, weights, bias } => {
                layers::depthwise_conv2d(get(input), p(weights), p(bias))?
            }
            Layer::MaxPool2 { input } => layers::maxpool2(get(input))?,
            Layer::Upsample2 { input } => layers::upsample2(get(input))?,
            Layer::Relu { input } => layers::map(get(input), layers::relu),
            Layer::LeakyRelu { input, slope } => layers::map(get(input), |x| layers::leaky_relu(x, slope)),
            Layer::Sigmoid { input } => layers::map(get(input), layers::sigmoid),
            Layer::Softmax { input } => layers::softmax_channels(get(input))?,
            Layer::Concat { a, b } => layers::concat_channels(get(a), get(b))?,
            Layer::Add { a, b } => layers::add_skip(get(a), get(b))?,
            Layer::Flatten { input } => {
                let t = get(input);
                let (n, f) = t.batch_split()?;
                t.clone().reshape(&[n, f])?
            }
            Layer::Dense { input, weights, bias } => {
                layers::fully_connected(get(input), p(weights), p(bias))?
            }
        })
    }

    /// Inference: evaluates the graph, releasing activations after their
    /// last use.
    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        self.check_inputs(inputs)?;
        let mut last_use = vec![0usize; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            for src in node.layer.inputs() {
                last_use[src] = id;
            }
        }
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for id in 0..=self.output {
            values[id] = Some(self.eval_node(id, &values, inputs)?);
            for src in self.nodes[id].layer.inputs() {
                if last_use[src] == id && src != self.output {
                    values[src] = None;
                }
            }
        }
        Ok(values[self.output].take().expect("output evaluated"))
    }

    /// Evaluates the graph and keeps every activation for [`Self::backward`].
    pub fn forward_tape(&self, inputs: &[&Tensor]) -> Result<Tape> {
        self.check_inputs(inputs)?;
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for id in 0..self.nodes.len() {
            values[id] = Some(self.eval_node(id, &values, inputs)?);
        }
        Ok(Tape {
            values: values.into_iter().map(Option::unwrap).collect(),
        })
    }

    /// Reverse-mode gradients of a scalar loss whose gradient with respect to
    /// the graph output is `loss_grad`.
    pub fn backward(&self, tape: &Tape, loss_grad: &Tensor) -> Result<Gradients> {
        self.backward_from(tape, self.output, loss_grad)
    }

    /// Like [`Self::backward`], but seeds the gradient at an arbitrary node
    /// (e.g. logits ahead of a softmax head).
    pub fn backward_from(&self, tape: &Tape, node: NodeId, grad: &Tensor) -> Result<Gradients> {
        if tape.values.len() != self.nodes.len() {
            return Err(NnError::NotEvaluated);
        }
        if tape.values[node].dims() != grad.dims() {
            return Err(NnError::Shape(format!(
                "seed gradient {:?} does not match node output {:?}",
                grad.dims(),
                tape.values[node].dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[node] = Some(grad.clone());
        let mut out = Gradients::zeros_like(self);
        out.inputs = self
            .inputs
            .iter()
            .enumerate()
            .map(|(slot, _)| {
                let id = self
                    .nodes
                    .iter()
                    .position(|n| n.layer == Layer::Input { slot })
                    .expect("input node");
                Tensor::zeros(tape.values[id].dims())
            })
            .collect();

        fn push(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
            match &mut grads[id] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for id in (0..=node).rev() {
            let Some(g) = grads[id].take() else { continue };
            let v = &tape.values;
            match self.nodes[id].layer {
                Layer::Input { slot } => out.inputs[slot].add_assign(&g)?,
                Layer::Conv { input, weights, bias } => {
                    let r = layers::conv2d_backward(&v[input], self.params.get(weights), &g)?;
                    out.params[weights].add_assign(&r.weights)?;
                    out.params[bias].add_assign(&r.bias)?;
                    push(&mut grads, input, r.input)?;
                }
                Layer::Depthwise { input, weights, bias } => {
                    let r = layers::depthwise_conv2d_backward(&v[input], self.params.get(weights), &g)?;
                    out.params[weights].add_assign(&r.weights)?;
                    out.params[bias].add_assign(&r.bias)?;
                    push(&mut grads, input, r.input)?;
                }
                Layer::Dense { input, weights, bias } => {
                    let r = layers::fully_connected_backward(&v[input], self.params.get(weights), &g)?;
                    out.params[weights].add_assign(&r.weights)?;
                    out.params[bias].add_assign(&r.bias)?;
                    push(&mut grads, input, r.input)?;
                }
                Layer::MaxPool2 { input } => {
                    push(&mut grads, input, layers::maxpool2_backward(&v[input], &g)?)?
                }
                Layer::Upsample2 { input } => {
                    push(&mut grads, input, layers::upsample2_backward(v[input].dims(), &g)?)?
                }
                Layer::Relu { input } => {
                    let d = layers::map_backward(&v[input], &v[id], &g, |x, _| if x > 0.0 { 1.0 } else { 0.0 })?;
                    push(&mut grads, input, d)?
                }
                Layer::LeakyRelu { input, slope } => {
                    let d = layers::map_backward(&v[input], &v[id], &g, |x, _| if x > 0.0 { 1.0 } else { slope })?;
                    push(&mut grads, input, d)?
                }
                Layer::Sigmoid { input } => {
                    let d = layers::map_backward(&v[input], &v[id], &g, |_, y| y * (1.0 - y))?;
                    push(&mut grads, input, d)?
                }
                Layer::Softmax { input } => {
                    push(&mut grads, input, layers::softmax_channels_backward(&v[id], &g)?)?
                }
                Layer::Concat { a, b } => {
                    let (ga, gb) = layers::concat_channels_backward(v[a].dims(), v[b].dims(), &g)?;
                    push(&mut grads, a, ga)?;
                    push(&mut grads, b, gb)?;
                }
                Layer::Add { a, b } => {
                    push(&mut grads, a, g.clone())?;
                    push(&mut grads, b, g)?;
                }
                Layer::Flatten { input } => {
                    push(&mut grads, input, g.reshape(v[input].dims())?)?
                }
            }
        }
        Ok(out)
    }

    /// Propagates full tensor dims (batch included) through the graph
    /// without evaluating it.
    pub fn infer_dims(&self, input_dims: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
        if input_dims.len() != self.inputs.len() {
            return Err(NnError::Shape(format!(
                "graph takes {} inputs, got {}",
                self.inputs.len(),
                input_dims.len()
            )));
        }
        let mut dims: Vec<Vec<usize>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let d = match node.layer {
                Layer::Input { slot } => input_dims[slot].clone(),
                Layer::Conv { input, weights, .. } => {
                    let mut d = dims[input].clone();
                    d[1] = self.params.get(weights).dims()[0];
                    d
                }
                Layer::MaxPool2 { input } => {
                    let d = &dims[input];
                    vec![d[0], d[1], layers::pooled_extent(d[2]), layers::pooled_extent(d[3])]
                }
                Layer::Upsample2 { input } => {
                    let d = &dims[input];
                    vec![d[0], d[1], 2 * d[2], 2 * d[3]]
                }
                Layer::Concat { a, b } => {
                    let mut d = dims[a].clone();
                    d[1] += dims[b][1];
                    d
                }
                Layer::Flatten { input } => {
                    let d = &dims[input];
                    vec![d[0], d[1..].iter().product()]
                }
                Layer::Dense { input, weights, .. } => {
                    vec![dims[input][0], self.params.get(weights).dims()[0]]
                }
                Layer::Depthwise { input, .. }
                | Layer::Relu { input }
                | Layer::LeakyRelu { input, .. }
                | Layer::Sigmoid { input }
                | Layer::Softmax { input } => dims[input].clone(),
                Layer::Add { a, .. } => dims[a].clone(),
            };
            dims.push(d);
        }
        Ok(dims)
    }

    /// FLOPs of one node given the inferred dims of all nodes.
    ///
    /// Multiply-accumulates count as 2 FLOPs. Convolutions use
    /// `2*K^2*C_in*C_out*H*W`, depthwise `2*K^2*C*H*W`, dense `2*F_in*F_out`
    /// (all per batch item, bias excluded). Elementwise activations and skip
    /// additions cost 1 per output element, max pooling 3 comparisons per
    /// output, softmax 3 per element. Inputs, concatenation, flattening and
    /// nearest-neighbour upsampling are free.
    pub fn node_flops(&self, id: NodeId, dims: &[Vec<usize>]) -> u64 {
        let elems = |n: NodeId| dims[n].iter().product::<usize>() as u64;
        match self.nodes[id].layer {
            Layer::Conv { input, weights, .. } => {
                let k = self.params.get(weights).dims()[2] as u64;
                let cin = dims[input][1] as u64;
                2 * k * k * cin * elems(id)
            }
            Layer::Depthwise { weights, .. } => {
                let k = self.params.get(weights).dims()[2] as u64;
                2 * k * k * elems(id)
            }
            Layer::Dense { input, .. } => {
                let fin = dims[input][1..].iter().product::<usize>() as u64;
                2 * fin * elems(id)
            }
            Layer::Relu { .. } | Layer::LeakyRelu { .. } | Layer::Sigmoid { .. } | Layer::Add { .. } => {
                elems(id)
            }
            Layer::MaxPool2 { .. } | Layer::Softmax { .. } => 3 * elems(id),
            Layer::Input { .. } | Layer::Concat { .. } | Layer::Flatten { .. } | Layer::Upsample2 { .. } => 0,
        }
    }

    /// Total analytic FLOPs for a forward pass on inputs of the given dims.
    pub fn flops(&self, input_dims: &[Vec<usize>]) -> Result<u64> {
        let dims = self.infer_dims(input_dims)?;
        Ok((0..self.nodes.len()).map(|id| self.node_flops(id, &dims)).sum())
    }

    /// Per-node `(name, kind, flops)` rows, skipping free nodes.
    pub fn flops_by_node(&self, input_dims: &[Vec<usize>]) -> Result<Vec<(String, &'static str, u64)>> {
        let dims = self.infer_dims(input_dims)?;
        Ok(self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| (n.name.clone(), n.layer.kind(), self.node_flops(id, &dims)))
            .filter(|r| r.2 > 0)
            .collect())
    }
}

/// Incremental graph construction with shape checking and seeded
/// Kaiming-uniform initialization (biases start at zero).
pub struct GraphBuilder {
    nodes: Vec<Node>,
    shapes: Vec<Shape>,
    inputs: Vec<InputSpec>,
    params: ParamStore,
    fan_in: Vec<Option<usize>>,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            shapes: Vec::new(),
            inputs: Vec::new(),
            params: ParamStore::default(),
            fan_in: Vec::new(),
        }
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.shapes[id]
    }

    fn push(&mut self, name: impl Into<String>, layer: Layer, shape: Shape) -> NodeId {
        self.nodes.push(Node {
            name: name.into(),
            layer,
        });
        self.shapes.push(shape);
        self.nodes.len() - 1
    }

    fn param(&mut self, name: String, dims: &[usize], fan_in: Option<usize>) -> Result<ParamId> {
        if self.params.find(&name).is_some() {
            return Err(NnError::Graph(format!("duplicate parameter name `{name}`")));
        }
        self.params.names.push(name);
        self.params.tensors.push(Tensor::zeros(dims));
        self.fan_in.push(fan_in);
        Ok(self.params.tensors.len() - 1)
    }

    fn map_shape(&self, id: NodeId, what: &str) -> Result<(usize, Option<(usize, usize)>)> {
        match self.shapes[id] {
            Shape::Map { channels, size } => Ok((channels, size)),
            Shape::Vector(_) => Err(NnError::Graph(format!("{what} needs a feature map input"))),
        }
    }

    pub fn input(&mut self, name: &str, shape: Shape) -> NodeId {
        let slot = self.inputs.len();
        self.inputs.push(InputSpec {
            name: name.to_string(),
            shape,
        });
        self.push(name, Layer::Input { slot }, shape)
    }

    pub fn conv(&mut self, name: &str, x: NodeId, out_channels: usize, kernel: usize) -> Result<NodeId> {
        let (cin, size) = self.map_shape(x, "conv")?;
        if kernel % 2 == 0 || out_channels == 0 {
            return Err(NnError::Graph(format!("conv `{name}`: bad kernel/width")));
        }
        let weights = self.param(
            format!("{name}.weight"),
            &[out_channels, cin, kernel, kernel],
            Some(cin * kernel * kernel),
        )?;
        let bias = self.param(format!("{name}.bias"), &[out_channels], None)?;
        Ok(self.push(
            name,
            Layer::Conv { input: x, weights, bias },
            Shape::Map {
                channels: out_channels,
                size,
            },
        ))
    }

    pub fn depthwise(&mut self, name: &str, x: NodeId, kernel: usize) -> Result<NodeId> {
        let (c, size) = self.map_shape(x, "depthwise conv")?;
        let weights = self.param(format!("{name}.weight"), &[c, 1, kernel, kernel], Some(kernel * kernel))?;
        let bias = self.param(format!("{name}.bias"), &[c], None)?;
        Ok(self.push(
            name,
            Layer::Depthwise { input: x, weights, bias },
            Shape::Map { channels: c, size },
        ))
    }

    pub fn maxpool2(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let (c, size) = self.map_shape(x, "maxpool")?;
        let size = size.map(|(h, w)| (layers::pooled_extent(h), layers::pooled_extent(w)));
        Ok(self.push(name, Layer::MaxPool2 { input: x }, Shape::Map { channels: c, size }))
    }

    pub fn upsample2(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let (c, size) = self.map_shape(x, "upsample")?;
        let size = size.map(|(h, w)| (2 * h, 2 * w));
        Ok(self.push(name, Layer::Upsample2 { input: x }, Shape::Map { channels: c, size }))
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> NodeId {
        let s = self.shapes[x];
        self.push(name, Layer::Relu { input: x }, s)
    }

    pub fn leaky_relu(&mut self, name: &str, x: NodeId, slope: f64) -> NodeId {
        let s = self.shapes[x];
        self.push(name, Layer::LeakyRelu { input: x, slope }, s)
    }

    pub fn sigmoid(&mut self, name: &str, x: NodeId) -> NodeId {
        let s = self.shapes[x];
        self.push(name, Layer::Sigmoid { input: x }, s)
    }

    pub fn softmax(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.map_shape(x, "softmax")?;
        let s = self.shapes[x];
        Ok(self.push(name, Layer::Softmax { input: x }, s))
    }

    pub fn concat(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = match (self.shapes[a], self.shapes[b]) {
            (Shape::Vector(x), Shape::Vector(y)) => Shape::Vector(x + y),
            (
                Shape::Map { channels: ca, size: sa },
                Shape::Map { channels: cb, size: sb },
            ) if sa == sb => Shape::Map {
                channels: ca + cb,
                size: sa,
            },
            (sa, sb) => return Err(NnError::Graph(format!("concat `{name}`: {sa:?} vs {sb:?}"))),
        };
        Ok(self.push(name, Layer::Concat { a, b }, shape))
    }

    pub fn add(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shapes[a] != self.shapes[b] {
            return Err(NnError::Graph(format!(
                "add `{name}`: {:?} vs {:?}",
                self.shapes[a], self.shapes[b]
            )));
        }
        let s = self.shapes[a];
        Ok(self.push(name, Layer::Add { a, b }, s))
    }

    pub fn flatten(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let len = match self.shapes[x] {
            Shape::Vector(l) => l,
            Shape::Map {
                channels,
                size: Some((h, w)),
            } => channels * h * w,
            Shape::Map { size: None, .. } => {
                return Err(NnError::Graph(format!(
                    "flatten `{name}` needs a fixed spatial size"
                )))
            }
        };
        Ok(self.push(name, Layer::Flatten { input: x }, Shape::Vector(len)))
    }

    pub fn dense(&mut self, name: &str, x: NodeId, out: usize) -> Result<NodeId> {
        let Shape::Vector(fin) = self.shapes[x] else {
            return Err(NnError::Graph(format!("dense `{name}` needs a vector input")));
        };
        let weights = self.param(format!("{name}.weight"), &[out, fin], Some(fin))?;
        let bias = self.param(format!("{name}.bias"), &[out], None)?;
        Ok(self.push(name, Layer::Dense { input: x, weights, bias }, Shape::Vector(out)))
    }

    /// Finalizes the graph; nodes after `output` are discarded.
    pub fn build(mut self, output: NodeId, seed: u64) -> Result<LayerGraph> {
        if output >= self.nodes.len() {
            return Err(NnError::Graph("output node does not exist".into()));
        }
        self.nodes.truncate(output + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (t, fan_in) in self.params.tensors.iter_mut().zip(&self.fan_in) {
            if let Some(fan_in) = fan_in {
                let bound = (6.0 / *fan_in as f64).sqrt();
                for v in t.data_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
        }
        Ok(LayerGraph {
            nodes: self.nodes,
            params: self.params,
            inputs: self.inputs,
            output,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LayerGraph {
        let mut b = GraphBuilder::new();
        let x = b.input("x", Shape::Map { channels: 1, size: None });
        let c = b.conv("c", x, 2, 3).unwrap();
        let a = b.leaky_relu("a", c, 0.01);
        b.build(a, 7).unwrap()
    }

    #[test]
    fn backward_without_forward_is_an_error() {
        let g = tiny();
        let err = g.backward(&Tape::default(), &Tensor::zeros(&[1, 2, 3, 3]));
        assert!(matches!(err, Err(NnError::NotEvaluated)));
    }

    #[test]
    fn zero_loss_gradient_gives_zero_param_grads() {
        let g = tiny();
        let x = Tensor::filled(&[1, 1, 3, 3], 0.7);
        let tape = g.forward_tape(&[&x]).unwrap();
        let grads = g.backward(&tape, &Tensor::zeros(&[1, 2, 3, 3])).unwrap();
        assert!(grads.params.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn seeded_init_is_deterministic_and_biases_zero() {
        let a = tiny();
        let b = tiny();
        assert_eq!(a.params().tensors(), b.params().tensors());
        let bias = a.params().find("c.bias").unwrap();
        assert!(a.params().get(bias).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_parameter_names_rejected() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", Shape::Map { channels: 1, size: None });
        b.conv("c", x, 2, 1).unwrap();
        assert!(b.conv("c", x, 2, 1).is_err());
    }

    #[test]
    fn forward_matches_tape_output() {
        let g = tiny();
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![0.1, -0.4, 0.9, 0.3]).unwrap();
        let tape = g.forward_tape(&[&x]).unwrap();
        assert_eq!(&g.forward(&[&x]).unwrap(), tape.output().unwrap());
    }
}
