//! Central finite-difference checking of [`LayerGraph::backward`].
//!
//! The scalar probed is `L = sum_i r_i * y_i` for a fixed random weighting
//! `r` of the graph output, so `dL/dy = r` seeds the analytic pass while the
//! numeric pass only ever calls `forward`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::LayerGraph;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Worst relative error over parameter tensors.
    pub param_rel_err: f64,
    /// Worst relative error over input tensors.
    pub input_rel_err: f64,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.param_rel_err.max(self.input_rel_err)
    }
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

fn weighted(graph: &LayerGraph, inputs: &[&Tensor], r: &[f64]) -> Result<f64> {
    let y = graph.forward(inputs)?;
    Ok(y.data().iter().zip(r).map(|(a, b)| a * b).sum())
}

pub fn check(graph: &LayerGraph, inputs: &[Tensor], step: f64, seed: u64) -> Result<GradCheck> {
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let out_dims = graph.forward(&refs)?.dims().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..out_dims.iter().product::<usize>())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let tape = graph.forward_tape(&refs)?;
    let analytic = graph.backward(&tape, &Tensor::from_vec(&out_dims, r.clone())?)?;

    let mut probe = graph.clone();
    let mut param_err: f64 = 0.0;
    for pid in 0..graph.params().len() {
        let mut numeric = Vec::with_capacity(graph.params().get(pid).len());
        for k in 0..graph.params().get(pid).len() {
            let orig = graph.params().get(pid).data()[k];
            probe.params_mut().tensors_mut()[pid].data_mut()[k] = orig + step;
            let up = weighted(&probe, &refs, &r)?;
            probe.params_mut().tensors_mut()[pid].data_mut()[k] = orig - step;
            let down = weighted(&probe, &refs, &r)?;
            probe.params_mut().tensors_mut()[pid].data_mut()[k] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
        param_err = param_err.max(relative_error(analytic.params[pid].data(), &numeric));
    }

    let mut input_err: f64 = 0.0;
    let mut perturbed: Vec<Tensor> = inputs.to_vec();
    for slot in 0..inputs.len() {
        let mut numeric = Vec::with_capacity(inputs[slot].len());
        for k in 0..inputs[slot].len() {
            let orig = inputs[slot].data()[k];
            perturbed[slot].data_mut()[k] = orig + step;
            let up = weighted(graph, &perturbed.iter().collect::<Vec<_>>(), &r)?;
            perturbed[slot].data_mut()[k] = orig - step;
            let down = weighted(graph, &perturbed.iter().collect::<Vec<_>>(), &r)?;
            perturbed[slot].data_mut()[k] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
        input_err = input_err.max(relative_error(analytic.inputs[slot].data(), &numeric));
    }
    Ok(GradCheck {
        param_rel_err: param_err,
        input_rel_err: input_err,
    })
}

/// Layer kinds covered by [`random_case`].
pub const LAYER_KINDS: &[&str] = &[
    "conv1x1",
    "conv3x3",
    "dwconv",
    "maxpool2",
    "upsample2",
    "dense",
    "relu",
    "leaky_relu",
    "sigmoid",
    "softmax",
    "concat",
    "add",
    "flatten",
];

/// Distinct values with magnitude >= 0.05 and pairwise gaps far above any
/// probe step, so max-pool ties and activation kinks are never crossed.
fn gapped(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n: usize = dims.iter().product();
    let mut vals: Vec<f64> = (0..n)
        .map(|k| {
            let mag = 0.05 + 0.0125 * k as f64 / (n as f64 / 40.0).max(1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    Tensor::from_vec(dims, vals).expect("dims")
}

/// A single-layer graph of the given kind with random small shapes, plus
/// matching random inputs.
pub fn random_case(kind: &str, seed: u64) -> Result<(LayerGraph, Vec<Tensor>)> {
    use crate::graph::{GraphBuilder, Shape};
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = rng.gen_range(1..=2);
    let c = rng.gen_range(1..=3);
    let h = rng.gen_range(1..=5);
    let w = rng.gen_range(1..=5);
    let map = Shape::Map { channels: c, size: Some((h, w)) };
    let mut b = GraphBuilder::new();
    let x = b.input("x", map);
    let mut inputs = vec![gapped(&mut rng, &[n, c, h, w])];
    let out = match kind {
        "conv1x1" => b.conv("l", x, rng.gen_range(1..=3), 1)?,
        "conv3x3" => b.conv("l", x, rng.gen_range(1..=3), 3)?,
        "dwconv" => b.depthwise("l", x, 3)?,
        "maxpool2" => b.maxpool2("l", x)?,
        "upsample2" => b.upsample2("l", x)?,
        "relu" => b.relu("l", x),
        "leaky_relu" => b.leaky_relu("l", x, 0.01),
        "sigmoid" => b.sigmoid("l", x),
        "softmax" => b.softmax("l", x)?,
        "flatten" => b.flatten("l", x)?,
        "dense" => {
            let f = b.flatten("f", x)?;
            b.dense("l", f, rng.gen_range(1..=4))?
        }
        "concat" => {
            let c2 = rng.gen_range(1..=3);
            let y = b.input("y", Shape::Map { channels: c2, size: Some((h, w)) });
            inputs.push(gapped(&mut rng, &[n, c2, h, w]));
            b.concat("l", x, y)?
        }
        "add" => {
            let y = b.input("y", map);
            inputs.push(gapped(&mut rng, &[n, c, h, w]));
            b.add("l", x, y)?
        }
        other => {
            return Err(crate::error::NnError::Graph(format!("unknown layer kind `{other}`")))
        }
    };
    let mut g = b.build(out, seed)?;
    // Non-zero biases so they participate in the check.
    for t in g.params_mut().tensors_mut() {
        if t.dims().len() == 1 {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    }
    Ok((g, inputs))
}
