//! Depthwise-separable eye-segmentation U-Net in two sizes.
//!
//! Every block is `1x1 conv (expand) -> leaky ReLU -> 3x3 depthwise ->
//! leaky ReLU -> 1x1 conv (project)` plus an additive skip from the block
//! input (through a 1x1 conv when widths differ). The depthwise stage runs at
//! the wider "expand" width. Five encoder blocks (the last four preceded by
//! 2x2 max-pooling) pair with four decoder blocks (nearest-neighbour
//! upsampling, then concatenation with the matching encoder output).

use std::path::Path;

use edar_nn::io::{apply_entries, read_entries};
use edar_nn::{save_weights, GraphBuilder, LayerGraph, NodeId, Shape, Tensor, WeightEntry};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{Frame, SegVariant, SegmentationMap, NUM_CLASSES};

pub const LEAKY_SLOPE: f64 = 0.01;
/// Spatial extents must be multiples of this (four pooling stages).
pub const DIM_MULTIPLE: usize = 16;

/// Channel widths of the nine blocks (five down, four up).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SegnetWidths {
    pub expand: [usize; 9],
    pub output: [usize; 9],
}

impl SegnetWidths {
    pub fn for_variant(variant: SegVariant) -> Self {
        match variant {
            SegVariant::L => Self {
                expand: [24, 40, 64, 96, 112, 96, 64, 40, 24],
                output: [12, 20, 32, 48, 56, 48, 32, 20, 12],
            },
            SegVariant::S => Self {
                expand: [12, 20, 32, 48, 56, 48, 32, 20, 12],
                output: [8, 16, 24, 36, 42, 36, 24, 16, 8],
            },
        }
    }
}

pub fn network_name(variant: SegVariant) -> &'static str {
    match variant {
        SegVariant::S => "segnet-s-v1",
        SegVariant::L => "segnet-l-v1",
    }
}

fn block(b: &mut GraphBuilder, name: &str, x: NodeId, expand: usize, out: usize) -> Result<NodeId> {
    let e = b.conv(&format!("{name}.expand"), x, expand, 1)?;
    let e = b.leaky_relu(&format!("{name}.expand_act"), e, LEAKY_SLOPE);
    let d = b.depthwise(&format!("{name}.dw"), e, 3)?;
    let d = b.leaky_relu(&format!("{name}.dw_act"), d, LEAKY_SLOPE);
    let p = b.conv(&format!("{name}.project"), d, out, 1)?;
    let cin = match b.shape(x) {
        Shape::Map { channels, .. } => channels,
        Shape::Vector(_) => unreachable!("blocks only see feature maps"),
    };
    let skip = if cin == out {
        x
    } else {
        b.conv(&format!("{name}.skip"), x, out, 1)?
    };
    Ok(b.add(&format!("{name}.add"), p, skip)?)
}

/// Builds the network. The node named `logits` precedes the softmax head.
pub fn build_segnet(variant: SegVariant, seed: u64) -> Result<LayerGraph> {
    let w = SegnetWidths::for_variant(variant);
    let mut b = GraphBuilder::new();
    let x = b.input("image", Shape::Map { channels: 1, size: None });
    let mut skips = Vec::with_capacity(5);
    let mut h = x;
    for i in 0..5 {
        if i > 0 {
            h = b.maxpool2(&format!("down{}.pool", i + 1), h)?;
        }
        h = block(&mut b, &format!("down{}", i + 1), h, w.expand[i], w.output[i])?;
        skips.push(h);
    }
    for j in 0..4 {
        let name = format!("up{}", j + 1);
        let u = b.upsample2(&format!("{name}.upsample"), h)?;
        let cat = b.concat(&format!("{name}.concat"), u, skips[3 - j])?;
        h = block(&mut b, &name, cat, w.expand[5 + j], w.output[5 + j])?;
    }
    let logits = b.conv("logits", h, NUM_CLASSES, 1)?;
    let out = b.softmax("probs", logits)?;
    Ok(b.build(out, seed)?)
}

/// Node id of the pre-softmax logits, where training seeds cross-entropy.
pub fn logits_node(net: &LayerGraph) -> Result<NodeId> {
    net.nodes()
        .iter()
        .position(|n| n.name == "logits")
        .ok_or_else(|| Error::Config("graph has no `logits` node".into()))
}

pub fn frame_tensor(frame: &Frame) -> Tensor {
    let data = frame.pixels().iter().map(|&p| p as f64 / 255.0).collect();
    Tensor::from_vec(&[1, 1, frame.height(), frame.width()], data).expect("frame dims")
}

/// Per-pixel argmax over the class channels of an `(1, 4, H, W)` tensor;
/// ties go to the lowest class index.
pub fn argmax_classes(probs: &Tensor) -> Result<SegmentationMap> {
    let (n, c, h, w) = probs.nchw()?;
    if n != 1 || c != NUM_CLASSES {
        return Err(Error::Dimension(format!("expected (1, 4, H, W) probabilities, got {:?}", probs.dims())));
    }
    let plane = h * w;
    let d = probs.data();
    let classes = (0..plane)
        .map(|i| {
            let mut best = 0;
            for k in 1..NUM_CLASSES {
                if d[k * plane + i] > d[best * plane + i] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    SegmentationMap::new(w, h, classes)
}

/// Segments a frame whose sides are multiples of [`DIM_MULTIPLE`].
pub fn segment(net: &LayerGraph, frame: &Frame) -> Result<SegmentationMap> {
    if frame.width() % DIM_MULTIPLE != 0 || frame.height() % DIM_MULTIPLE != 0 {
        return Err(Error::Dimension(format!(
            "segmentation input {}x{} is not a multiple of {DIM_MULTIPLE}",
            frame.width(),
            frame.height()
        )));
    }
    let probs = net.forward(&[&frame_tensor(frame)])?;
    argmax_classes(&probs)
}

/// Zero-pads on the right and bottom so both sides are multiples of
/// `multiple`.
pub fn pad_frame(frame: &Frame, multiple: usize) -> Frame {
    let pw = frame.width().div_ceil(multiple) * multiple;
    let ph = frame.height().div_ceil(multiple) * multiple;
    if (pw, ph) == (frame.width(), frame.height()) {
        return frame.clone();
    }
    Frame::from_fn(pw, ph, frame.index(), |x, y| {
        if x < frame.width() && y < frame.height() {
            frame.get(x, y)
        } else {
            0
        }
    })
    .expect("padded dims are positive")
}

/// Pads, segments and crops the result back to the frame's size.
pub fn segment_padded(net: &LayerGraph, frame: &Frame, multiple: usize) -> Result<SegmentationMap> {
    if multiple == 0 || multiple % DIM_MULTIPLE != 0 {
        return Err(Error::Config(format!("pad multiple {multiple} is not a multiple of {DIM_MULTIPLE}")));
    }
    let seg = segment(net, &pad_frame(frame, multiple))?;
    if (seg.width(), seg.height()) == (frame.width(), frame.height()) {
        return Ok(seg);
    }
    seg.crop(crate::types::PixelRect::full(frame.width(), frame.height()))
}

pub fn save_segnet(net: &LayerGraph, variant: SegVariant, path: &Path) -> Result<()> {
    let tag = WeightEntry::tag(format!("network:{}", network_name(variant)));
    Ok(save_weights(net, path, &[tag])?)
}

/// Loads a segmentation network, recovering the variant from the file's tag.
pub fn load_segnet(path: &Path) -> Result<(LayerGraph, SegVariant)> {
    let entries = read_entries(std::io::BufReader::new(std::fs::File::open(path)?))?;
    let variant = [SegVariant::S, SegVariant::L]
        .into_iter()
        .find(|v| {
            let tag = format!("network:{}", network_name(*v));
            entries.iter().any(|e| e.name == tag)
        })
        .ok_or_else(|| Error::Data(format!("{} is not a segmentation network file", path.display())))?;
    let mut net = build_segnet(variant, 0)?;
    apply_entries(&mut net, entries)?;
    Ok((net, variant))
}
