//! ROI prediction network, the feasibility gate and the per-frame mode
//! decision.

use std::path::Path;

use edar_nn::io::{apply_entries, read_entries};
use edar_nn::{save_weights, GraphBuilder, LayerGraph, Shape, Tensor, WeightEntry};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::event_density;
use crate::types::{roi_is_feasible, roi_to_pixels, BinaryMap, Roi};

pub const NETWORK_TAG: &str = "network:roinet-v1";
const META_INPUT: &str = "roinet:input_hw";
const META_WIDTHS: &str = "roinet:widths";

/// Architecture of the predictor. The flatten layer ties a trained model to
/// one input resolution, so it is part of the configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoinetConfig {
    pub channels: [usize; 3],
    pub fc_hidden: usize,
    /// Height and width of the (already downsampled) input maps.
    pub input_hw: (usize, usize),
}

impl RoinetConfig {
    /// Default widths for frames of the given full resolution.
    pub fn for_frame(width: usize, height: usize) -> Self {
        Self {
            channels: [8, 16, 16],
            fc_hidden: 64,
            input_hw: (height.div_ceil(2), width.div_ceil(2)),
        }
    }
}

/// Builds `[conv3x3 -> leaky ReLU -> maxpool] x3 -> flatten -> concat(prev
/// roi) -> dense -> leaky ReLU -> dense(4) -> sigmoid`.
///
/// Inputs: slot 0 is the `(N, 2, H, W)` event/edge stack, slot 1 the
/// `(N, 4)` previous ROI.
pub fn build_roinet(cfg: &RoinetConfig, seed: u64) -> Result<LayerGraph> {
    if cfg.channels.contains(&0) || cfg.fc_hidden == 0 || cfg.input_hw.0 == 0 || cfg.input_hw.1 == 0 {
        return Err(Error::Config(format!("invalid roinet configuration {cfg:?}")));
    }
    let mut b = GraphBuilder::new();
    let maps = b.input(
        "maps",
        Shape::Map {
            channels: 2,
            size: Some(cfg.input_hw),
        },
    );
    let prev = b.input("prev_roi", Shape::Vector(4));
    let mut h = maps;
    for (i, &c) in cfg.channels.iter().enumerate() {
        h = b.conv(&format!("conv{}", i + 1), h, c, 3)?;
        h = b.leaky_relu(&format!("conv{}_act", i + 1), h, crate::segnet::LEAKY_SLOPE);
        h = b.maxpool2(&format!("pool{}", i + 1), h)?;
    }
    let flat = b.flatten("flatten", h)?;
    let joined = b.concat("with_prev", flat, prev)?;
    let f1 = b.dense("fc1", joined, cfg.fc_hidden)?;
    let f1 = b.leaky_relu("fc1_act", f1, crate::segnet::LEAKY_SLOPE);
    let f2 = b.dense("fc2", f1, 4)?;
    let out = b.sigmoid("roi", f2);
    Ok(b.build(out, seed)?)
}

/// Packs the two half-resolution maps and the previous ROI as network
/// inputs.
pub fn roinet_inputs(events_ds: &BinaryMap, edges_ds: &BinaryMap, prev_roi: &Roi) -> Result<(Tensor, Tensor)> {
    let (w, h) = (events_ds.width(), events_ds.height());
    if (edges_ds.width(), edges_ds.height()) != (w, h) {
        return Err(Error::Dimension(format!(
            "event map {w}x{h} vs edge map {}x{}",
            edges_ds.width(),
            edges_ds.height()
        )));
    }
    let data = events_ds
        .bits()
        .iter()
        .chain(edges_ds.bits())
        .map(|&b| b as f64)
        .collect();
    let maps = Tensor::from_vec(&[1, 2, h, w], data)?;
    let prev = Tensor::from_vec(&[1, 4], prev_roi.as_array().to_vec())?;
    Ok((maps, prev))
}

/// Raw (unclamped, possibly infeasible) network output.
pub fn infer_roi(net: &LayerGraph, events_ds: &BinaryMap, edges_ds: &BinaryMap, prev_roi: &Roi) -> Result<Roi> {
    let (maps, prev) = roinet_inputs(events_ds, edges_ds, prev_roi)?;
    if let Some(Shape::Map { size: Some(hw), .. }) = net.inputs().first().map(|s| s.shape) {
        if hw != (maps.dims()[2], maps.dims()[3]) {
            return Err(Error::Dimension(format!(
                "roinet trained for {}x{} maps, got {}x{}",
                hw.1,
                hw.0,
                maps.dims()[3],
                maps.dims()[2]
            )));
        }
    }
    let out = net.forward(&[&maps, &prev])?;
    let d = out.data();
    Ok(Roi::new(d[0], d[1], d[2], d[3]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RoiPrediction {
    /// Network output as produced, before clamping.
    pub roi: Roi,
    pub feasible: bool,
    /// Pixels covered by the clamped ROI on the full-resolution frame.
    pub area_pixels: usize,
    /// Event density inside the clamped ROI; 0 when the ROI is infeasible
    /// or covers no pixel.
    pub event_density: f64,
    pub extrapolate: bool,
}

/// Evaluates feasibility and event density of a raw prediction against the
/// full-resolution event map.
pub fn assess_roi(roi: Roi, events_full: &BinaryMap, gamma: f64) -> Result<RoiPrediction> {
    let feasible = roi_is_feasible(&roi);
    let (area_pixels, density) = if feasible {
        let rect = roi_to_pixels(&roi.clamped(), events_full.width(), events_full.height());
        if rect.is_empty() {
            (0, 0.0)
        } else {
            (rect.area(), event_density(events_full, rect)?)
        }
    } else {
        (0, 0.0)
    };
    Ok(RoiPrediction {
        roi,
        feasible,
        area_pixels,
        event_density: density,
        extrapolate: density < gamma,
    })
}

pub fn predict_roi(
    net: &LayerGraph,
    events_ds: &BinaryMap,
    edges_ds: &BinaryMap,
    prev_roi: &Roi,
    events_full: &BinaryMap,
    gamma: f64,
) -> Result<RoiPrediction> {
    assess_roi(infer_roi(net, events_ds, edges_ds, prev_roi)?, events_full, gamma)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    Extrapolate,
    RoiSegment,
    FullResolution,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Extrapolate, Mode::RoiSegment, Mode::FullResolution];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Extrapolate => "Extrapolate",
            Mode::RoiSegment => "RoiSegment",
            Mode::FullResolution => "FullResolution",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown mode `{s}`")))
    }
}

/// An infeasible ROI, or one that rounds to no pixels, falls back to full
/// resolution; otherwise low activity extrapolates.
pub fn decide_mode(pred: &RoiPrediction, gamma: f64) -> Mode {
    if !pred.feasible || pred.area_pixels == 0 {
        Mode::FullResolution
    } else if pred.event_density < gamma {
        Mode::Extrapolate
    } else {
        Mode::RoiSegment
    }
}

pub fn save_roinet(net: &LayerGraph, cfg: &RoinetConfig, path: &Path) -> Result<()> {
    let meta = |name: &str, vals: &[usize]| WeightEntry {
        name: name.to_string(),
        dims: vec![vals.len()],
        data: vals.iter().map(|&v| v as f32).collect(),
    };
    let extra = [
        WeightEntry::tag(NETWORK_TAG),
        meta(META_INPUT, &[cfg.input_hw.0, cfg.input_hw.1]),
        meta(META_WIDTHS, &[cfg.channels[0], cfg.channels[1], cfg.channels[2], cfg.fc_hidden]),
    ];
    Ok(save_weights(net, path, &extra)?)
}

pub fn load_roinet(path: &Path) -> Result<(LayerGraph, RoinetConfig)> {
    let entries = read_entries(std::io::BufReader::new(std::fs::File::open(path)?))?;
    if !entries.iter().any(|e| e.name == NETWORK_TAG) {
        return Err(Error::Data(format!("{} is not a roinet weight file", path.display())));
    }
    let meta = |name: &str, len: usize| -> Result<Vec<usize>> {
        let e = entries
            .iter()
            .find(|e| e.name == name && e.data.len() == len)
            .ok_or_else(|| Error::Data(format!("roinet file lacks `{name}`")))?;
        Ok(e.data.iter().map(|&v| v as usize).collect())
    };
    let hw = meta(META_INPUT, 2)?;
    let widths = meta(META_WIDTHS, 4)?;
    let cfg = RoinetConfig {
        channels: [widths[0], widths[1], widths[2]],
        fc_hidden: widths[3],
        input_hw: (hw[0], hw[1]),
    };
    let mut net = build_roinet(&cfg, 0)?;
    apply_entries(&mut net, entries)?;
    Ok((net, cfg))
}
