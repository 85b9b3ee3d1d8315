//! Training loops for both networks and ROI fine-tuning of the segmenter.
//!
//! Mini-batch Adam with per-sample gradients averaged in a fixed order, so a
//! seed fully determines the trajectory regardless of thread count.

use edar_nn::loss::{cross_entropy_logits, cross_entropy_probs, mse};
use edar_nn::{AdamState, Gradients, LayerGraph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edge::seg_edge_map;
use crate::error::{Error, Result};
use crate::event::{downsample_by_2, event_map};
use crate::roinet::{infer_roi, roinet_inputs};
use crate::segnet::{frame_tensor, logits_node, pad_frame, DIM_MULTIPLE};
use crate::types::{crop, foreground_bbox, roi_is_feasible, roi_to_pixels, BinaryMap, Frame, PipelineConfig, PixelRect, Roi, SegmentationMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Share of samples held out for model selection.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::segnet()
    }
}

impl TrainConfig {
    pub fn segnet() -> Self {
        Self {
            epochs: 250,
            batch: 4,
            lr: 1e-3,
            val_fraction: 0.2,
            seed: 0,
        }
    }

    pub fn roinet() -> Self {
        Self {
            epochs: 100,
            batch: 8,
            ..Self::segnet()
        }
    }

    pub fn finetune() -> Self {
        Self {
            epochs: 100,
            lr: 1e-4,
            ..Self::segnet()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("epochs and batch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must be in [0, 1), got {}", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when nothing was held out.
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossCurve {
    pub epochs: Vec<EpochLoss>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, val));
        }
        s
    }
}

/// One sequence of frames with per-pixel labels.
#[derive(Clone, Debug)]
pub struct LabeledSequence {
    pub frames: Vec<Frame>,
    pub labels: Vec<SegmentationMap>,
}

impl LabeledSequence {
    pub fn new(frames: Vec<Frame>, labels: Vec<SegmentationMap>) -> Result<Self> {
        if frames.len() != labels.len() {
            return Err(Error::Data(format!("{} frames, {} label maps", frames.len(), labels.len())));
        }
        for (f, l) in frames.iter().zip(&labels) {
            if (f.width(), f.height()) != (l.width(), l.height()) {
                return Err(Error::Dimension(format!("frame {} does not match its labels", f.index())));
            }
        }
        Ok(Self { frames, labels })
    }
}

/// A segmentation example padded to the network's dimension multiple.
#[derive(Clone, Debug)]
pub struct SegSample {
    pub frame: Frame,
    pub labels: SegmentationMap,
}

impl SegSample {
    /// Pads image (zeros) and labels (background) on the right and bottom.
    pub fn padded(frame: &Frame, labels: &SegmentationMap, multiple: usize) -> Result<Self> {
        let frame = pad_frame(frame, multiple);
        let mut canvas = SegmentationMap::background(frame.width(), frame.height());
        canvas.paste(labels, 0, 0)?;
        Ok(Self { frame, labels: canvas })
    }
}

#[derive(Clone, Debug)]
pub struct RoiSample {
    pub events_ds: BinaryMap,
    pub edges_ds: BinaryMap,
    pub prev_roi: Roi,
    pub target: Roi,
}

pub fn seg_samples(seqs: &[LabeledSequence]) -> Result<Vec<SegSample>> {
    seqs.iter()
        .flat_map(|s| s.frames.iter().zip(&s.labels))
        .map(|(f, l)| SegSample::padded(f, l, DIM_MULTIPLE))
        .collect()
}

/// Predictor examples from consecutive ground-truth frames, each paired with
/// its position in the sequence. Frames without foreground (blinks) yield no
/// example and cannot serve as the previous frame. The first frame is
/// paired with itself: no events, its own ROI as the previous one.
fn indexed_roi_samples(seq: &LabeledSequence, sigma: f64, epsilon_div: f64) -> Result<Vec<(usize, RoiSample)>> {
    let mut out = Vec::new();
    for t in 0..seq.frames.len() {
        let prev = t.saturating_sub(1);
        let (Some(target), Some(prev_roi)) = (foreground_bbox(&seq.labels[t]), foreground_bbox(&seq.labels[prev])) else {
            continue;
        };
        let events = event_map(&seq.frames[prev], &seq.frames[t], sigma, epsilon_div)?;
        out.push((
            t,
            RoiSample {
                events_ds: downsample_by_2(&events),
                edges_ds: downsample_by_2(&seg_edge_map(&seq.labels[prev])),
                prev_roi,
                target,
            },
        ));
    }
    Ok(out)
}

pub fn roi_samples(seqs: &[LabeledSequence], sigma: f64, epsilon_div: f64) -> Result<Vec<RoiSample>> {
    let mut out = Vec::new();
    for s in seqs {
        out.extend(indexed_roi_samples(s, sigma, epsilon_div)?.into_iter().map(|(_, r)| r));
    }
    Ok(out)
}

/// Crops driven by the frozen predictor. An infeasible or empty prediction
/// keeps the full frame, as the pipeline would.
pub fn finetune_samples(roinet: &LayerGraph, seqs: &[LabeledSequence], cfg: &PipelineConfig) -> Result<Vec<SegSample>> {
    let mut out = Vec::new();
    for s in seqs {
        for (t, r) in indexed_roi_samples(s, cfg.sigma, cfg.epsilon_div)? {
            let (frame, labels) = (&s.frames[t], &s.labels[t]);
            let roi = infer_roi(roinet, &r.events_ds, &r.edges_ds, &r.prev_roi)?;
            let rect = if roi_is_feasible(&roi) {
                roi_to_pixels(&roi.clamped(), frame.width(), frame.height())
            } else {
                PixelRect::full(frame.width(), frame.height())
            };
            let rect = if rect.is_empty() { PixelRect::full(frame.width(), frame.height()) } else { rect };
            out.push(SegSample::padded(&crop(frame, rect)?, &labels.crop(rect)?, cfg.roi_pad_multiple)?);
        }
    }
    Ok(out)
}

/// Seeded 80/20-style split: `(train, validation)` sample indices.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5911_7000));
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Generic loop: `step` returns a sample's loss and gradients, `eval` its
/// loss alone. Keeps the weights of the epoch with the lowest validation
/// loss (training loss when nothing is held out).
fn fit<S: Sync>(
    net: &mut LayerGraph,
    samples: &[S],
    cfg: &TrainConfig,
    step: impl Fn(&LayerGraph, &S) -> Result<(f64, Gradients)> + Sync,
    eval: impl Fn(&LayerGraph, &S) -> Result<f64> + Sync,
) -> Result<LossCurve> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    let (mut train, val) = split_indices(samples.len(), cfg.val_fraction, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(net.params().tensors(), cfg.lr);
    let mut curve = LossCurve::default();
    let mut best: Option<(f64, Vec<Tensor>)> = None;

    for epoch in 1..=cfg.epochs {
        train.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(train.len());
        for batch in train.chunks(cfg.batch) {
            let model = &*net;
            let results = batch
                .par_iter()
                .map(|&i| step(model, &samples[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut total = Gradients::zeros_like(net);
            for (loss, g) in &results {
                losses.push(*loss);
                total.accumulate(g)?;
            }
            total.scale(1.0 / batch.len() as f64);
            adam.step(net.params_mut().tensors_mut(), &total.params)?;
        }
        let train_loss = mean(&losses);
        let val_loss = if val.is_empty() {
            None
        } else {
            let model = &*net;
            let v = val.par_iter().map(|&i| eval(model, &samples[i])).collect::<Result<Vec<_>>>()?;
            Some(mean(&v))
        };
        if !train_loss.is_finite() {
            return Err(Error::Data(format!("training diverged at epoch {epoch}")));
        }
        // Pre-update losses are the only ones available without an extra
        // pass, so selection by training loss lags one epoch; fine for the
        // tiny sets that skip validation.
        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, net.params().tensors().to_vec()));
            curve.best_epoch = epoch;
        }
        curve.epochs.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
    }
    if let Some((_, params)) = best {
        net.params_mut().tensors_mut().clone_from_slice(&params);
    }
    Ok(curve)
}

fn seg_step(net: &LayerGraph, s: &SegSample) -> Result<(f64, Gradients)> {
    let lg = logits_node(net)?;
    let tape = net.forward_tape(&[&frame_tensor(&s.frame)])?;
    let logits = tape.value(lg).ok_or_else(|| Error::Config("logits not on tape".into()))?;
    let (loss, grad) = cross_entropy_logits(logits, s.labels.classes())?;
    Ok((loss, net.backward_from(&tape, lg, &grad)?))
}

fn seg_eval(net: &LayerGraph, s: &SegSample) -> Result<f64> {
    let probs = net.forward(&[&frame_tensor(&s.frame)])?;
    Ok(cross_entropy_probs(&probs, s.labels.classes())?)
}

fn roi_step(net: &LayerGraph, s: &RoiSample) -> Result<(f64, Gradients)> {
    let (maps, prev) = roinet_inputs(&s.events_ds, &s.edges_ds, &s.prev_roi)?;
    let tape = net.forward_tape(&[&maps, &prev])?;
    let target = Tensor::from_vec(&[1, 4], s.target.as_array().to_vec())?;
    let out = tape.output().ok_or_else(|| Error::Config("empty tape".into()))?;
    let (loss, grad) = mse(out, &target)?;
    Ok((loss, net.backward(&tape, &grad)?))
}

fn roi_eval(net: &LayerGraph, s: &RoiSample) -> Result<f64> {
    let (maps, prev) = roinet_inputs(&s.events_ds, &s.edges_ds, &s.prev_roi)?;
    let out = net.forward(&[&maps, &prev])?;
    let target = Tensor::from_vec(&[1, 4], s.target.as_array().to_vec())?;
    Ok(mse(&out, &target)?.0)
}

/// Per-pixel cross-entropy on full (padded) frames.
pub fn train_segnet(net: &mut LayerGraph, samples: &[SegSample], cfg: &TrainConfig) -> Result<LossCurve> {
    fit(net, samples, cfg, seg_step, seg_eval)
}

/// Mean squared error on the four normalized ROI coordinates.
pub fn train_roinet(net: &mut LayerGraph, samples: &[RoiSample], cfg: &TrainConfig) -> Result<LossCurve> {
    fit(net, samples, cfg, roi_step, roi_eval)
}

pub fn finetune_segnet_on_rois(
    segnet: &mut LayerGraph,
    roinet: &LayerGraph,
    seqs: &[LabeledSequence],
    pipeline: &PipelineConfig,
    cfg: &TrainConfig,
) -> Result<LossCurve> {
    let samples = finetune_samples(roinet, seqs, pipeline)?;
    train_segnet(segnet, &samples, cfg)
}
