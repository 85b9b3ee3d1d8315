//! Per-frame state machine: event map → ROI prediction → extrapolate,
//! segment the ROI crop, or fall back to the full frame.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use edar_nn::LayerGraph;
use serde::{Deserialize, Serialize};

use crate::edge::seg_edge_map;
use crate::error::{Error, Result};
use crate::event::{downsample_by_2, event_map};
use crate::pupil::{miou, pupil_center, pupil_error, pupil_stats, PupilStats};
use crate::roinet::{decide_mode, predict_roi, Mode, RoiPrediction};
use crate::segnet::segment_padded;
use crate::types::{crop, foreground_bbox, roi_to_pixels, BinaryMap, Frame, PipelineConfig, Roi, SegmentationMap};

#[derive(Clone, Copy)]
pub struct Networks<'a> {
    /// `None` runs every frame at full resolution.
    pub roinet: Option<&'a LayerGraph>,
    pub segnet: &'a LayerGraph,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub modes: BTreeMap<Mode, u64>,
    pub processed_pixels: u64,
    pub frames: u64,
}

/// Wall-clock spent per stage. Kept apart from everything that must be
/// reproducible.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimes {
    pub event: Duration,
    pub roi: Duration,
    pub segment: Duration,
    pub edge: Duration,
}

impl StageTimes {
    fn add(&mut self, o: &StageTimes) {
        self.event += o.event;
        self.roi += o.roi;
        self.segment += o.segment;
        self.edge += o.edge;
    }

    pub fn total(&self) -> Duration {
        self.event + self.roi + self.segment + self.edge
    }
}

/// Feedback carried from one frame to the next. All fields describe the
/// most recently processed frame.
#[derive(Clone, Debug, Default)]
pub struct PipelineState {
    pub prev_frame: Option<Frame>,
    pub prev_seg: Option<SegmentationMap>,
    /// `None` when the last segmentation held no foreground.
    pub prev_roi: Option<Roi>,
    pub prev_edge: Option<BinaryMap>,
    pub counters: Counters,
}

#[derive(Clone, Debug)]
pub struct FrameOutput {
    pub index: u64,
    pub seg: SegmentationMap,
    pub mode: Mode,
    /// ROI as the network produced it; the full frame when no prediction
    /// was made.
    pub roi: Roi,
    pub prediction: Option<RoiPrediction>,
    pub processed_pixels: usize,
    pub times: StageTimes,
}

impl PipelineState {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_dims(&self, frame: &Frame) -> Result<()> {
        match &self.prev_frame {
            Some(p) if (p.width(), p.height()) != (frame.width(), frame.height()) => Err(Error::Dimension(format!(
                "frame {} is {}x{}, sequence is {}x{}",
                frame.index(),
                frame.width(),
                frame.height(),
                p.width(),
                p.height()
            ))),
            _ => Ok(()),
        }
    }
}

fn full_resolution(frame: &Frame, cfg: &PipelineConfig, segnet: &LayerGraph, times: &mut StageTimes) -> Result<SegmentationMap> {
    let t = Instant::now();
    let seg = segment_padded(segnet, frame, cfg.roi_pad_multiple)?;
    times.segment += t.elapsed();
    Ok(seg)
}

/// Advances the pipeline by one frame.
pub fn process_frame(state: &mut PipelineState, frame: &Frame, cfg: &PipelineConfig, nets: Networks<'_>) -> Result<FrameOutput> {
    state.check_dims(frame)?;
    let mut times = StageTimes::default();
    let area = frame.area();

    let ready = match (&state.prev_frame, &state.prev_seg, &state.prev_roi, &state.prev_edge, nets.roinet) {
        (Some(pf), Some(ps), Some(pr), Some(pe), Some(net)) if cfg.auto_roi => Some((pf, ps, pr, pe, net)),
        _ => None,
    };

    let (seg, mode, roi, prediction, processed) = match ready {
        None => {
            let seg = full_resolution(frame, cfg, nets.segnet, &mut times)?;
            (seg, Mode::FullResolution, Roi::FULL, None, area)
        }
        Some((prev_frame, prev_seg, prev_roi, prev_edge, roinet)) => {
            let t = Instant::now();
            let events = event_map(prev_frame, frame, cfg.sigma, cfg.epsilon_div)?;
            let ev_ds = downsample_by_2(&events);
            let ed_ds = downsample_by_2(prev_edge);
            times.event += t.elapsed();

            let t = Instant::now();
            let pred = predict_roi(roinet, &ev_ds, &ed_ds, prev_roi, &events, cfg.gamma)?;
            times.roi += t.elapsed();

            match decide_mode(&pred, cfg.gamma) {
                Mode::Extrapolate => (prev_seg.clone(), Mode::Extrapolate, pred.roi, Some(pred), 0),
                Mode::RoiSegment => {
                    let t = Instant::now();
                    let rect = roi_to_pixels(&pred.roi.clamped(), frame.width(), frame.height());
                    let patch = segment_padded(nets.segnet, &crop(frame, rect)?, cfg.roi_pad_multiple)?;
                    let mut canvas = SegmentationMap::background(frame.width(), frame.height());
                    canvas.paste(&patch, rect.x0, rect.y0)?;
                    times.segment += t.elapsed();
                    (canvas, Mode::RoiSegment, pred.roi, Some(pred), rect.area())
                }
                Mode::FullResolution => {
                    let seg = full_resolution(frame, cfg, nets.segnet, &mut times)?;
                    (seg, Mode::FullResolution, pred.roi, Some(pred), area)
                }
            }
        }
    };

    match mode {
        Mode::Extrapolate => {
            // The map is unchanged, so the edge feedback is too.
            state.prev_roi = Some(roi.clamped());
        }
        Mode::RoiSegment => {
            let t = Instant::now();
            state.prev_edge = Some(seg_edge_map(&seg));
            times.edge += t.elapsed();
            state.prev_roi = Some(roi.clamped());
            state.prev_seg = Some(seg.clone());
        }
        Mode::FullResolution => {
            let t = Instant::now();
            state.prev_edge = Some(seg_edge_map(&seg));
            times.edge += t.elapsed();
            state.prev_roi = foreground_bbox(&seg);
            state.prev_seg = Some(seg.clone());
        }
    }
    state.prev_frame = Some(frame.clone());
    *state.counters.modes.entry(mode).or_default() += 1;
    state.counters.processed_pixels += processed as u64;
    state.counters.frames += 1;

    Ok(FrameOutput {
        index: frame.index(),
        seg,
        mode,
        roi,
        prediction,
        processed_pixels: processed,
        times,
    })
}

/// Per-frame ground truth used for scoring.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub labels: SegmentationMap,
    pub pupil: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean_miou: f64,
    pub pupil: PupilStats,
}

/// Scores predictions against ground truth, frame by frame in order.
pub fn evaluate(preds: &[SegmentationMap], truth: &[GroundTruth]) -> Result<Metrics> {
    if preds.len() != truth.len() {
        return Err(Error::Data(format!("{} predictions for {} ground-truth frames", preds.len(), truth.len())));
    }
    if preds.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let mut sum = 0.0;
    let mut errors = Vec::with_capacity(preds.len());
    for (p, t) in preds.iter().zip(truth) {
        sum += miou(p, &t.labels)?;
        errors.push(pupil_error(pupil_center(p), t.pupil));
    }
    Ok(Metrics {
        mean_miou: sum / preds.len() as f64,
        pupil: pupil_stats(&errors),
    })
}

/// Everything reproducible about a run. Wall-clock lives in
/// [`TimingReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub frames: u64,
    pub width: usize,
    pub height: usize,
    pub modes: BTreeMap<String, u64>,
    pub processed_pixels: u64,
    pub mean_processed_fraction: f64,
    pub pixel_speedup: f64,
    pub metrics: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingReport {
    pub total_s: f64,
    /// Seconds per stage: event, roi, segment, edge.
    pub stages_s: BTreeMap<String, f64>,
    /// Share of total time per stage.
    pub stage_fractions: BTreeMap<String, f64>,
}

impl TimingReport {
    pub fn from_times(t: &StageTimes) -> Self {
        let stages: BTreeMap<String, f64> = [("event", t.event), ("roi", t.roi), ("segment", t.segment), ("edge", t.edge)]
            .into_iter()
            .map(|(k, d)| (k.to_string(), d.as_secs_f64()))
            .collect();
        let total = t.total().as_secs_f64();
        let fractions = stages
            .iter()
            .map(|(k, &v)| (k.clone(), if total > 0.0 { v / total } else { 0.0 }))
            .collect();
        Self {
            total_s: total,
            stages_s: stages,
            stage_fractions: fractions,
        }
    }
}

pub struct SequenceRun {
    pub outputs: Vec<FrameOutput>,
    pub report: SequenceReport,
    pub timing: TimingReport,
}

pub fn pixel_speedup_proxy(report: &SequenceReport) -> f64 {
    let full = (report.width * report.height) as f64 * report.frames as f64;
    if report.processed_pixels == 0 {
        f64::INFINITY
    } else {
        full / report.processed_pixels as f64
    }
}

/// Streams frames through [`process_frame`] from a fresh state.
pub fn run_sequence(frames: &[Frame], cfg: &PipelineConfig, nets: Networks<'_>, truth: Option<&[GroundTruth]>) -> Result<SequenceRun> {
    cfg.validate()?;
    let first = frames.first().ok_or_else(|| Error::Data("empty frame sequence".into()))?;
    if let Some(t) = truth {
        if t.len() != frames.len() {
            return Err(Error::Data(format!("{} frames but {} ground-truth entries", frames.len(), t.len())));
        }
    }
    let mut state = PipelineState::new();
    let mut outputs = Vec::with_capacity(frames.len());
    let mut times = StageTimes::default();
    let mut fraction_sum = 0.0;
    for f in frames {
        let out = process_frame(&mut state, f, cfg, nets)?;
        times.add(&out.times);
        fraction_sum += out.processed_pixels as f64 / f.area() as f64;
        outputs.push(out);
    }
    let metrics = match truth {
        Some(t) => {
            let segs: Vec<SegmentationMap> = outputs.iter().map(|o| o.seg.clone()).collect();
            Some(evaluate(&segs, t)?)
        }
        None => None,
    };
    let c = &state.counters;
    let mut report = SequenceReport {
        frames: c.frames,
        width: first.width(),
        height: first.height(),
        modes: Mode::ALL
            .iter()
            .map(|m| (m.as_str().to_string(), c.modes.get(m).copied().unwrap_or(0)))
            .collect(),
        processed_pixels: c.processed_pixels,
        mean_processed_fraction: fraction_sum / c.frames as f64,
        pixel_speedup: 0.0,
        metrics,
    };
    report.pixel_speedup = pixel_speedup_proxy(&report);
    Ok(SequenceRun {
        outputs,
        report,
        timing: TimingReport::from_times(&times),
    })
}
