//! Pipeline behaviour with hand-set networks: a predictor that always
//! returns one fixed ROI and a segmenter that labels every pixel sclera.

use edar_core::pipeline::{pixel_speedup_proxy, process_frame, run_sequence, GroundTruth, Networks, PipelineState};
use edar_core::roinet::{build_roinet, Mode, RoinetConfig};
use edar_core::segnet::build_segnet;
use edar_core::synth::{render_sequence, EyeSceneParams, TrajectorySpec};
use edar_core::types::{Frame, PipelineConfig, SegVariant};
use edar_nn::{LayerGraph, Tensor};
use proptest::prelude::*;

fn set_only(net: &mut LayerGraph, name: &str, values: Vec<f64>) {
    let names = net.params().names().to_vec();
    for (n, t) in names.iter().zip(net.params_mut().tensors_mut()) {
        if n == name {
            *t = Tensor::from_vec(t.dims(), values.clone()).unwrap();
        } else {
            t.fill(0.0);
        }
    }
}

fn fixed_roinet(w: usize, h: usize, roi: [f64; 4]) -> LayerGraph {
    let mut net = build_roinet(&RoinetConfig::for_frame(w, h), 0).unwrap();
    set_only(&mut net, "fc2.bias", roi.iter().map(|p| (p / (1.0 - p)).ln()).collect());
    net
}

fn all_sclera() -> LayerGraph {
    let mut net = build_segnet(SegVariant::S, 0).unwrap();
    set_only(&mut net, "logits.bias", vec![0.0, 4.0, 0.0, 0.0]);
    net
}

fn moving(n: usize, seed: u64) -> Vec<Frame> {
    render_sequence(&EyeSceneParams::centered(64, 48, seed), n)
        .unwrap()
        .into_iter()
        .map(|s| s.frame)
        .collect()
}

#[test]
fn static_scene_extrapolates_every_frame_after_the_first() {
    let mut p = EyeSceneParams::centered(64, 48, 1);
    p.trajectory = TrajectorySpec::stationary();
    p.noise_sigma = 0.0;
    let frames: Vec<Frame> = render_sequence(&p, 12).unwrap().into_iter().map(|s| s.frame).collect();
    let (roi, seg) = (fixed_roinet(64, 48, [0.2, 0.2, 0.8, 0.8]), all_sclera());
    let run = run_sequence(&frames, &PipelineConfig::default(), Networks { roinet: Some(&roi), segnet: &seg }, None).unwrap();
    assert_eq!(run.outputs[0].mode, Mode::FullResolution);
    for o in &run.outputs[1..] {
        assert_eq!(o.mode, Mode::Extrapolate);
        assert_eq!(o.seg, run.outputs[0].seg);
    }
    assert_eq!(run.report.modes["Extrapolate"], 11);
}

#[test]
fn gamma_zero_never_extrapolates() {
    let frames = moving(10, 2);
    let (roi, seg) = (fixed_roinet(64, 48, [0.25, 0.25, 0.75, 0.75]), all_sclera());
    let cfg = PipelineConfig {
        gamma: 0.0,
        ..Default::default()
    };
    let run = run_sequence(&frames, &cfg, Networks { roinet: Some(&roi), segnet: &seg }, None).unwrap();
    assert_eq!(run.report.modes["Extrapolate"], 0);
    assert_eq!(run.report.modes["RoiSegment"], 9);
    // 32x24 crop of a 64x48 frame after the full first frame.
    assert_eq!(run.report.processed_pixels, 64 * 48 + 9 * 32 * 24);
    assert_eq!(pixel_speedup_proxy(&run.report), 10.0 * 64.0 * 48.0 / run.report.processed_pixels as f64);
}

#[test]
fn roi_segment_leaves_background_outside_crop() {
    let frames = moving(2, 3);
    let (roi, seg) = (fixed_roinet(64, 48, [0.25, 0.25, 0.75, 0.75]), all_sclera());
    let cfg = PipelineConfig {
        gamma: 0.0,
        ..Default::default()
    };
    let nets = Networks { roinet: Some(&roi), segnet: &seg };
    let mut state = PipelineState::new();
    process_frame(&mut state, &frames[0], &cfg, nets).unwrap();
    let out = process_frame(&mut state, &frames[1], &cfg, nets).unwrap();
    assert_eq!(out.mode, Mode::RoiSegment);
    for y in 0..48 {
        for x in 0..64 {
            let inside = (16..48).contains(&x) && (12..36).contains(&y);
            assert_eq!(out.seg.get(x, y), inside as u8, "({x},{y})");
        }
    }
}

#[test]
fn report_is_deterministic_and_scored() {
    let sf = render_sequence(&EyeSceneParams::sample(64, 48, 4), 8).unwrap();
    let frames: Vec<Frame> = sf.iter().map(|s| s.frame.clone()).collect();
    let truth: Vec<GroundTruth> = sf
        .iter()
        .map(|s| GroundTruth {
            labels: s.labels.clone(),
            pupil: s.pupil_center,
        })
        .collect();
    let (roi, seg) = (fixed_roinet(64, 48, [0.1, 0.2, 0.9, 0.8]), all_sclera());
    let nets = Networks { roinet: Some(&roi), segnet: &seg };
    let a = run_sequence(&frames, &PipelineConfig::default(), nets, Some(&truth)).unwrap();
    let b = run_sequence(&frames, &PipelineConfig::default(), nets, Some(&truth)).unwrap();
    assert_eq!(a.report, b.report);
    let m = a.report.metrics.as_ref().unwrap();
    assert!(m.mean_miou > 0.0 && m.mean_miou < 1.0);
    assert_eq!(m.pupil.count + m.pupil.mismatched, 8);
}

#[test]
fn full_resolution_configuration_processes_everything() {
    let frames = moving(6, 5);
    let (roi, seg) = (fixed_roinet(64, 48, [0.25, 0.25, 0.75, 0.75]), all_sclera());
    let cfg = PipelineConfig {
        auto_roi: false,
        ..Default::default()
    };
    let run = run_sequence(&frames, &cfg, Networks { roinet: Some(&roi), segnet: &seg }, None).unwrap();
    assert_eq!(run.report.mean_processed_fraction, 1.0);
    assert_eq!(run.report.modes["FullResolution"], 6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn extrapolation_is_monotone_in_gamma(seed in 0u64..500, g1 in 0.0f64..0.2, g2 in 0.0f64..0.2) {
        let frames = moving(10, seed);
        let (roi, seg) = (fixed_roinet(64, 48, [0.2, 0.2, 0.8, 0.8]), all_sclera());
        let nets = Networks { roinet: Some(&roi), segnet: &seg };
        let run = |gamma| {
            let cfg = PipelineConfig { gamma, ..Default::default() };
            run_sequence(&frames, &cfg, nets, None).unwrap().report
        };
        let (lo, hi) = (run(g1.min(g2)), run(g1.max(g2)));
        prop_assert!(lo.modes["Extrapolate"] <= hi.modes["Extrapolate"]);
        for r in [&lo, &hi] {
            prop_assert_eq!(r.modes.values().sum::<u64>(), 10);
            prop_assert!(r.mean_processed_fraction > 0.0 && r.mean_processed_fraction <= 1.0);
        }
    }
}
