use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use edar_core::energy::{self, CostTable, MappingScenario};
use edar_core::io::{
    format_trace, frame_file_name, list_pgm, read_frame_dir, read_segmentation, read_sequence_dir, read_truth_dir,
    sequence_dirs, write_segmentation, write_sequence_dir, TraceRow,
};
use edar_core::pipeline::{evaluate, run_sequence, GroundTruth, Networks, SequenceReport, StageTimes, TimingReport};
use edar_core::roinet::{build_roinet, load_roinet, save_roinet, RoinetConfig};
use edar_core::segnet::{build_segnet, load_segnet, network_name, save_segnet};
use edar_core::synth::{render_sequence, EyeSceneParams, TrajectorySpec};
use edar_core::train::{self, LabeledSequence, LossCurve};
use edar_core::types::{Frame, SegmentationMap};
use edar_nn::LayerGraph;

use crate::config::Config;
use crate::{CliError, CliResult};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Scene {
    /// Randomized geometry, appearance and motion.
    Sample,
    /// Centered eye with default motion.
    Centered,
    /// Centered eye that never moves or blinks.
    Static,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Number of sequences; more than one writes `seqNNN/` subdirectories.
    #[arg(long, default_value_t = 1)]
    sequences: usize,
    #[arg(long, default_value_t = 64)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, value_enum, default_value = "sample")]
    scene: Scene,
    /// Override the sensor noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,
}

pub fn synth(cfg: &Config, a: SynthArgs) -> CliResult<()> {
    if a.sequences == 0 || a.frames == 0 {
        return Err(CliError::Config("--sequences and --frames must be positive".into()));
    }
    let base = cfg.pipeline.rng_seed;
    for i in 0..a.sequences {
        let seed = base.wrapping_add(i as u64);
        let mut params = match a.scene {
            Scene::Sample => EyeSceneParams::sample(a.width, a.height, seed),
            Scene::Centered => EyeSceneParams::centered(a.width, a.height, seed),
            Scene::Static => {
                let mut p = EyeSceneParams::centered(a.width, a.height, seed);
                p.trajectory = TrajectorySpec::stationary();
                p
            }
        };
        if let Some(n) = a.noise {
            params.noise_sigma = n;
        }
        params.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let seq = render_sequence(&params, a.frames)?;
        let dir = if a.sequences == 1 { a.out.clone() } else { a.out.join(format!("seq{i:03}")) };
        write_sequence_dir(&dir, &seq, &params)?;
    }
    println!("wrote {} sequence(s) of {} frames to {}", a.sequences, a.frames, a.out.display());
    Ok(())
}

fn load_sequences(root: &Path) -> CliResult<Vec<LabeledSequence>> {
    sequence_dirs(root)?
        .iter()
        .map(|d| {
            let s = read_sequence_dir(d)?;
            Ok(LabeledSequence::new(s.frames, s.labels)?)
        })
        .collect()
}

fn first_frame(seqs: &[LabeledSequence]) -> CliResult<&Frame> {
    seqs.iter()
        .find_map(|s| s.frames.first())
        .ok_or_else(|| CliError::Core(edar_core::Error::Data("dataset holds no frames".into())))
}

fn write_curve(out: &Path, name: &str, curve: &LossCurve) -> CliResult<()> {
    fs::write(out.join(name), curve.to_csv())?;
    Ok(())
}

fn report_curve(what: &str, curve: &LossCurve) {
    if let Some(last) = curve.epochs.last() {
        println!(
            "{what}: {} epochs, final train loss {:.6}, kept epoch {}",
            curve.epochs.len(),
            last.train_loss,
            curve.best_epoch
        );
    }
}

/// Training flags shared by the three training commands.
#[derive(Args, Debug)]
pub struct TrainFlags {
    /// Sequence directory, or a directory of sequence directories.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for weights and the loss curve.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

impl TrainFlags {
    fn apply(&self, mut t: train::TrainConfig) -> CliResult<train::TrainConfig> {
        if let Some(e) = self.epochs {
            t.epochs = e;
        }
        if let Some(b) = self.batch {
            t.batch = b;
        }
        if let Some(lr) = self.lr {
            t.lr = lr;
        }
        t.validate()?;
        Ok(t)
    }
}

#[derive(Args, Debug)]
pub struct TrainSegArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Start from these weights instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
}

pub fn train_seg(cfg: &Config, a: TrainSegArgs) -> CliResult<()> {
    let tc = a.flags.apply(cfg.train_seg.clone())?;
    let seqs = load_sequences(&a.flags.data)?;
    let (mut net, variant) = match &a.init {
        Some(p) => load_segnet(p)?,
        None => (build_segnet(cfg.pipeline.seg_variant, tc.seed)?, cfg.pipeline.seg_variant),
    };
    let samples = train::seg_samples(&seqs)?;
    let curve = train::train_segnet(&mut net, &samples, &tc)?;
    fs::create_dir_all(&a.flags.out)?;
    net.round_params_to_f32();
    save_segnet(&net, variant, &a.flags.out.join("segnet.bin"))?;
    write_curve(&a.flags.out, "segnet_loss.csv", &curve)?;
    report_curve(network_name(variant), &curve);
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainRoiArgs {
    #[command(flatten)]
    flags: TrainFlags,
}

pub fn train_roi(cfg: &Config, a: TrainRoiArgs) -> CliResult<()> {
    let tc = a.flags.apply(cfg.train_roi.clone())?;
    let seqs = load_sequences(&a.flags.data)?;
    let f = first_frame(&seqs)?;
    let rc = RoinetConfig::for_frame(f.width(), f.height());
    let mut net = build_roinet(&rc, tc.seed)?;
    let samples = train::roi_samples(&seqs, cfg.pipeline.sigma, cfg.pipeline.epsilon_div)?;
    let curve = train::train_roinet(&mut net, &samples, &tc)?;
    fs::create_dir_all(&a.flags.out)?;
    net.round_params_to_f32();
    save_roinet(&net, &rc, &a.flags.out.join("roinet.bin"))?;
    write_curve(&a.flags.out, "roinet_loss.csv", &curve)?;
    report_curve("roinet", &curve);
    Ok(())
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long)]
    weights_seg: PathBuf,
    #[arg(long)]
    weights_roi: PathBuf,
}

pub fn finetune(cfg: &Config, a: FinetuneArgs) -> CliResult<()> {
    let tc = a.flags.apply(cfg.finetune.clone())?;
    let seqs = load_sequences(&a.flags.data)?;
    let (mut seg, variant) = load_segnet(&a.weights_seg)?;
    let (roi, _) = load_roinet(&a.weights_roi)?;
    let curve = train::finetune_segnet_on_rois(&mut seg, &roi, &seqs, &cfg.pipeline, &tc)?;
    fs::create_dir_all(&a.flags.out)?;
    seg.round_params_to_f32();
    save_segnet(&seg, variant, &a.flags.out.join("segnet_ft.bin"))?;
    write_curve(&a.flags.out, "finetune_loss.csv", &curve)?;
    report_curve("finetune", &curve);
    Ok(())
}

/// Frames of a directory, accepting a sequence directory as well.
fn frames_in(dir: &Path) -> CliResult<Vec<Frame>> {
    let d = if dir.join("frames").is_dir() { dir.join("frames") } else { dir.to_path_buf() };
    Ok(read_frame_dir(&d)?)
}

fn ground_truth(dir: &Path) -> CliResult<Vec<GroundTruth>> {
    let (labels, gt) = read_truth_dir(dir)?;
    Ok(labels
        .into_iter()
        .zip(gt)
        .map(|(labels, g)| GroundTruth { labels, pupil: g.pupil })
        .collect())
}

struct Nets {
    seg: LayerGraph,
    roi: Option<LayerGraph>,
}

impl Nets {
    fn load(cfg: &Config, seg: &Path, roi: Option<&Path>) -> CliResult<Self> {
        let (seg, _) = load_segnet(seg)?;
        let roi = match roi {
            Some(p) => Some(load_roinet(p)?.0),
            None if cfg.pipeline.auto_roi => {
                return Err(CliError::Config("--weights-roi is required unless --full-res is set".into()));
            }
            None => None,
        };
        Ok(Self { seg, roi })
    }

    fn networks(&self, cfg: &Config) -> Networks<'_> {
        Networks {
            roinet: if cfg.pipeline.auto_roi { self.roi.as_ref() } else { None },
            segnet: &self.seg,
        }
    }
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Directory of `.pgm` frames (or a sequence directory).
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    weights_roi: Option<PathBuf>,
    #[arg(long)]
    weights_seg: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Sequence directory with `labels/` and `gt.csv` to score against.
    #[arg(long)]
    truth: Option<PathBuf>,
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

pub fn run(cfg: &Config, a: RunArgs) -> CliResult<()> {
    let frames = frames_in(&a.frames)?;
    let nets = Nets::load(cfg, &a.weights_seg, a.weights_roi.as_deref())?;
    let truth = a.truth.as_deref().map(ground_truth).transpose()?;
    let result = run_sequence(&frames, &cfg.pipeline, nets.networks(cfg), truth.as_deref())?;

    let seg_dir = a.out.join("seg");
    fs::create_dir_all(&seg_dir)?;
    let mut trace = Vec::with_capacity(result.outputs.len());
    for o in &result.outputs {
        write_segmentation(&seg_dir.join(frame_file_name(o.index)), &o.seg)?;
        trace.push(TraceRow {
            frame_index: o.index,
            roi: o.roi,
            mode: o.mode.as_str().to_string(),
        });
    }
    fs::write(a.out.join("roi_trace.csv"), format_trace(&trace))?;
    write_json(&a.out.join("report.json"), &result.report)?;
    write_json(&a.out.join("timing.json"), &result.timing)?;
    println!("{}", serde_json::to_string_pretty(&result.report)?);
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of predicted maps (a `run` output directory also works).
    #[arg(long)]
    pred: PathBuf,
    /// Sequence directory with `labels/` and `gt.csv`.
    #[arg(long)]
    truth: PathBuf,
    /// Fail unless the metrics equal those embedded in this report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the metrics as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let dir = if a.pred.join("seg").is_dir() { a.pred.join("seg") } else { a.pred.clone() };
    let preds = list_pgm(&dir)?
        .iter()
        .map(|p| read_segmentation(p))
        .collect::<Result<Vec<SegmentationMap>, _>>()?;
    let metrics = evaluate(&preds, &ground_truth(&a.truth)?)?;
    let text = serde_json::to_string_pretty(&metrics)?;
    println!("{text}");
    if let Some(out) = &a.out {
        write_json(out, &metrics)?;
    }
    if let Some(r) = &a.report {
        let report: SequenceReport = serde_json::from_str(&fs::read_to_string(r)?)?;
        if report.metrics.as_ref() != Some(&metrics) {
            return Err(CliError::Core(edar_core::Error::Data(format!(
                "metrics differ from {}: {:?}",
                r.display(),
                report.metrics
            ))));
        }
        println!("metrics match {}", r.display());
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct FlopsArgs {
    #[arg(long, default_value_t = 640)]
    width: usize,
    #[arg(long, default_value_t = 400)]
    height: usize,
    /// Break the totals down by layer kind.
    #[arg(long)]
    detail: bool,
}

fn print_network(name: &str, net: &LayerGraph, dims: &[Vec<usize>], detail: bool) -> CliResult<()> {
    let flops = net.flops(dims).map_err(edar_core::Error::from)?;
    println!("{name:<14} {:>10} {:>14.1}", net.param_count(), flops as f64 / 1e6);
    if detail {
        let mut by_kind: std::collections::BTreeMap<&str, u64> = Default::default();
        for (_, kind, f) in net.flops_by_node(dims).map_err(edar_core::Error::from)? {
            *by_kind.entry(kind).or_default() += f;
        }
        for (kind, f) in by_kind {
            println!("  {kind:<12} {:>25.3}", f as f64 / 1e6);
        }
    }
    Ok(())
}

pub fn flops(cfg: &Config, a: FlopsArgs) -> CliResult<()> {
    let (w, h) = (a.width, a.height);
    if w == 0 || h == 0 {
        return Err(CliError::Config("frame size must be positive".into()));
    }
    println!("{:<14} {:>10} {:>14}", "network", "params", "MFLOPs");
    let v = cfg.pipeline.seg_variant;
    print_network(network_name(v), &build_segnet(v, 0)?, &[vec![1, 1, h, w]], a.detail)?;
    let rc = RoinetConfig::for_frame(w, h);
    let net = build_roinet(&rc, 0)?;
    let (ih, iw) = rc.input_hw;
    print_network("roinet", &net, &[vec![1, 2, ih, iw], vec![1, 4]], a.detail)?;
    println!();
    println!("reference component costs per frame (energy model inputs)");
    let table = CostTable::default();
    for c in &table.components {
        println!("  {:<10} {:>10.1} MFLOPs {:>8.1} KB out", format!("{:?}", c.name), c.flops / 1e6, c.output_bytes / energy::KIB);
    }
    println!("  full frame {:>28.1} KB", table.frame_bytes / energy::KIB);
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EnergyMode {
    A,
    B,
    C,
    /// Compare a, b and c.
    All,
    /// Exhaustive search over all placements.
    Search,
}

#[derive(Args, Debug)]
pub struct EnergyArgs {
    #[arg(long, value_enum, default_value = "all")]
    mode: EnergyMode,
    #[arg(long, default_value_t = 7.0)]
    sensor_node: f64,
    #[arg(long, default_value_t = 7.0)]
    processor_node: f64,
    /// Energy per transmitted byte relative to one 7 nm FLOP.
    #[arg(long, default_value_t = 800.0)]
    tx_ratio: f64,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    roi_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    extrapolated_fraction: f64,
    #[arg(long)]
    json: bool,
}

pub fn energy(a: EnergyArgs) -> CliResult<()> {
    let costs = CostTable::default();
    let mut template = MappingScenario::new(energy::mode_a(), a.sensor_node, a.processor_node);
    template.tx_ratio = a.tx_ratio;
    template.roi_fraction = a.roi_fraction;
    template.extrapolated_fraction = a.extrapolated_fraction;
    template.validate()?;

    let scenarios: Vec<(String, MappingScenario, energy::EnergyBreakdown)> = match a.mode {
        EnergyMode::Search => {
            let (s, e) = energy::optimal_mapping(&template, &costs)?;
            vec![(energy::placement_label(&s.placement), s, e)]
        }
        m => {
            let placements = match m {
                EnergyMode::A => vec![energy::mode_a()],
                EnergyMode::B => vec![energy::mode_b()],
                EnergyMode::C => vec![energy::mode_c()],
                _ => vec![energy::mode_a(), energy::mode_b(), energy::mode_c()],
            };
            placements
                .into_iter()
                .map(|p| {
                    let s = MappingScenario {
                        placement: p,
                        ..template.clone()
                    };
                    let e = energy::scenario_energy(&s, &costs)?;
                    Ok((energy::placement_label(&s.placement), s, e))
                })
                .collect::<CliResult<_>>()?
        }
    };
    if a.json {
        let v: Vec<_> = scenarios
            .iter()
            .map(|(l, s, e)| serde_json::json!({"mode": l, "scenario": s, "energy": e}))
            .collect();
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }
    if matches!(a.mode, EnergyMode::Search) {
        println!("optimal placement: mode {}", scenarios[0].0);
    }
    println!("{:<6} {:>14} {:>14} {:>14} {:>12}", "mode", "compute", "transmission", "total", "bytes");
    for (l, _, e) in &scenarios {
        println!(
            "{l:<6} {:>14.4e} {:>14.4e} {:>14.4e} {:>12.0}",
            e.compute_energy,
            e.transmission_energy,
            e.total,
            e.bytes_to_processor + e.bytes_to_sensor
        );
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    weights_roi: Option<PathBuf>,
    #[arg(long)]
    weights_seg: PathBuf,
    /// Number of passes over the sequence.
    #[arg(long, default_value_t = 3)]
    repeat: usize,
}

pub fn bench(cfg: &Config, a: BenchArgs) -> CliResult<()> {
    if a.repeat == 0 {
        return Err(CliError::Config("--repeat must be positive".into()));
    }
    let frames = frames_in(&a.frames)?;
    let nets = Nets::load(cfg, &a.weights_seg, a.weights_roi.as_deref())?;
    let mut total = StageTimes::default();
    let mut report = None;
    for _ in 0..a.repeat {
        let r = run_sequence(&frames, &cfg.pipeline, nets.networks(cfg), None)?;
        for o in &r.outputs {
            total.event += o.times.event;
            total.roi += o.times.roi;
            total.segment += o.times.segment;
            total.edge += o.times.edge;
        }
        report = Some(r.report);
    }
    let timing = TimingReport::from_times(&total);
    let per_frame_ms = timing.total_s * 1e3 / (a.repeat * frames.len()) as f64;
    println!("{} frames x {} passes, {:.3} ms/frame", frames.len(), a.repeat, per_frame_ms);
    for (stage, f) in &timing.stage_fractions {
        println!("  {stage:<8} {:>6.1}%", f * 100.0);
    }
    if let Some(r) = report {
        println!("modes: {:?}, pixel speedup {:.2}", r.modes, r.pixel_speedup);
    }
    Ok(())
}
