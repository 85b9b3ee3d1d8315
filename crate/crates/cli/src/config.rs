//! Layered configuration: built-in defaults, then the JSON file, then flags.

use std::path::Path;

use clap::Args;
use edar_core::train::TrainConfig;
use edar_core::types::{PipelineConfig, SegVariant};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub pipeline: PipelineConfig,
    pub train_seg: TrainConfig,
    pub train_roi: TrainConfig,
    pub finetune: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            train_seg: TrainConfig::segnet(),
            train_roi: TrainConfig::roinet(),
            finetune: TrainConfig::finetune(),
        }
    }
}

/// Flags that override configuration values for every subcommand.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// Seed for scene generation, initialization and data splits.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Event threshold on the relative intensity change.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Event density below which frames are extrapolated.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Segmentation network size (S or L).
    #[arg(long, global = true)]
    pub variant: Option<SegVariant>,
    /// Disable ROI prediction: every frame at full resolution.
    #[arg(long, global = true)]
    pub full_res: bool,
}

/// Recursively overlays `top` on `base`; objects merge key by key.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn load(path: Option<&Path>, o: &Overrides) -> CliResult<Config> {
    let bad = |e: serde_json::Error| CliError::Config(e.to_string());
    let mut value = serde_json::to_value(Config::default()).map_err(bad)?;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        merge(&mut value, serde_json::from_str(&text).map_err(bad)?);
    }
    let mut cfg: Config = serde_json::from_value(value).map_err(bad)?;
    if let Some(s) = o.seed {
        cfg.pipeline.rng_seed = s;
        cfg.train_seg.seed = s;
        cfg.train_roi.seed = s;
        cfg.finetune.seed = s;
    }
    if let Some(s) = o.sigma {
        cfg.pipeline.sigma = s;
    }
    if let Some(g) = o.gamma {
        cfg.pipeline.gamma = g;
    }
    if let Some(v) = o.variant {
        cfg.pipeline.seg_variant = v;
    }
    if o.full_res {
        cfg.pipeline.auto_roi = false;
    }
    cfg.pipeline.validate()?;
    for t in [&cfg.train_seg, &cfg.train_roi, &cfg.finetune] {
        t.validate()?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_keep_their_own_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train_roi": {"epochs": 3}, "pipeline": {"gamma": 0.01}}"#).unwrap();
        let cfg = load(Some(&p), &Overrides::default()).unwrap();
        assert_eq!(cfg.train_roi.epochs, 3);
        assert_eq!(cfg.train_roi.batch, 8);
        assert_eq!(cfg.pipeline.gamma, 0.01);
        assert_eq!(cfg.pipeline.sigma, 0.3);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"pipeline": {"sigmaa": 1}}"#).unwrap();
        assert!(matches!(load(Some(&p), &Overrides::default()), Err(CliError::Config(_))));
        let o = Overrides {
            gamma: Some(2.0),
            ..Default::default()
        };
        let e = load(None, &o).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn flags_override_file() {
        let o = Overrides {
            seed: Some(9),
            full_res: true,
            ..Default::default()
        };
        let cfg = load(None, &o).unwrap();
        assert_eq!((cfg.train_seg.seed, cfg.pipeline.rng_seed), (9, 9));
        assert!(!cfg.pipeline.auto_roi);
    }
}
