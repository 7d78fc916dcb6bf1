//! Run configuration: a TOML file mirroring [`TrainConfig`], dotted
//! `--set key=value` overrides, and an environment variable for the output
//! root.

use std::path::{Path, PathBuf};

use draper_core::error::{Error, Result};
use draper_core::loss::LossWeights;
use serde::{Deserialize, Serialize};

/// Environment variable naming the default output root directory.
pub const OUT_ROOT_ENV: &str = "DRAPER_OUT";

/// Network dimensions. Defaults match the reference architecture; the
/// training fixtures shrink them for CPU budgets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    /// Feature-plane channels (sampled features are 3×this).
    pub channels: usize,
    /// Feature-plane resolution (square, divisible by 4).
    pub resolution: usize,
    /// Identity latent width.
    pub latent_dim: usize,
    /// Hidden width of the attribute heads.
    pub head_hidden: usize,
    /// Width of the cloth encoder/recurrence.
    pub model_dim: usize,
    /// Hidden width of the part-label classifier.
    pub classifier_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            channels: 32,
            resolution: 128,
            latent_dim: 64,
            head_hidden: 64,
            model_dim: 128,
            classifier_hidden: 32,
        }
    }
}

/// Everything a training run needs. All fields have defaults so a config
/// file can set only what it changes; `--set key=value` overrides win last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// 1 = multi-subject joint training, 2 = single-subject fine-tuning.
    pub stage: u8,
    /// Dataset seeds to train on (stage 2: exactly one).
    pub subjects: Vec<u64>,
    pub steps: usize,
    pub learning_rate: f64,
    /// Supervised windows per optimizer step.
    pub batch: usize,
    pub weights: LossWeights<f64>,
    /// Master seed: parameter init and per-step sampling derive from it.
    pub seed: u64,
    /// Render resolution during training.
    pub width: usize,
    pub height: usize,
    /// Pose-window span in seconds.
    pub window_span: f64,
    /// Pose-window sample spacing Δt in seconds.
    pub delta_t: f64,
    /// Every k-th frame is held out from training for evaluation.
    pub holdout_every: usize,
    pub model: ModelDims,
    /// Stage-2 initialization checkpoint (from stage 1).
    pub checkpoint: Option<PathBuf>,
    /// Explicit opt-out: train stage 2 without a pretrained checkpoint.
    pub from_scratch: bool,
    /// Also write `step_<n>.ckpt` every this many steps (0 = final only).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: 1,
            subjects: Vec::new(),
            steps: 500,
            learning_rate: 1e-3,
            batch: 1,
            weights: LossWeights::default(),
            seed: 0,
            width: 64,
            height: 64,
            window_span: 1.0,
            delta_t: 0.2,
            holdout_every: 10,
            model: ModelDims::default(),
            checkpoint: None,
            from_scratch: false,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage != 1 && self.stage != 2 {
            return Err(Error::Config(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        if self.subjects.is_empty() {
            return Err(Error::Config("no subjects configured".into()));
        }
        if self.stage == 2 && self.subjects.len() != 1 {
            return Err(Error::Config(format!(
                "stage 2 fine-tunes exactly one subject, got {}",
                self.subjects.len()
            )));
        }
        if self.stage == 2 && self.checkpoint.is_none() && !self.from_scratch {
            return Err(Error::Config(
                "stage 2 needs a stage-1 checkpoint, or from_scratch = true to opt out".into(),
            ));
        }
        // zero is allowed: a zero-rate run is the documented no-op baseline
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be non-negative and finite".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("render resolution must be positive".into()));
        }
        if self.delta_t <= 0.0 || self.window_span < self.delta_t {
            return Err(Error::Config("window span must cover at least one Δt step".into()));
        }
        if self.holdout_every < 2 {
            return Err(Error::Config("holdout_every must be at least 2".into()));
        }
        Ok(())
    }

    /// Stable 64-bit hash of the canonical JSON form (FNV-1a).
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        fnv1a(json.as_bytes())
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// Resolve the output root: explicit flag, then the environment variable,
/// then `./out`.
pub fn out_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Set a dotted key inside a TOML table, parsing the value as TOML when
/// possible (numbers, booleans, arrays) and as a string otherwise.
pub fn apply_set(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{spec}`")))?;
    let parsed: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
        Ok(t) => t["v"].clone(),
        Err(_) => toml::Value::String(value.trim().to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

/// Load a config: optional TOML file, then `--set` overrides, then validate.
pub fn load_config(path: Option<&Path>, sets: &[String]) -> Result<TrainConfig> {
    let mut table: toml::Table = match path {
        Some(p) => std::fs::read_to_string(p)?
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => toml::Table::new(),
    };
    for s in sets {
        apply_set(&mut table, s)?;
    }
    let cfg: TrainConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(format!("config does not fit the schema: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
