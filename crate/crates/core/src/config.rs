//! Flat `key = value` configuration files and the typed settings they fill.
//!
//! Keys are dotted paths such as `train.batch_size`. Blank lines and `#` comments are
//! ignored. An optional `preset = <name>` line resets every setting to a named preset
//! before the following lines apply.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::ModelConfig;
use crate::dataset::SuiteConfig;
use crate::encoders::{EncoderKind, EncoderSpec};
use crate::error::{Error, Result};
use crate::prompt_base::DEFAULT_TAU1;
use crate::training::TrainConfig;
use crate::util::read_text;

/// Every tunable of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub suite: SuiteConfig,
    pub encoder: EncoderSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Temperature of image sub-prompt selection.
    pub tau1: f64,
    /// Directory of `world-<seed>.json` files; worlds are regenerated from `suite` when unset.
    pub worlds_dir: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            suite: SuiteConfig::default(),
            encoder: EncoderSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            tau1: DEFAULT_TAU1,
            worlds_dir: None,
        }
    }
}

pub const PRESETS: [&str; 2] = ["default", "benchmark"];

impl Settings {
    /// Named starting points. `benchmark` is the desk-scale setting used for the ablation runs:
    /// a smaller agent and learning rates that make progress within the 2000 + 1000 budget.
    pub fn preset(name: &str) -> Result<Self> {
        let mut s = Settings::default();
        match name {
            "default" => {}
            "benchmark" => {
                s.model = ModelConfig {
                    hidden: 32,
                    heads: 2,
                    lang_layers: 1,
                    cross_layers: 1,
                    ffn: 64,
                    ..ModelConfig::default()
                };
                s.train.lr_stage1 = 1e-3;
                s.train.lr_stage2 = 3e-4;
                s.train.grad_clip = 0.25;
                s.train.patience = 0;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}' (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "preset" {
                s = Settings::preset(value)?;
                continue;
            }
            s.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        s.validate()?;
        Ok(s)
    }

    /// Assign one setting from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let w = &mut self.suite.world;
        let e = &mut self.suite.episodes;
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "world.nodes" => w.nodes = num(key, value)?,
            "world.feature_dim" => w.feature_dim = num(key, value)?,
            "world.feature_seed" => w.feature_seed = num(key, value)?,
            "world.spacing" => w.spacing = num(key, value)?,
            "world.view_noise" => w.view_noise = num(key, value)?,
            "world.room_size" => w.room_size = num(key, value)?,
            "world.object_prob" => w.object_prob = num(key, value)?,
            "world.clutter_prob" => w.clutter_prob = num(key, value)?,
            "world.extra_edge_prob" => w.extra_edge_prob = num(key, value)?,
            "world.diagonal_prob" => w.diagonal_prob = num(key, value)?,
            "world.rooms" => w.rooms = words(value),
            "world.objects" => w.objects = words(value),
            "episodes.min_len" => e.min_len = num(key, value)?,
            "episodes.max_len" => e.max_len = num(key, value)?,
            "episodes.object_mention_prob" => e.object_mention_prob = num(key, value)?,
            "suite.train_worlds" => self.suite.train_worlds = seeds(key, value)?,
            "suite.train_per_world" => self.suite.train_per_world = num(key, value)?,
            "suite.val_worlds" => self.suite.val_worlds = seeds(key, value)?,
            "suite.val_per_world" => self.suite.val_per_world = num(key, value)?,
            "suite.worlds_dir" => self.worlds_dir = Some(PathBuf::from(value)),
            "encoder.kind" => {
                self.encoder.kind = match value {
                    "mock" => EncoderKind::Mock,
                    "external" => EncoderKind::External,
                    _ => return Err(bad(key, value)),
                }
            }
            "encoder.dim" => self.encoder.dim = num(key, value)?,
            "encoder.seed" => self.encoder.seed = num(key, value)?,
            "encoder.text_noise" => self.encoder.text_noise = num(key, value)?,
            "encoder.table" => self.encoder.table = Some(PathBuf::from(value)),
            "model.hidden" => m.hidden = num(key, value)?,
            "model.heads" => m.heads = num(key, value)?,
            "model.lang_layers" => m.lang_layers = num(key, value)?,
            "model.cross_layers" => m.cross_layers = num(key, value)?,
            "model.ffn" => m.ffn = num(key, value)?,
            "model.max_tokens" => m.max_tokens = num(key, value)?,
            "model.dropout" => m.dropout = num(key, value)?,
            "model.feature_dropout" => m.feature_dropout = num(key, value)?,
            "train.batch_size" => t.batch_size = num(key, value)?,
            "train.lr_stage1" => t.lr_stage1 = num(key, value)?,
            "train.lr_stage2" => t.lr_stage2 = num(key, value)?,
            "train.iters_stage1" => t.iters_stage1 = num(key, value)?,
            "train.iters_stage2" => t.iters_stage2 = num(key, value)?,
            "train.seed" => t.seed = num(key, value)?,
            "train.eval_every" => t.eval_every = num(key, value)?,
            "train.patience" => t.patience = num(key, value)?,
            "train.il_per_rl" => t.il_per_rl = num(key, value)?,
            "train.max_steps" => t.max_steps = num(key, value)?,
            "train.grad_clip" => t.grad_clip = num(key, value)?,
            "loss.il_weight" => t.loss.il_weight = num(key, value)?,
            "loss.consistency_weight" => t.loss.consistency_weight = num(key, value)?,
            "loss.alignment_weight" => t.loss.alignment_weight = num(key, value)?,
            "loss.tau2" => t.loss.tau2 = num(key, value)?,
            "loss.gamma" => t.loss.gamma = num(key, value)?,
            "loss.success_bonus" => t.loss.success_bonus = num(key, value)?,
            "loss.success_radius" => t.loss.success_radius = num(key, value)?,
            "optim.beta1" => t.optim.beta1 = num(key, value)?,
            "optim.beta2" => t.optim.beta2 = num(key, value)?,
            "optim.eps" => t.optim.eps = num(key, value)?,
            "optim.weight_decay" => t.optim.weight_decay = num(key, value)?,
            "prompt.tau1" => self.tau1 = num(key, value)?,
            "prompt.n_max" => t.retrieval.n_max = num(key, value)?,
            "prompt.top_k" => t.retrieval.top_k = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.suite.world.validate()?;
        let e = &self.suite.episodes;
        if e.min_len < 2 || e.min_len > e.max_len {
            return Err(Error::Config("episodes: need 2 <= min_len <= max_len".into()));
        }
        if self.tau1.is_nan() || self.tau1 <= 0.0 {
            return Err(Error::Config("prompt.tau1 must be positive".into()));
        }
        if self.train.retrieval.n_max == 0 || self.train.retrieval.top_k == 0 {
            return Err(Error::Config("prompt.n_max and prompt.top_k must be positive".into()));
        }
        self.model_config().validate()?;
        self.train.validate()
    }

    /// The agent configuration with input widths taken from the world and encoder.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            feature_dim: self.suite.world.feature_dim,
            prompt_dim: self.encoder.dim,
            ..self.model.clone()
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value '{value}' for {key}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn words(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Comma-separated seeds; `a-b` expands to the inclusive range.
fn seeds(key: &str, value: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (num(key, a.trim())?, num(key, b.trim())?);
                if a > b {
                    return Err(bad(key, value));
                }
                out.extend(a..=b);
            }
            None => out.push(num(key, part)?),
        }
    }
    if out.is_empty() {
        return Err(bad(key, value));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_override_defaults() {
        let s = Settings::parse(
            "# comment\ntrain.batch_size = 4\nsuite.train_worlds = 1-3, 7\nencoder.kind = mock\n",
        )
        .unwrap();
        assert_eq!(s.train.batch_size, 4);
        assert_eq!(s.suite.train_worlds, vec![1, 2, 3, 7]);
        assert_eq!(s.model, ModelConfig::default());
    }

    #[test]
    fn preset_then_overrides() {
        let s = Settings::parse("preset = benchmark\nmodel.hidden = 16\n").unwrap();
        assert_eq!(s.model.hidden, 16);
        assert_eq!(s.train.lr_stage1, 1e-3);
        assert_eq!(s.model_config().prompt_dim, s.encoder.dim);
    }

    #[test]
    fn rejects_bad_lines() {
        for text in ["nonsense", "train.nope = 1", "train.batch_size = x", "train.batch_size = 0", "preset = huge"] {
            assert!(matches!(Settings::parse(text), Err(Error::Config(_))), "{text}");
        }
    }
}
