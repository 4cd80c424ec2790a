//! Named parameter storage and the agent's parameter layout.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::util::rng_from;

const INIT_STREAM: u64 = 0x494e_4954;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub heads: usize,
    pub lang_layers: usize,
    pub cross_layers: usize,
    pub ffn: usize,
    /// Longest accepted instruction including `[CLS]` and `[SEP]`.
    pub max_tokens: usize,
    /// Raw view feature width.
    pub feature_dim: usize,
    /// Dual-encoder embedding width of the prompt sub-prompts.
    pub prompt_dim: usize,
    /// Dropout rate of the prompt encoders.
    pub dropout: f64,
    /// Dropout rate on raw candidate view features during training.
    #[serde(default)]
    pub feature_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            heads: 4,
            lang_layers: 2,
            cross_layers: 2,
            ffn: 128,
            max_tokens: 64,
            feature_dim: 64,
            prompt_dim: 64,
            dropout: 0.1,
            feature_dropout: 0.4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("model: {m}")));
        if self.hidden == 0 || self.heads == 0 || self.ffn == 0 {
            return bad("hidden, heads and ffn must be positive");
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad("hidden must be divisible by heads");
        }
        if self.cross_layers == 0 {
            return bad("at least one cross-modal layer is required");
        }
        if self.max_tokens < 3 {
            return bad("max_tokens must leave room for [CLS] and [SEP]");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.feature_dropout) {
            return bad("dropout rates must be in [0, 1)");
        }
        Ok(())
    }
}

/// Coarse parameter families, used for gradient reporting and stage gating checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Embedding,
    LanguageSelfAttention,
    CrossAttention,
    DecisionSelfAttention,
    Visual,
    PromptImage,
    PromptText,
    PromptFusion,
    StateUpdate,
    Critic,
}

impl ParamGroup {
    pub fn of(name: &str) -> ParamGroup {
        match name.split('.').next().unwrap_or("") {
            "embed" => ParamGroup::Embedding,
            "lang" => ParamGroup::LanguageSelfAttention,
            "cross" => ParamGroup::CrossAttention,
            "decision" => ParamGroup::DecisionSelfAttention,
            "visual" => ParamGroup::Visual,
            "prompt_img" => ParamGroup::PromptImage,
            "prompt_txt" => ParamGroup::PromptText,
            "prompt_fuse" => ParamGroup::PromptFusion,
            "state" => ParamGroup::StateUpdate,
            _ => ParamGroup::Critic,
        }
    }

    pub fn is_prompt_encoder(&self) -> bool {
        matches!(
            self,
            ParamGroup::PromptImage | ParamGroup::PromptText | ParamGroup::PromptFusion
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::CheckpointMismatch(format!("missing parameter '{name}'")))
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: usize) -> &Mat {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Mat {
        &mut self.values[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn group(&self, id: usize) -> ParamGroup {
        ParamGroup::of(&self.names[id])
    }

    pub fn total_size(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }
}

/// Parameter ids of one attention block: attention projections, output projection, and the
/// feed-forward sublayer, each followed by a residual layer norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockIds {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

impl BlockIds {
    fn resolve(store: &ParamStore, prefix: &str) -> Result<Self> {
        let id = |s: &str| store.id(&format!("{prefix}.{s}"));
        Ok(Self {
            wq: id("wq")?,
            bq: id("bq")?,
            wk: id("wk")?,
            bk: id("bk")?,
            wv: id("wv")?,
            bv: id("bv")?,
            wo: id("wo")?,
            bo: id("bo")?,
            ln1_g: id("ln1_g")?,
            ln1_b: id("ln1_b")?,
            w1: id("w1")?,
            b1: id("b1")?,
            w2: id("w2")?,
            b2: id("b2")?,
            ln2_g: id("ln2_g")?,
            ln2_b: id("ln2_b")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamIds {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub emb_ln_g: usize,
    pub emb_ln_b: usize,
    pub lang: Vec<BlockIds>,
    pub cross: Vec<BlockIds>,
    pub vis_w: usize,
    pub vis_b: usize,
    pub stop: usize,
    pub dec_wq: usize,
    pub dec_bq: usize,
    pub dec_wk: usize,
    pub dec_bk: usize,
    pub pi_w: usize,
    pub pi_b: usize,
    pub pu_w: usize,
    pub pu_b: usize,
    pub pf_w: usize,
    pub pf_b: usize,
    pub upd_w: usize,
    pub upd_b: usize,
    pub upd_ln_g: usize,
    pub upd_ln_b: usize,
    pub critic_w: usize,
    pub critic_b: usize,
}

impl ParamIds {
    pub fn resolve(store: &ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let id = |s: &str| store.id(s);
        Ok(Self {
            tok_emb: id("embed.tokens")?,
            pos_emb: id("embed.positions")?,
            emb_ln_g: id("embed.ln_g")?,
            emb_ln_b: id("embed.ln_b")?,
            lang: (0..cfg.lang_layers)
                .map(|l| BlockIds::resolve(store, &format!("lang.{l}")))
                .collect::<Result<_>>()?,
            cross: (0..cfg.cross_layers)
                .map(|l| BlockIds::resolve(store, &format!("cross.{l}")))
                .collect::<Result<_>>()?,
            vis_w: id("visual.w")?,
            vis_b: id("visual.b")?,
            stop: id("visual.stop")?,
            dec_wq: id("decision.wq")?,
            dec_bq: id("decision.bq")?,
            dec_wk: id("decision.wk")?,
            dec_bk: id("decision.bk")?,
            pi_w: id("prompt_img.w")?,
            pi_b: id("prompt_img.b")?,
            pu_w: id("prompt_txt.w")?,
            pu_b: id("prompt_txt.b")?,
            pf_w: id("prompt_fuse.w")?,
            pf_b: id("prompt_fuse.b")?,
            upd_w: id("state.w")?,
            upd_b: id("state.b")?,
            upd_ln_g: id("state.ln_g")?,
            upd_ln_b: id("state.ln_b")?,
            critic_w: id("critic.w")?,
            critic_b: id("critic.b")?,
        })
    }
}

/// Round to the nearest f32 so that parameters survive f32 serialization unchanged.
pub fn round_f32(m: &mut Mat) {
    for x in &mut m.data {
        *x = f64::from(*x as f32);
    }
}

/// Fresh parameters: scaled Gaussian weights, zero biases, unit layer-norm gains.
pub fn init_params(cfg: &ModelConfig, vocab_len: usize, seed: u64) -> ParamStore {
    let mut rng = rng_from(&[INIT_STREAM, seed]);
    let mut store = ParamStore::new();
    let d = cfg.hidden;
    let mut gauss = |rows: usize, cols: usize, std: f64| {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * std
            })
            .collect();
        let mut m = Mat::from_vec(rows, cols, data);
        round_f32(&mut m);
        m
    };
    let glorot = |fan_in: usize| (1.0 / fan_in as f64).sqrt();
    let zeros = |c: usize| Mat::zeros(1, c);
    let ones = |c: usize| Mat::filled(1, c, 1.0);

    store.add("embed.tokens", gauss(vocab_len, d, 0.5));
    store.add("embed.positions", gauss(cfg.max_tokens, d, 0.1));
    store.add("embed.ln_g", ones(d));
    store.add("embed.ln_b", zeros(d));
    for (prefix, n) in [("lang", cfg.lang_layers), ("cross", cfg.cross_layers)] {
        for l in 0..n {
            let p = format!("{prefix}.{l}");
            for w in ["wq", "wk", "wv", "wo"] {
                store.add(format!("{p}.{w}"), gauss(d, d, glorot(d)));
                store.add(format!("{p}.b{}", &w[1..]), zeros(d));
            }
            store.add(format!("{p}.ln1_g"), ones(d));
            store.add(format!("{p}.ln1_b"), zeros(d));
            store.add(format!("{p}.w1"), gauss(d, cfg.ffn, glorot(d)));
            store.add(format!("{p}.b1"), zeros(cfg.ffn));
            store.add(format!("{p}.w2"), gauss(cfg.ffn, d, glorot(cfg.ffn)));
            store.add(format!("{p}.b2"), zeros(d));
            store.add(format!("{p}.ln2_g"), ones(d));
            store.add(format!("{p}.ln2_b"), zeros(d));
        }
    }
    store.add("visual.w", gauss(cfg.feature_dim, d, 1.0));
    store.add("visual.b", zeros(d));
    store.add("visual.stop", gauss(1, d, 0.5));
    store.add("decision.wq", gauss(d, d, glorot(d)));
    store.add("decision.bq", zeros(d));
    store.add("decision.wk", gauss(d, d, glorot(d)));
    store.add("decision.bk", zeros(d));
    store.add("prompt_img.w", gauss(cfg.prompt_dim, d, 1.0));
    store.add("prompt_img.b", zeros(d));
    store.add("prompt_txt.w", gauss(cfg.prompt_dim, d, 1.0));
    store.add("prompt_txt.b", zeros(d));
    store.add("prompt_fuse.w", gauss(2 * d, d, glorot(2 * d)));
    store.add("prompt_fuse.b", zeros(d));
    store.add("state.w", gauss(3 * d, d, glorot(3 * d)));
    store.add("state.b", zeros(d));
    store.add("state.ln_g", ones(d));
    store.add("state.ln_b", zeros(d));
    store.add("critic.w", gauss(d, 1, glorot(d)));
    store.add("critic.b", zeros(1));
    store
}
