//! The recurrent cross-modal transformer agent.
//!
//! An instruction is encoded once by language self-attention; its `[CLS]` row seeds the state.
//! Each step the state and candidate encodings cross-attend to the instruction (optionally
//! extended with encoded action prompts), and a decision attention from the state row over the
//! candidate rows gives the action distribution. The attention mass of the state row, split
//! between instruction tokens and prompt slots, produces the attended features that update the
//! state.

mod attention;
mod params;
mod rollout;

pub use attention::{attention_block, multi_head_attention, project_memory};
pub use params::{
    init_params, round_f32, BlockIds, ModelConfig, ParamGroup, ParamIds, ParamStore,
};
pub use rollout::{
    rollout, teacher_action, DecisionTrace, Rollout, RolloutMode, StepRecord, TraceStep,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::encoders::VisualEncoder;
use crate::error::{Error, Result};
use crate::prompt_base::RetrievedPromptSet;
use crate::tensor::Mat;
use crate::text::Vocab;

use attention::{linear, param, row_mask};

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub cfg: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    pub ids: ParamIds,
}

/// Encoded instruction: `x` has one row per `[CLS] tokens [SEP]` position.
#[derive(Debug, Clone, Copy)]
pub struct InstructionEncoding {
    pub s0: Var,
    pub x: Var,
}

/// Encoded prompt slots. Padded rows are exactly zero.
#[derive(Debug, Clone)]
pub struct PromptEncoding {
    pub img: Var,
    pub txt: Var,
    pub fused: Var,
    pub mask: Vec<bool>,
    /// Base index of each valid slot.
    pub ids: Vec<Option<usize>>,
}

impl PromptEncoding {
    pub fn n_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Per-episode inputs shared by every step.
#[derive(Debug, Clone)]
pub struct EpisodeContext {
    pub instruction: InstructionEncoding,
    pub prompts: Option<PromptEncoding>,
    n_tokens: usize,
    /// Key mask over `[instruction; prompts]`; `None` when there are no prompt rows.
    mask: Option<Vec<bool>>,
    /// Projected keys and values of each cross-modal layer.
    memory: Vec<(Var, Var)>,
}

/// Everything one decision produces, as graph nodes.
#[derive(Debug, Clone)]
pub struct StepOut {
    /// State row followed by candidate rows, before cross-modal attention.
    pub k: Var,
    /// The same rows after cross-modal attention.
    pub k_att: Var,
    /// Head-averaged state-row attention over instruction and prompt slots (`1 × n_keys`).
    pub alpha: Var,
    pub alpha_text: Var,
    pub alpha_prompt: Option<Var>,
    /// Action distribution over candidates then stop (`1 × (J+1)`).
    pub beta: Var,
    pub log_beta: Var,
    pub x_att: Var,
    pub v_att: Var,
    pub p_img_att: Option<Var>,
    pub p_txt_att: Option<Var>,
    pub value: Var,
    pub next_state: Var,
}

impl Agent {
    pub fn new(cfg: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = init_params(&cfg, vocab.len(), seed);
        Self::from_parts(cfg, vocab, params)
    }

    /// Assemble an agent from loaded parts, checking every parameter shape.
    pub fn from_parts(cfg: ModelConfig, vocab: Vocab, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let reference = init_params(&cfg, vocab.len(), 0);
        if reference.len() != params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "expected {} parameters, found {}",
                reference.len(),
                params.len()
            )));
        }
        for (name, m) in reference.iter() {
            let got = params.get(params.id(name)?);
            if got.shape() != m.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    got.shape(),
                    m.shape()
                )));
            }
        }
        let ids = ParamIds::resolve(&params, &cfg)?;
        Ok(Self {
            cfg,
            vocab,
            params,
            ids,
        })
    }

    fn p(&self, g: &mut Graph, id: usize) -> Var {
        param(g, &self.params, id)
    }

    fn lin(&self, g: &mut Graph, x: Var, w: usize, b: usize) -> Var {
        linear(g, &self.params, x, w, b)
    }

    pub fn visual_encoder(&self) -> VisualEncoder {
        VisualEncoder::new(
            self.params.get(self.ids.vis_w).clone(),
            self.params.get(self.ids.vis_b).data.clone(),
        )
    }

    /// Language self-attention over `[CLS] tokens [SEP]`.
    pub fn encode_instruction(&self, g: &mut Graph, tokens: &[String]) -> Result<InstructionEncoding> {
        if tokens.is_empty() {
            return Err(Error::EmptyInstruction);
        }
        let ids = self.vocab.encode(tokens);
        if ids.len() > self.cfg.max_tokens {
            return Err(Error::InstructionTooLong {
                len: ids.len(),
                max: self.cfg.max_tokens,
            });
        }
        let table = self.p(g, self.ids.tok_emb);
        let tok = g.embed_rows(table, &ids);
        let pos_table = self.p(g, self.ids.pos_emb);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = g.embed_rows(pos_table, &positions);
        let x = g.add(tok, pos);
        let (lg, lb) = (self.p(g, self.ids.emb_ln_g), self.p(g, self.ids.emb_ln_b));
        let mut x = g.layer_norm(x, lg, lb);
        for block in &self.ids.lang {
            x = attention_block(g, &self.params, block, x, None, self.cfg.heads, None)?.1;
        }
        let s0 = g.slice_rows(x, 0, 1);
        Ok(InstructionEncoding { s0, x })
    }

    /// Sub-prompt encoders (linear then dropout) and the fusion encoder over their
    /// concatenation. Dropout applies only when `dropout_rng` is given.
    pub fn encode_prompts(
        &self,
        g: &mut Graph,
        set: &RetrievedPromptSet,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<PromptEncoding> {
        if set.img.cols != self.cfg.prompt_dim {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.prompt_dim,
                got: set.img.cols,
            });
        }
        let d = self.cfg.hidden;
        let mask = set.mask();
        let keep = row_mask(&mask, d);
        let rate = self.cfg.dropout;
        let mut gate = |g: &mut Graph, x: Var| -> Var {
            let mut m = keep.clone();
            if let Some(rng) = dropout_rng.as_deref_mut() {
                for v in m.data.iter_mut() {
                    *v = if rng.gen::<f64>() < rate { 0.0 } else { *v / (1.0 - rate) };
                }
            }
            let m = g.constant(m);
            g.mul(x, m)
        };
        let img_in = g.constant(set.img.clone());
        let txt_in = g.constant(set.txt.clone());
        let img = self.lin(g, img_in, self.ids.pi_w, self.ids.pi_b);
        let img = gate(g, img);
        let txt = self.lin(g, txt_in, self.ids.pu_w, self.ids.pu_b);
        let txt = gate(g, txt);
        let both = g.concat_cols(&[img, txt]);
        let fused = self.lin(g, both, self.ids.pf_w, self.ids.pf_b);
        let fused = gate(g, fused);
        Ok(PromptEncoding {
            img,
            txt,
            fused,
            mask,
            ids: set.slots.iter().map(|s| s.as_ref().map(|s| s.prompt)).collect(),
        })
    }

    /// Build the per-episode memory. With prompts the keys are `[X; fused prompts]`.
    pub fn context(
        &self,
        g: &mut Graph,
        instruction: InstructionEncoding,
        prompts: Option<PromptEncoding>,
    ) -> EpisodeContext {
        let n_tokens = g.value(instruction.x).rows;
        let (memory_src, mask) = match &prompts {
            Some(p) => {
                let m = g.concat_rows(&[instruction.x, p.fused]);
                let mut mask = vec![true; n_tokens];
                mask.extend_from_slice(&p.mask);
                (m, Some(mask))
            }
            None => (instruction.x, None),
        };
        let memory = self
            .ids
            .cross
            .iter()
            .map(|b| project_memory(g, &self.params, b, memory_src))
            .collect();
        EpisodeContext {
            instruction,
            prompts,
            n_tokens,
            mask,
            memory,
        }
    }

    /// One decision from state `state` (`1 × d`) given raw candidate features (`J × feature_dim`).
    pub fn decide_step(
        &self,
        g: &mut Graph,
        ctx: &EpisodeContext,
        state: Var,
        candidates: &Mat,
    ) -> Result<StepOut> {
        if candidates.rows == 0 {
            return Err(Error::EmptyInput("candidate set".into()));
        }
        if candidates.cols != self.cfg.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.feature_dim,
                got: candidates.cols,
            });
        }
        let d = self.cfg.hidden;
        let heads = self.cfg.heads;
        let raw = g.constant(candidates.clone());
        let v = self.lin(g, raw, self.ids.vis_w, self.ids.vis_b);
        let stop = self.p(g, self.ids.stop);
        let vt = g.concat_rows(&[v, stop]);
        let k = g.concat_rows(&[state, vt]);

        let mut rows = k;
        let mut last_weights = Vec::new();
        for (block, &mem) in self.ids.cross.iter().zip(&ctx.memory) {
            let (w, out) =
                attention_block(g, &self.params, block, rows, Some(mem), heads, ctx.mask.as_deref())?;
            rows = out;
            last_weights = w;
        }
        let k_att = rows;

        // head-averaged attention of the state row
        let state_rows: Vec<Var> = last_weights.iter().map(|&w| g.slice_rows(w, 0, 1)).collect();
        let alpha = if state_rows.len() == 1 {
            state_rows[0]
        } else {
            let mut acc = state_rows[0];
            for &r in &state_rows[1..] {
                acc = g.add(acc, r);
            }
            g.scale(acc, 1.0 / heads as f64)
        };
        let n_keys = g.value(alpha).cols;
        let alpha_text = g.slice_cols(alpha, 0, ctx.n_tokens);
        let text_weights = match &ctx.prompts {
            Some(_) => renormalize(g, alpha_text),
            None => alpha_text,
        };
        let x_att = g.matmul(text_weights, ctx.instruction.x);
        let (alpha_prompt, p_img_att, p_txt_att) = match &ctx.prompts {
            Some(p) => {
                let a2 = g.slice_cols(alpha, ctx.n_tokens, n_keys);
                let w2 = if p.n_valid() > 0 { renormalize(g, a2) } else { a2 };
                let pi = g.matmul(w2, p.img);
                let pu = g.matmul(w2, p.txt);
                (Some(a2), Some(pi), Some(pu))
            }
            None => (None, None, None),
        };

        let n_rows = g.value(k_att).rows;
        let s_row = g.slice_rows(k_att, 0, 1);
        let cand_rows = g.slice_rows(k_att, 1, n_rows);
        let q = self.lin(g, s_row, self.ids.dec_wq, self.ids.dec_bq);
        let kk = self.lin(g, cand_rows, self.ids.dec_wk, self.ids.dec_bk);
        let logits = g.matmul_nt(q, kk);
        let logits = g.scale(logits, 1.0 / (d as f64).sqrt());
        let beta = g.softmax(logits, None)?;
        let log_beta = g.log_softmax(logits);
        let v_att = g.matmul(beta, vt);

        let cat = g.concat_cols(&[x_att, v_att, state]);
        let upd = self.lin(g, cat, self.ids.upd_w, self.ids.upd_b);
        let upd = g.tanh(upd);
        let res = g.add(state, upd);
        let (lg, lb) = (self.p(g, self.ids.upd_ln_g), self.p(g, self.ids.upd_ln_b));
        let next_state = g.layer_norm(res, lg, lb);
        let value = self.lin(g, s_row, self.ids.critic_w, self.ids.critic_b);

        Ok(StepOut {
            k,
            k_att,
            alpha,
            alpha_text,
            alpha_prompt,
            beta,
            log_beta,
            x_att,
            v_att,
            p_img_att,
            p_txt_att,
            value,
            next_state,
        })
    }
}

/// A positive weight row rescaled to sum to one.
fn renormalize(g: &mut Graph, w: Var) -> Var {
    let total = g.sum(w);
    let log_total = g.log(total);
    let log_inv = g.scale(log_total, -1.0);
    let inv = g.exp(log_inv);
    g.matmul(inv, w)
}
