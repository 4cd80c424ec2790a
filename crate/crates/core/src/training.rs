//! Two-stage training: the prompt-free agent first, then continued training with retrieved
//! action prompts. Imitation and reinforcement passes alternate; each pass is one AdamW step
//! on a batch of episodes. The iterate with the best validation SPL is kept.

use std::collections::HashMap;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{rollout, round_f32, Agent, RolloutMode};
use crate::autograd::{Graph, Var};
use crate::checkpoint::{Checkpoint, Provenance};
use crate::dataset::Dataset;
use crate::encoders::DualEncoder;
use crate::error::{Error, Result};
use crate::losses::{
    discounted_returns, imitation_loss, mean_of, modality_alignment_loss, rl_loss,
    sequential_consistency_loss, total_loss, trajectory_rewards, LossConfig, LossTerms, Pass,
};
use crate::metrics::{aggregate, score, EpisodeMetrics, Report};
use crate::optim::{optimize_step, AdamState, AdamWConfig};
use crate::prompt_base::{retrieve_prompts, PromptBase, RetrievalConfig, RetrievedPromptSet, Vocabularies};
use crate::tensor::Mat;
use crate::util::{rng_from, write_atomic};
use crate::world::{Episode, NodeId};

const TRAIN_STREAM: u64 = 0x0054_5241_494e;
const EVAL_STREAM: u64 = 0x4556_414c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub iters_stage1: usize,
    pub iters_stage2: usize,
    pub seed: u64,
    /// Validation cadence in iterations.
    pub eval_every: usize,
    /// Evaluations without SPL improvement before stopping early.
    pub patience: usize,
    /// Imitation passes per reinforcement pass.
    pub il_per_rl: usize,
    /// Step limit for sampled and greedy rollouts.
    pub max_steps: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub loss: LossConfig,
    pub optim: AdamWConfig,
    pub retrieval: RetrievalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr_stage1: 1e-5,
            lr_stage2: 1e-6,
            iters_stage1: 2000,
            iters_stage2: 1000,
            seed: 0,
            eval_every: 100,
            patience: 5,
            il_per_rl: 1,
            max_steps: 10,
            grad_clip: 0.0,
            loss: LossConfig::default(),
            optim: AdamWConfig::default(),
            retrieval: RetrievalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.lr_stage1 > 0.0 && self.lr_stage2 > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("train.eval_every must be positive".into()));
        }
        self.loss.validate()
    }

    pub fn pass_at(&self, iter: usize) -> Pass {
        if iter % (self.il_per_rl + 1) < self.il_per_rl {
            Pass::Imitation
        } else {
            Pass::Reinforcement
        }
    }
}

/// One training-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub iter: usize,
    #[serde(rename = "L_RL")]
    pub l_rl: f64,
    #[serde(rename = "L_IL")]
    pub l_il: f64,
    #[serde(rename = "L_c")]
    pub l_c: f64,
    #[serde(rename = "L_a")]
    pub l_a: f64,
    pub total: f64,
    pub pass: Pass,
}

pub fn write_log(path: &Path, lines: &[LogLine]) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(l)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Retrieved prompt sets keyed by episode id, computed once before training or evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptCache {
    sets: HashMap<String, RetrievedPromptSet>,
}

impl PromptCache {
    pub fn build<'a>(
        episodes: impl IntoIterator<Item = &'a Episode>,
        base: &PromptBase,
        vocabs: &Vocabularies,
        encoder: &dyn DualEncoder,
        cfg: RetrievalConfig,
    ) -> Result<Self> {
        let mut sets = HashMap::new();
        for ep in episodes {
            sets.insert(ep.id.clone(), retrieve_prompts(&ep.instruction, base, vocabs, encoder, cfg)?);
        }
        Ok(Self { sets })
    }

    pub fn get(&self, id: &str) -> Result<&RetrievedPromptSet> {
        self.sets
            .get(id)
            .ok_or_else(|| Error::InvalidEpisode(format!("{id}: no retrieved prompts")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub iter: usize,
    pub report: Report,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Iterate with the highest validation SPL.
    pub best: Checkpoint,
    pub log: Vec<LogLine>,
    pub evals: Vec<EvalPoint>,
    /// Iterations actually run.
    pub iterations: usize,
}

/// Greedy rollouts over `episodes`.
pub fn evaluate(
    agent: &Agent,
    data: &Dataset,
    episodes: &[Episode],
    prompts: Option<&PromptCache>,
    max_steps: usize,
    radius: f64,
) -> Result<(Vec<EpisodeMetrics>, Vec<Vec<NodeId>>)> {
    let mut rng = rng_from(&[EVAL_STREAM]);
    let mut metrics = Vec::with_capacity(episodes.len());
    let mut paths = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let graph = data.world(ep)?;
        let set = prompts.map(|c| c.get(&ep.id)).transpose()?;
        let mut g = Graph::new();
        let ro = rollout(agent, &mut g, graph, ep, set, RolloutMode::Greedy, max_steps, &mut rng, false)?;
        metrics.push(score(graph, &ro.path, &ep.path, radius)?);
        paths.push(ro.path);
    }
    Ok((metrics, paths))
}

pub fn evaluate_report(
    agent: &Agent,
    data: &Dataset,
    prompts: Option<&PromptCache>,
    cfg: &TrainConfig,
) -> Result<Report> {
    let (m, _) = evaluate(agent, data, &data.val, prompts, cfg.max_steps, cfg.loss.success_radius)?;
    aggregate("val_unseen", &m, cfg.loss.success_radius)
}

/// Loss terms of one pass over a batch, built on `g`.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    agent: &Agent,
    g: &mut Graph,
    data: &Dataset,
    batch: &[&Episode],
    prompts: Option<&PromptCache>,
    pass: Pass,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(LossTerms, Var)> {
    let mut il = Vec::new();
    let mut rl = Vec::new();
    let mut rl_steps = 0;
    let mut cons = Vec::new();
    let mut img_rows = Vec::new();
    let mut txt_rows = Vec::new();
    let mut groups = Vec::new();
    let mut ids = Vec::new();
    let mode = match pass {
        Pass::Imitation => RolloutMode::TeacherForcing,
        Pass::Reinforcement => RolloutMode::Sampling,
    };
    for (e, ep) in batch.iter().enumerate() {
        let graph = data.world(ep)?;
        let set = prompts.map(|c| c.get(&ep.id)).transpose()?;
        let ro = rollout(agent, g, graph, ep, set, mode, cfg.max_steps, rng, true)?;
        match pass {
            Pass::Imitation => {
                let lb: Vec<Var> = ro.steps.iter().map(|s| s.out.log_beta).collect();
                let teacher: Vec<usize> = ro.steps.iter().map(|s| s.teacher).collect();
                il.push(imitation_loss(g, &lb, &teacher)?);
            }
            Pass::Reinforcement => {
                let nodes: Vec<NodeId> = ro.steps.iter().map(|s| s.node).collect();
                let rewards =
                    trajectory_rewards(graph, &nodes, *ro.path.last().unwrap(), ep.goal(), &cfg.loss);
                let returns = discounted_returns(&rewards, cfg.loss.gamma);
                let lp: Vec<Var> = ro.steps.iter().map(|s| g.gather(s.out.log_beta, 0, s.action)).collect();
                let values: Vec<Var> = ro.steps.iter().map(|s| s.out.value).collect();
                let baselines: Vec<f64> = values.iter().map(|&v| g.scalar_value(v)).collect();
                rl.push(rl_loss(g, &lp, &values, &returns, &baselines)?);
                rl_steps += lp.len();
            }
        }
        if let Some(p) = ro.ctx.prompts.as_ref().filter(|p| p.n_valid() > 0) {
            let mut per_step = Vec::with_capacity(ro.steps.len());
            for s in &ro.steps {
                let (pi, pu) = (s.out.p_img_att.unwrap(), s.out.p_txt_att.unwrap());
                // the agent's own attended features are targets, not something to pull toward the prompts
                let (va, xa) = (g.detach(s.out.v_att), g.detach(s.out.x_att));
                per_step.push(sequential_consistency_loss(g, pi, va, pu, xa)?);
            }
            cons.push(mean_of(g, &per_step).expect("rollouts take at least one step"));
            if pass == Pass::Imitation {
                let n = p.n_valid();
                img_rows.push(g.slice_rows(p.img, 0, n));
                txt_rows.push(g.slice_rows(p.txt, 0, n));
                groups.extend(std::iter::repeat_n(e, n));
                ids.extend(p.ids.iter().flatten().copied());
            }
        }
    }
    let alignment = if img_rows.is_empty() {
        None
    } else {
        let img = g.concat_rows(&img_rows);
        let txt = g.concat_rows(&txt_rows);
        Some(modality_alignment_loss(g, img, txt, &groups, &ids, cfg.loss.tau2)?)
    };
    // trajectory sums normalized by the number of sampled steps in the batch
    let rl = mean_of(g, &rl).map(|m| g.scale(m, rl.len() as f64 / rl_steps.max(1) as f64));
    let terms = LossTerms {
        rl,
        il: mean_of(g, &il),
        consistency: mean_of(g, &cons),
        alignment,
    };
    let total = total_loss(g, &terms, &cfg.loss, pass);
    Ok((terms, total))
}

fn clip(grads: &mut [(usize, Mat)], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.iter().map(|(_, g)| g.data.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.data.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Shared loop of both stages.
pub struct StageRun<'a> {
    pub cfg: &'a TrainConfig,
    pub data: &'a Dataset,
    pub prompts: Option<&'a PromptCache>,
    pub stage: u8,
    pub lr: f64,
    pub iterations: usize,
    pub provenance: Provenance,
}

impl StageRun<'_> {
    pub fn run(&self, mut agent: Agent) -> Result<TrainOutcome> {
        let cfg = self.cfg;
        cfg.validate()?;
        if self.data.train.is_empty() {
            return Err(Error::EmptyInput("no training episodes".into()));
        }
        let mut rng = rng_from(&[TRAIN_STREAM, cfg.seed, u64::from(self.stage)]);
        let mut opt = AdamState::new(agent.params.len());
        let mut order: Vec<usize> = Vec::new();
        let mut log = Vec::with_capacity(self.iterations);
        let mut evals = Vec::new();

        let snapshot = |agent: &Agent, iter: usize, spl: f64| Checkpoint {
            agent: agent.clone(),
            provenance: Provenance {
                stage: self.stage,
                iteration: iter,
                val_spl: Some(spl),
                ..self.provenance.clone()
            },
        };
        let first = evaluate_report(&agent, self.data, self.prompts, cfg)?;
        info!("stage {} iter 0: val SR {:.1} SPL {:.1}", self.stage, first.sr, first.spl);
        let mut best_spl = first.spl;
        let mut best = snapshot(&agent, 0, first.spl);
        evals.push(EvalPoint { iter: 0, report: first });
        let mut stale = 0;
        let mut done = 0;

        for iter in 0..self.iterations {
            let mut batch = Vec::with_capacity(cfg.batch_size);
            while batch.len() < cfg.batch_size {
                if order.is_empty() {
                    order = (0..self.data.train.len()).collect();
                    order.shuffle(&mut rng);
                }
                batch.push(&self.data.train[order.pop().unwrap()]);
            }
            let pass = cfg.pass_at(iter);
            let mut g = Graph::new();
            let (terms, total) =
                batch_loss(&agent, &mut g, self.data, &batch, self.prompts, pass, cfg, &mut rng)?;
            let val = |v: Option<Var>| v.map_or(0.0, |v| g.scalar_value(v));
            let line = LogLine {
                iter,
                l_rl: val(terms.rl),
                l_il: val(terms.il),
                l_c: val(terms.consistency),
                l_a: val(terms.alignment),
                total: g.scalar_value(total),
                pass,
            };
            if !line.total.is_finite() {
                return Err(Error::Divergence {
                    iter,
                    pass: pass.as_str().into(),
                    detail: format!("{line:?}"),
                });
            }
            debug!("{}", serde_json::to_string(&line)?);
            log.push(line);
            let mut grads = g.backward(total);
            for (id, gr) in &grads {
                if !gr.is_finite() {
                    return Err(Error::Divergence {
                        iter,
                        pass: pass.as_str().into(),
                        detail: format!("non-finite gradient for {}", agent.params.name(*id)),
                    });
                }
            }
            clip(&mut grads, cfg.grad_clip);
            optimize_step(&mut agent.params, &grads, self.lr, &cfg.optim, &mut opt)?;
            for (id, _) in &grads {
                round_f32(agent.params.get_mut(*id));
            }
            done = iter + 1;

            if done % cfg.eval_every == 0 || done == self.iterations {
                let r = evaluate_report(&agent, self.data, self.prompts, cfg)?;
                info!("stage {} iter {done}: val SR {:.1} SPL {:.1}", self.stage, r.sr, r.spl);
                if r.spl > best_spl {
                    best_spl = r.spl;
                    best = snapshot(&agent, done, r.spl);
                    stale = 0;
                } else {
                    stale += 1;
                }
                evals.push(EvalPoint { iter: done, report: r });
                if cfg.patience > 0 && stale >= cfg.patience {
                    info!("stage {}: no SPL gain in {stale} evaluations, stopping", self.stage);
                    break;
                }
            }
        }
        Ok(TrainOutcome {
            best,
            log,
            evals,
            iterations: done,
        })
    }
}

/// Train the prompt-free agent from fresh parameters.
pub fn train_stage1(cfg: &TrainConfig, agent: Agent, data: &Dataset) -> Result<TrainOutcome> {
    StageRun {
        cfg,
        data,
        prompts: None,
        stage: 1,
        lr: cfg.lr_stage1,
        iterations: cfg.iters_stage1,
        provenance: Provenance {
            seed: cfg.seed,
            ..Provenance::default()
        },
    }
    .run(agent)
}

/// Prompt inputs of stage 2.
pub struct PromptInputs<'a> {
    pub base: &'a PromptBase,
    pub vocabs: &'a Vocabularies,
    pub encoder: &'a dyn DualEncoder,
}

/// Continue from a checkpoint. With prompt inputs the agent trains with retrieved prompts;
/// without them it continues prompt-free under the same budget.
pub fn train_stage2(
    cfg: &TrainConfig,
    start: &Checkpoint,
    prompts: Option<PromptInputs<'_>>,
    data: &Dataset,
) -> Result<TrainOutcome> {
    let mut provenance = Provenance {
        seed: cfg.seed,
        ..start.provenance.clone()
    };
    let cache = match &prompts {
        Some(p) => {
            let spec = p.encoder.spec();
            if &p.base.meta.encoder != spec {
                return Err(Error::CheckpointMismatch(
                    "prompt base was built with a different encoder".into(),
                ));
            }
            let fp = p.base.fingerprint()?;
            if let Some(e) = &start.provenance.encoder {
                if e != spec {
                    return Err(Error::CheckpointMismatch(
                        "checkpoint was trained with a different encoder".into(),
                    ));
                }
            }
            if let Some(b) = &start.provenance.prompt_base {
                if *b != fp {
                    return Err(Error::CheckpointMismatch(
                        "checkpoint was trained with a different prompt base".into(),
                    ));
                }
            }
            if spec.dim != start.agent.cfg.prompt_dim {
                return Err(Error::CheckpointMismatch(format!(
                    "encoder dim {} differs from model prompt width {}",
                    spec.dim, start.agent.cfg.prompt_dim
                )));
            }
            provenance.encoder = Some(spec.clone());
            provenance.prompt_base = Some(fp);
            Some(PromptCache::build(
                data.train.iter().chain(&data.val),
                p.base,
                p.vocabs,
                p.encoder,
                cfg.retrieval,
            )?)
        }
        None => None,
    };
    StageRun {
        cfg,
        data,
        prompts: cache.as_ref(),
        stage: 2,
        lr: cfg.lr_stage2,
        iterations: cfg.iters_stage2,
        provenance,
    }
    .run(start.agent.clone())
}
