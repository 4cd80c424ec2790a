//! Episode rollouts under teacher forcing, sampling, or greedy decoding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::prompt_base::RetrievedPromptSet;
use crate::tensor::Mat;
use crate::text::tokenize;
use crate::util::{argmax_lowest, to_f64};
use crate::world::{CandidateSet, Episode, NavGraph, NodeId, StepOutcome};

use super::{Agent, EpisodeContext, StepOut};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    /// Execute ground-truth actions while scoring the policy.
    TeacherForcing,
    /// Draw actions from the policy.
    Sampling,
    /// Take the most probable action.
    Greedy,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub node: NodeId,
    pub candidates: CandidateSet,
    pub action: usize,
    /// Action that follows the shortest route to the goal.
    pub teacher: usize,
    pub out: StepOut,
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub path: Vec<NodeId>,
    pub steps: Vec<StepRecord>,
    pub ctx: EpisodeContext,
    /// Whether the episode ended with the stop action rather than the step limit.
    pub stopped: bool,
}

/// Numeric copy of one decision, for inspection and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub k: Mat,
    pub k_att: Mat,
    pub alpha: Vec<f64>,
    pub alpha_text: Vec<f64>,
    pub alpha_prompt: Vec<f64>,
    pub beta: Vec<f64>,
    pub x_att: Vec<f64>,
    pub v_att: Vec<f64>,
    pub p_img_att: Option<Vec<f64>>,
    pub p_txt_att: Option<Vec<f64>>,
    pub action: usize,
}

pub type DecisionTrace = Vec<TraceStep>;

impl Rollout {
    pub fn trace(&self, g: &Graph) -> DecisionTrace {
        let row = |v| g.value(v).data.clone();
        self.steps
            .iter()
            .map(|s| TraceStep {
                k: g.value(s.out.k).clone(),
                k_att: g.value(s.out.k_att).clone(),
                alpha: row(s.out.alpha),
                alpha_text: row(s.out.alpha_text),
                alpha_prompt: s.out.alpha_prompt.map(row).unwrap_or_default(),
                beta: row(s.out.beta),
                x_att: row(s.out.x_att),
                v_att: row(s.out.v_att),
                p_img_att: s.out.p_img_att.map(row),
                p_txt_att: s.out.p_txt_att.map(row),
                action: s.action,
            })
            .collect()
    }
}

/// Ground-truth action at `node`: follow the episode path while on it, otherwise the shortest
/// route to the goal; stop at the goal.
pub fn teacher_action(
    graph: &NavGraph,
    episode: &Episode,
    node: NodeId,
    step: usize,
    cands: &CandidateSet,
) -> Result<usize> {
    let goal = episode.goal();
    if node == goal {
        return Ok(cands.stop_index());
    }
    let next = if episode.path.get(step) == Some(&node) && step + 1 < episode.path.len() {
        episode.path[step + 1]
    } else {
        graph.shortest_path(node, goal)?[1]
    };
    cands
        .index_of(next)
        .ok_or(Error::NotAdjacent(node, next))
}

fn candidate_features(graph: &NavGraph, cands: &CandidateSet, dim: usize) -> Mat {
    let mut m = Mat::zeros(cands.moves.len(), dim);
    for (r, c) in cands.moves.iter().enumerate() {
        let f = &graph.panorama(cands.node)[c.view].feature;
        m.row_mut(r).copy_from_slice(&to_f64(f));
    }
    m
}

/// Run one episode. Dropout in the prompt encoders is active when `train` is set; it and
/// sampling both draw from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    agent: &Agent,
    g: &mut Graph,
    graph: &NavGraph,
    episode: &Episode,
    prompts: Option<&RetrievedPromptSet>,
    mode: RolloutMode,
    max_steps: usize,
    rng: &mut ChaCha8Rng,
    train: bool,
) -> Result<Rollout> {
    let tokens = tokenize(&episode.instruction);
    let instr = agent.encode_instruction(g, &tokens)?;
    let prompt_enc = match prompts {
        Some(set) => Some(agent.encode_prompts(g, set, if train { Some(&mut *rng) } else { None })?),
        None => None,
    };
    let ctx = agent.context(g, instr, prompt_enc);
    let limit = match mode {
        RolloutMode::TeacherForcing => episode.path.len(),
        _ => max_steps.max(1),
    };
    let mut node = episode.start();
    let mut path = vec![node];
    let mut steps = Vec::new();
    let mut state = instr.s0;
    let mut stopped = false;
    for t in 0..limit {
        let cands = graph.candidates(node)?;
        let mut feats = candidate_features(graph, &cands, agent.cfg.feature_dim);
        if train {
            feature_dropout(&mut feats, agent.cfg.feature_dropout, rng);
        }
        let out = agent.decide_step(g, &ctx, state, &feats)?;
        let teacher = teacher_action(graph, episode, node, t, &cands)?;
        let action = match mode {
            RolloutMode::TeacherForcing => teacher,
            RolloutMode::Greedy => argmax_lowest(&g.value(out.beta).data)
                .ok_or_else(|| Error::InvalidValue("non-finite action distribution".into()))?,
            RolloutMode::Sampling => sample(&g.value(out.beta).data, rng),
        };
        state = out.next_state;
        steps.push(StepRecord {
            node,
            candidates: cands,
            action,
            teacher,
            out,
        });
        match graph.step(node, action)? {
            StepOutcome::Stopped => {
                stopped = true;
                break;
            }
            StepOutcome::Moved(next) => {
                node = next;
                path.push(node);
            }
        }
    }
    Ok(Rollout {
        path,
        steps,
        ctx,
        stopped,
    })
}

fn feature_dropout(feats: &mut Mat, rate: f64, rng: &mut ChaCha8Rng) {
    if rate == 0.0 {
        return;
    }
    for v in feats.data.iter_mut() {
        *v = if rng.gen::<f64>() < rate { 0.0 } else { *v / (1.0 - rate) };
    }
}

fn sample(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
