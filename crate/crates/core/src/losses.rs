//! Training objectives: prompt modality alignment, sequential consistency, imitation,
//! advantage actor-critic, and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::world::{NavGraph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pass {
    #[serde(rename = "IL")]
    Imitation,
    #[serde(rename = "RL")]
    Reinforcement,
}

impl Pass {
    pub fn as_str(&self) -> &'static str {
        match self {
            Pass::Imitation => "IL",
            Pass::Reinforcement => "RL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the imitation term.
    pub il_weight: f64,
    /// Weight of the sequential consistency term.
    pub consistency_weight: f64,
    /// Weight of the modality alignment term (imitation passes only).
    pub alignment_weight: f64,
    /// Alignment temperature.
    pub tau2: f64,
    pub gamma: f64,
    pub success_bonus: f64,
    pub success_radius: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            il_weight: 0.2,
            consistency_weight: 0.01,
            alignment_weight: 0.0001,
            tau2: 0.1,
            gamma: 0.9,
            success_bonus: 2.0,
            success_radius: 3.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.il_weight, self.consistency_weight, self.alignment_weight];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        if self.tau2.is_nan() || self.tau2 <= 0.0 {
            return Err(Error::Config("loss.tau2 must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("loss.gamma must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// InfoNCE between paired image and text sub-prompt encodings (rows of `img` and `txt`).
///
/// Row `n` is contrasted against text rows from other samples (`groups[m] != groups[n]`);
/// rows holding the same base prompt (`ids[m] == ids[n]`) are not treated as negatives.
/// The loss is averaged over rows.
pub fn modality_alignment_loss(
    g: &mut Graph,
    img: Var,
    txt: Var,
    groups: &[usize],
    ids: &[usize],
    tau2: f64,
) -> Result<Var> {
    let n = g.value(img).rows;
    if n == 0 {
        return Err(Error::NoValidPairs);
    }
    if g.value(txt).rows != n || groups.len() != n || ids.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: g.value(txt).rows,
        });
    }
    let a = g.normalize_rows(img);
    let b = g.normalize_rows(txt);
    let sims = g.matmul_nt(a, b);
    let logits = g.scale(sims, 1.0 / tau2);
    let mut terms = Vec::with_capacity(n);
    for r in 0..n {
        let mask: Vec<bool> = (0..n)
            .map(|m| m == r || (groups[m] != groups[r] && ids[m] != ids[r]))
            .collect();
        let row = g.slice_rows(logits, r, r + 1);
        let p = g.softmax(row, Some(&mask))?;
        let p = g.gather(p, 0, r);
        terms.push(g.log(p));
    }
    let all = g.concat_cols(&terms);
    let m = g.mean(all);
    Ok(g.scale(m, -1.0))
}

/// `‖P̃ᵘ − X̃‖² + ‖P̃ⁱ − Ṽ‖²` for one step.
pub fn sequential_consistency_loss(
    g: &mut Graph,
    p_img_att: Var,
    v_att: Var,
    p_txt_att: Var,
    x_att: Var,
) -> Result<Var> {
    for (a, b) in [(p_img_att, v_att), (p_txt_att, x_att)] {
        let (sa, sb) = (g.value(a).shape(), g.value(b).shape());
        if sa != sb {
            return Err(Error::DimensionMismatch {
                expected: sa.1,
                got: sb.1,
            });
        }
    }
    let di = g.sub(p_img_att, v_att);
    let du = g.sub(p_txt_att, x_att);
    let li = g.sum_squares(di);
    let lu = g.sum_squares(du);
    Ok(g.add(li, lu))
}

/// Mean of per-step terms; `None` for an empty list.
pub fn mean_of(g: &mut Graph, terms: &[Var]) -> Option<Var> {
    if terms.is_empty() {
        return None;
    }
    let all = g.concat_cols(terms);
    Some(g.mean(all))
}

/// Mean negative log-probability of the teacher actions.
pub fn imitation_loss(g: &mut Graph, log_betas: &[Var], teacher: &[usize]) -> Result<Var> {
    if log_betas.is_empty() || log_betas.len() != teacher.len() {
        return Err(Error::EmptyInput("imitation loss needs one teacher action per step".into()));
    }
    let mut terms = Vec::with_capacity(teacher.len());
    for (&lb, &a) in log_betas.iter().zip(teacher) {
        let count = g.value(lb).cols;
        if a >= count {
            return Err(Error::ActionOutOfRange { index: a, count });
        }
        terms.push(g.gather(lb, 0, a));
    }
    let m = mean_of(g, &terms).expect("nonempty");
    Ok(g.scale(m, -1.0))
}

pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Per-step rewards of a trajectory: the reduction in geodesic distance to the goal, plus a
/// terminal bonus of `+success_bonus` if the final node lies within the success radius and
/// `-success_bonus` otherwise.
///
/// `decision_nodes[t]` is where decision `t` was taken; `final_node` is where the episode ended.
pub fn trajectory_rewards(
    graph: &NavGraph,
    decision_nodes: &[NodeId],
    final_node: NodeId,
    goal: NodeId,
    cfg: &LossConfig,
) -> Vec<f64> {
    let n = decision_nodes.len();
    let mut rewards: Vec<f64> = (0..n)
        .map(|t| {
            let after = decision_nodes.get(t + 1).copied().unwrap_or(final_node);
            graph.geodesic(decision_nodes[t], goal) - graph.geodesic(after, goal)
        })
        .collect();
    if let Some(last) = rewards.last_mut() {
        let ne = graph.geodesic(final_node, goal);
        *last += if ne < cfg.success_radius {
            cfg.success_bonus
        } else {
            -cfg.success_bonus
        };
    }
    rewards
}

/// `−Σ log π(a_t)·(R_t − b_t) + Σ (R_t − V_t)²`, where the baselines `b_t` are the critic's values
/// held fixed so that the policy term does not train the critic.
pub fn rl_loss(
    g: &mut Graph,
    log_probs: &[Var],
    values: &[Var],
    returns: &[f64],
    baselines: &[f64],
) -> Result<Var> {
    let n = log_probs.len();
    if values.len() != n || returns.len() != n || baselines.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: values.len().min(returns.len()).min(baselines.len()),
        });
    }
    if n == 0 {
        return Err(Error::EmptyInput("empty trajectory".into()));
    }
    let lp = g.concat_cols(log_probs);
    let adv: Vec<f64> = returns.iter().zip(baselines).map(|(r, b)| -(r - b)).collect();
    let adv = g.constant(crate::tensor::Mat::row_vector(adv));
    let pg = g.mul(lp, adv);
    let pg = g.sum(pg);
    let v = g.concat_cols(values);
    let r = g.constant(crate::tensor::Mat::row_vector(returns.to_vec()));
    let diff = g.sub(r, v);
    let vl = g.sum_squares(diff);
    Ok(g.add(pg, vl))
}

/// Loss components of one pass; absent terms count as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub rl: Option<Var>,
    pub il: Option<Var>,
    pub consistency: Option<Var>,
    pub alignment: Option<Var>,
}

/// `L_RL + λ1·L_IL + λ2·L_c + λ3·L_a`, with the alignment term only on imitation passes.
pub fn total_loss(g: &mut Graph, t: &LossTerms, cfg: &LossConfig, pass: Pass) -> Var {
    let mut parts = Vec::new();
    if let Some(rl) = t.rl {
        parts.push(rl);
    }
    for (term, w) in [(t.il, cfg.il_weight), (t.consistency, cfg.consistency_weight)] {
        if let Some(v) = term {
            parts.push(g.scale(v, w));
        }
    }
    if pass == Pass::Imitation {
        if let Some(a) = t.alignment {
            parts.push(g.scale(a, cfg.alignment_weight));
        }
    }
    if parts.is_empty() {
        return g.scalar(0.0);
    }
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = g.add(acc, p);
    }
    acc
}

/// Scalar form of [`total_loss`].
pub fn total_value(rl: f64, il: f64, c: f64, a: f64, cfg: &LossConfig, pass: Pass) -> f64 {
    let gate = if pass == Pass::Imitation { 1.0 } else { 0.0 };
    rl + cfg.il_weight * il + cfg.consistency_weight * c + gate * cfg.alignment_weight * a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mat;

    #[test]
    fn total_examples() {
        let cfg = LossConfig::default();
        assert!((total_value(1.0, 1.0, 1.0, 1.0, &cfg, Pass::Imitation) - 1.2101).abs() < 1e-12);
        assert!((total_value(1.0, 1.0, 1.0, 1.0, &cfg, Pass::Reinforcement) - 1.21).abs() < 1e-12);
        assert_eq!(total_value(0.0, 0.0, 0.0, 0.0, &cfg, Pass::Imitation), 0.0);
        let mut g = Graph::new();
        let one = g.scalar(1.0);
        let terms = LossTerms {
            rl: Some(one),
            il: Some(one),
            consistency: Some(one),
            alignment: Some(one),
        };
        let t = total_loss(&mut g, &terms, &cfg, Pass::Imitation);
        assert!((g.scalar_value(t) - 1.2101).abs() < 1e-12);
    }

    #[test]
    fn single_step_rl_instance() {
        let mut g = Graph::new();
        let p = -0.7;
        let lp = g.scalar(p);
        let v = g.scalar(0.0);
        let l = rl_loss(&mut g, &[lp], &[v], &[1.0], &[0.0]).unwrap();
        assert!((g.scalar_value(l) - (-p + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn returns_unroll() {
        let r = discounted_returns(&[1.0, 0.0, 2.0], 0.9);
        assert!((r[0] - (1.0 + 0.9 * 0.0 + 0.81 * 2.0)).abs() < 1e-12);
        assert!((r[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn alignment_degenerate_cases() {
        let mut g = Graph::new();
        let a = g.constant(Mat::from_vec(1, 2, vec![1.0, 0.5]));
        let b = g.constant(Mat::from_vec(1, 2, vec![0.2, 0.5]));
        let l = modality_alignment_loss(&mut g, a, b, &[0], &[0], 0.1).unwrap();
        assert_eq!(g.scalar_value(l), 0.0);
        let a = g.constant(Mat::from_vec(2, 2, vec![1.0, 0.0, 1.0, 0.0]));
        let l = modality_alignment_loss(&mut g, a, a, &[0, 1], &[0, 1], 0.1).unwrap();
        assert!((g.scalar_value(l) - 2f64.ln()).abs() < 1e-12);
    }
}
