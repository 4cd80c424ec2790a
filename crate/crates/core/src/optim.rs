//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::agent::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments per parameter, allocated on first use.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            step: 0,
            m: vec![None; n_params],
            v: vec![None; n_params],
        }
    }
}

/// One update. Parameters without a gradient are left untouched, decay included.
pub fn optimize_step(
    params: &mut ParamStore,
    grads: &[(usize, Mat)],
    lr: f64,
    cfg: &AdamWConfig,
    state: &mut AdamState,
) -> Result<()> {
    for (id, g) in grads {
        if g.shape() != params.get(*id).shape() {
            return Err(Error::DimensionMismatch {
                expected: params.get(*id).len(),
                got: g.len(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(params.name(*id).to_string()));
        }
    }
    if state.m.len() < params.len() {
        state.m.resize(params.len(), None);
        state.v.resize(params.len(), None);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (id, g) in grads {
        let p = params.get_mut(*id);
        let m = state.m[*id].get_or_insert_with(|| Mat::zeros(g.rows, g.cols));
        let v = state.v[*id].get_or_insert_with(|| Mat::zeros(g.rows, g.cols));
        for k in 0..g.len() {
            let gk = g.data[k];
            p.data[k] *= 1.0 - lr * cfg.weight_decay;
            m.data[k] = cfg.beta1 * m.data[k] + (1.0 - cfg.beta1) * gk;
            v.data[k] = cfg.beta2 * v.data[k] + (1.0 - cfg.beta2) * gk * gk;
            let mh = m.data[k] / bc1;
            let vh = v.data[k] / bc2;
            p.data[k] -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Mat::from_vec(1, 1, vec![x]));
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut s = scalar_store(0.3);
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
        let mut st = AdamState::new(1);
        optimize_step(&mut s, &[(0, Mat::zeros(1, 1))], 0.1, &cfg, &mut st).unwrap();
        assert_eq!(s.get(0).data[0], 0.3);
    }

    #[test]
    fn first_step_by_hand() {
        let mut s = scalar_store(0.5);
        let cfg = AdamWConfig::default();
        let mut st = AdamState::new(1);
        optimize_step(&mut s, &[(0, Mat::filled(1, 1, 1.0))], 0.01, &cfg, &mut st).unwrap();
        // m̂ = 1, v̂ = 1
        let want = 0.5 * (1.0 - 0.01 * 0.01) - 0.01 * 1.0 / (1.0 + 1e-8);
        assert!((s.get(0).data[0] - want).abs() < 1e-15);
    }

    #[test]
    fn decay_only_scales() {
        let mut s = scalar_store(2.0);
        let cfg = AdamWConfig { weight_decay: 0.1, ..AdamWConfig::default() };
        let mut st = AdamState::new(1);
        optimize_step(&mut s, &[(0, Mat::zeros(1, 1))], 1.0, &cfg, &mut st).unwrap();
        assert!((s.get(0).data[0] - 1.8).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut s = scalar_store(2.0);
        let mut st = AdamState::new(1);
        let r = optimize_step(&mut s, &[(0, Mat::filled(1, 1, f64::NAN))], 1.0, &AdamWConfig::default(), &mut st);
        assert!(matches!(r, Err(Error::NonFiniteGradient(_))));
        assert_eq!(s.get(0).data[0], 2.0);
    }
}
