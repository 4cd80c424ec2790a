//! Multi-head scaled dot-product attention and the residual attention block built on it.

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::tensor::Mat;

use super::params::{BlockIds, ParamStore};

/// Attention over already-projected `q` (`n_q × d`), `k` and `v` (`n_k × d`). Heads split the
/// columns evenly; logits are scaled by `scale`. Keys with `mask[j] == false` get zero weight.
///
/// Returns the per-head weight matrices (`n_q × n_k`) and the concatenated head outputs.
pub fn multi_head_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    scale: f64,
    mask: Option<&[bool]>,
) -> Result<(Vec<Var>, Var)> {
    let d = g.value(q).cols;
    assert_eq!(d % heads, 0, "width {d} not divisible by {heads} heads");
    let dh = d / heads;
    let mut weights = Vec::with_capacity(heads);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (a, b) = (h * dh, (h + 1) * dh);
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (g.slice_cols(q, a, b), g.slice_cols(k, a, b), g.slice_cols(v, a, b))
        };
        let logits = g.matmul_nt(qh, kh);
        let logits = g.scale(logits, scale);
        let w = g.softmax(logits, mask)?;
        outs.push(g.matmul(w, vh));
        weights.push(w);
    }
    let out = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
    Ok((weights, out))
}

pub(crate) fn param(g: &mut Graph, store: &ParamStore, id: usize) -> Var {
    g.param(id, store.get(id))
}

pub(crate) fn linear(g: &mut Graph, store: &ParamStore, x: Var, w: usize, b: usize) -> Var {
    let w = param(g, store, w);
    let b = param(g, store, b);
    g.linear(x, w, b)
}

/// Key and value projections of a block's memory, computed once and reused across queries.
pub fn project_memory(g: &mut Graph, store: &ParamStore, ids: &BlockIds, memory: Var) -> (Var, Var) {
    let k = linear(g, store, memory, ids.wk, ids.bk);
    let v = linear(g, store, memory, ids.wv, ids.bv);
    (k, v)
}

/// Attention sublayer then feed-forward sublayer, each with a residual connection and layer norm.
/// `memory` holds the projected keys and values; `None` attends `x` to itself.
#[allow(clippy::too_many_arguments)]
pub fn attention_block(
    g: &mut Graph,
    store: &ParamStore,
    ids: &BlockIds,
    x: Var,
    memory: Option<(Var, Var)>,
    heads: usize,
    mask: Option<&[bool]>,
) -> Result<(Vec<Var>, Var)> {
    let d = g.value(x).cols;
    let (k, v) = match memory {
        Some(kv) => kv,
        None => project_memory(g, store, ids, x),
    };
    let q = linear(g, store, x, ids.wq, ids.bq);
    let (weights, ctx) = multi_head_attention(g, q, k, v, heads, 1.0 / (d as f64).sqrt(), mask)?;
    let a = linear(g, store, ctx, ids.wo, ids.bo);
    let h = g.add(x, a);
    let (lg, lb) = (param(g, store, ids.ln1_g), param(g, store, ids.ln1_b));
    let h = g.layer_norm(h, lg, lb);
    let f = linear(g, store, h, ids.w1, ids.b1);
    let f = g.gelu(f);
    let f = linear(g, store, f, ids.w2, ids.b2);
    let o = g.add(h, f);
    let (lg, lb) = (param(g, store, ids.ln2_g), param(g, store, ids.ln2_b));
    Ok((weights, g.layer_norm(o, lg, lb)))
}

/// Row-mask as a matrix: row `r` is all ones if `mask[r]`, else zeros.
pub(crate) fn row_mask(mask: &[bool], cols: usize) -> Mat {
    let mut m = Mat::zeros(mask.len(), cols);
    for (r, &keep) in mask.iter().enumerate() {
        if keep {
            m.row_mut(r).iter_mut().for_each(|x| *x = 1.0);
        }
    }
    m
}
