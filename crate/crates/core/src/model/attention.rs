//! Multi-head self-attention and the post-norm block.

use rand::Rng;

use crate::autodiff::{Tape, Var, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Additive mask value for blocked attention entries.
pub const MASK_VALUE: f64 = -1e9;

/// Parameter handles of one attention + feed-forward block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub w_q: ParamId,
    pub b_q: ParamId,
    pub w_k: ParamId,
    pub b_k: ParamId,
    pub w_v: ParamId,
    pub b_v: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
    pub w_1: ParamId,
    pub b_1: ParamId,
    pub w_2: ParamId,
    pub b_2: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub heads: usize,
}

impl BlockParams {
    /// Registers block `n` (1-based) in `store`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        n: usize,
        d: usize,
        d_ff: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::contract(format!("{heads} heads do not divide d = {d}")));
        }
        let g = ParamGroup::Base;
        let sd = 1.0 / (d as f64).sqrt();
        let sff = 1.0 / (d_ff as f64).sqrt();
        let mut w = |store: &mut ParamStore, name: &str, shape: &[usize], std: f64| {
            store.add(format!("block{n}.{name}"), Tensor::randn(shape, std, rng), g)
        };
        let w_q = w(store, "w_q", &[d, d], sd);
        let w_k = w(store, "w_k", &[d, d], sd);
        let w_v = w(store, "w_v", &[d, d], sd);
        let w_o = w(store, "w_o", &[d, d], sd);
        let w_1 = w(store, "w_1", &[d, d_ff], sd);
        let w_2 = w(store, "w_2", &[d_ff, d], sff);
        let mut c = |name: &str, len: usize, v: f64| {
            store.add(format!("block{n}.{name}"), Tensor::full(&[len], v), g)
        };
        Ok(BlockParams {
            w_q,
            b_q: c("b_q", d, 0.0),
            w_k,
            b_k: c("b_k", d, 0.0),
            w_v,
            b_v: c("b_v", d, 0.0),
            w_o,
            b_o: c("b_o", d, 0.0),
            w_1,
            b_1: c("b_1", d_ff, 0.0),
            w_2,
            b_2: c("b_2", d, 0.0),
            ln1_gain: c("ln1_gain", d, 1.0),
            ln1_bias: c("ln1_bias", d, 0.0),
            ln2_gain: c("ln2_gain", d, 1.0),
            ln2_bias: c("ln2_bias", d, 0.0),
            heads,
        })
    }

    /// `4d² + 4d + 2·d·d_ff + d_ff + d + 4d`.
    pub fn param_count(d: usize, d_ff: usize) -> usize {
        4 * d * d + 4 * d + 2 * d * d_ff + d_ff + d + 4 * d
    }
}

/// Position inputs of one block, already cut to the sequence length.
#[derive(Clone, Copy, Debug, Default)]
pub struct BlockPosition {
    /// Added to the block input.
    pub additive: Option<Var>,
    /// `(B_q, B_k, B_v)` added after the projections.
    pub bias: Option<[Var; 3]>,
}

/// Attention output and the per-head probability matrices.
pub struct Attention {
    pub output: Var,
    pub probs: Vec<Var>,
}

fn project(tape: &mut Tape, x: Var, w: Var, b: Var, pos: Option<Var>) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    let y = tape.add(y, b)?;
    match pos {
        Some(p) => tape.add(y, p),
        None => Ok(y),
    }
}

/// Multi-head self-attention with per-head scale `1/√(d/H)`.
///
/// `mask`, when present, is an `L × L` matrix added to every head's scores.
pub fn self_attention(
    tape: &mut Tape,
    bound: &Bound,
    blk: &BlockParams,
    x: Var,
    pos_bias: Option<[Var; 3]>,
    mask: Option<&Tensor>,
) -> Result<Attention> {
    let (len, d) = tape.shape(x);
    if d % blk.heads != 0 {
        return Err(Error::dim(format!("{} heads do not divide width {d}", blk.heads)));
    }
    if let Some(m) = mask {
        if m.shape() != [len, len] {
            return Err(Error::dim(format!(
                "mask shape {:?} does not match sequence length {len}",
                m.shape()
            )));
        }
    }
    let [bq, bk, bv] = match pos_bias {
        Some(b) => b.map(Some),
        None => [None; 3],
    };
    let q = project(tape, x, bound[blk.w_q], bound[blk.b_q], bq)?;
    let k = project(tape, x, bound[blk.w_k], bound[blk.b_k], bk)?;
    let v = project(tape, x, bound[blk.w_v], bound[blk.b_v], bv)?;
    let dh = d / blk.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mask = mask.map(|m| tape.constant(m.clone()));
    let mut heads = Vec::with_capacity(blk.heads);
    let mut probs = Vec::with_capacity(blk.heads);
    for h in 0..blk.heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let s = tape.matmul(qh, kt)?;
        let mut s = tape.scale(s, scale)?;
        if let Some(m) = mask {
            s = tape.add(s, m)?;
        }
        let p = tape.softmax_rows(s)?;
        heads.push(tape.matmul(p, vh)?);
        probs.push(p);
    }
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    let out = tape.matmul(cat, bound[blk.w_o])?;
    let output = tape.add(out, bound[blk.b_o])?;
    Ok(Attention { output, probs })
}

/// `Φ_n`, then attention and feed-forward sublayers, each with residual and layer norm.
pub fn block_forward(
    tape: &mut Tape,
    bound: &Bound,
    blk: &BlockParams,
    x: Var,
    pos: BlockPosition,
    mask: Option<&Tensor>,
) -> Result<Var> {
    let x = match pos.additive {
        Some(p) => tape.add(x, p)?,
        None => x,
    };
    let att = self_attention(tape, bound, blk, x, pos.bias, mask)?;
    let r = tape.add(x, att.output)?;
    let x1 = tape.layer_norm(r, bound[blk.ln1_gain], bound[blk.ln1_bias], LAYER_NORM_EPS)?;
    let f = tape.matmul(x1, bound[blk.w_1])?;
    let f = tape.add(f, bound[blk.b_1])?;
    let f = tape.relu(f)?;
    let f = tape.matmul(f, bound[blk.w_2])?;
    let f = tape.add(f, bound[blk.b_2])?;
    let r = tape.add(x1, f)?;
    tape.layer_norm(r, bound[blk.ln2_gain], bound[blk.ln2_bias], LAYER_NORM_EPS)
}
