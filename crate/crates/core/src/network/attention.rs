//! Decoupled low-rank spatial/temporal attention and the full-rank
//! baseline block.
//!
//! For one head with `Q, K, V ∈ R^{N × d_h}` over `N` tokens:
//!
//! ```text
//! φ(Q)  = softmax_rank(Q P_q)             N × r, rows sum to 1
//! φ(K)ᵀ = softmax_tokens((K P_k)ᵀ)        r × N, rows sum to 1
//! O     = φ(Q) (φ(K)ᵀ V)                  N × d_h
//! head  = G O                             G is A_s (spatial) or A_t (temporal)
//! ```
//!
//! Heads are concatenated and mixed by an output projection. Cost is
//! `O(N · r · d_h)` per head plus the `N × N` gate product.

use std::rc::Rc;

use crate::autodiff::{Tape, Var};

use super::params::{AttnIndex, ModelDims, ParamVars};

/// Intermediate values of one attention call, kept for inspection.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    /// `φ(Q)` per head, `[G, N, r]`.
    pub query_weights: Vec<Var>,
    /// `φ(K)ᵀ` per head, `[G, r, N]`.
    pub key_weights: Vec<Var>,
    /// Ungated `O` per head, `[G, N, d_h]`.
    pub ungated: Vec<Var>,
    /// Gated heads, `[G, N, d_h]`.
    pub heads: Vec<Var>,
    /// Concatenated heads after the output projection, `[G, N, D]`.
    pub output: Var,
}

/// Low-rank gated attention over `h: [G, N, D]` (`G` independent groups of
/// `N` tokens). The gate must be `[1, N, N]`.
pub fn low_rank_attention(
    tape: &Tape,
    pv: &ParamVars,
    idx: &AttnIndex,
    dims: &ModelDims,
    h: Var,
) -> AttentionTrace {
    let dh = dims.head_dim();
    let d = dims.d_model;
    let q = tape.matmul(h, pv[idx.wq]);
    let k = tape.matmul(h, pv[idx.wk]);
    let v = tape.matmul(h, pv[idx.wv]);
    let gate = pv[idx.gate];
    assert_eq!(gate.rows(), h.rows(), "gate size must match token count");

    let mut trace = AttentionTrace {
        query_weights: Vec::new(),
        key_weights: Vec::new(),
        ungated: Vec::new(),
        heads: Vec::new(),
        output: h,
    };
    let mut concat: Option<Var> = None;
    for head in 0..dims.heads {
        let qi = tape.slice_cols(q, head * dh, dh);
        let ki = tape.slice_cols(k, head * dh, dh);
        let vi = tape.slice_cols(v, head * dh, dh);
        let fq = tape.softmax(tape.matmul(qi, pv[idx.phi_q[head]]));
        let fk_t = tape.softmax(tape.transpose(tape.matmul(ki, pv[idx.phi_k[head]])));
        let summary = tape.matmul(fk_t, vi);
        let o = tape.matmul(fq, summary);
        let gated = tape.matmul(gate, o);
        let placed = tape.pad_cols(gated, head * dh, d);
        concat = Some(match concat {
            None => placed,
            Some(c) => tape.add(c, placed),
        });
        trace.query_weights.push(fq);
        trace.key_weights.push(fk_t);
        trace.ungated.push(o);
        trace.heads.push(gated);
    }
    trace.output = tape.matmul(concat.expect("at least one head"), pv[idx.wo]);
    trace
}

/// Standard multi-head scaled dot-product attention over `h: [G, N, D]`,
/// without low-rank maps or gates.
pub fn full_attention(
    tape: &Tape,
    pv: &ParamVars,
    idx: &AttnIndex,
    dims: &ModelDims,
    h: Var,
) -> Var {
    let dh = dims.head_dim();
    let d = dims.d_model;
    let q = tape.matmul(h, pv[idx.wq]);
    let k = tape.matmul(h, pv[idx.wk]);
    let v = tape.matmul(h, pv[idx.wv]);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat: Option<Var> = None;
    for head in 0..dims.heads {
        let qi = tape.slice_cols(q, head * dh, dh);
        let ki = tape.slice_cols(k, head * dh, dh);
        let vi = tape.slice_cols(v, head * dh, dh);
        let scores = tape.scale(tape.matmul(qi, tape.transpose(ki)), scale);
        let o = tape.matmul(tape.softmax(scores), vi);
        let placed = tape.pad_cols(o, head * dh, d);
        concat = Some(match concat {
            None => placed,
            Some(c) => tape.add(c, placed),
        });
    }
    tape.matmul(concat.expect("at least one head"), pv[idx.wo])
}

/// Spatial attention within each frame: `h: [B, T·J, D]` time-major.
pub fn spatial_attention(
    tape: &Tape,
    pv: &ParamVars,
    idx: &AttnIndex,
    dims: &ModelDims,
    h: Var,
) -> (Var, AttentionTrace) {
    let batch = h.batch();
    let grouped = tape.reshape(h, [batch * dims.window, dims.joints, dims.d_model]);
    let trace = low_rank_attention(tape, pv, idx, dims, grouped);
    let out = tape.reshape(trace.output, [batch, dims.tokens(), dims.d_model]);
    (out, trace)
}

/// Row permutation from time-major `(b, t, j)` to joint-major `(b, j, t)`.
pub fn joint_major_index(batch: usize, window: usize, joints: usize) -> Rc<[usize]> {
    let mut idx = Vec::with_capacity(batch * window * joints);
    for b in 0..batch {
        for j in 0..joints {
            for t in 0..window {
                idx.push(b * window * joints + t * joints + j);
            }
        }
    }
    idx.into()
}

/// Inverse of [`joint_major_index`].
pub fn time_major_index(batch: usize, window: usize, joints: usize) -> Rc<[usize]> {
    let mut idx = Vec::with_capacity(batch * window * joints);
    for b in 0..batch {
        for t in 0..window {
            for j in 0..joints {
                idx.push((b * joints + j) * window + t);
            }
        }
    }
    idx.into()
}

/// Temporal attention along each joint's sequence: `h: [B, T·J, D]`.
pub fn temporal_attention(
    tape: &Tape,
    pv: &ParamVars,
    idx: &AttnIndex,
    dims: &ModelDims,
    h: Var,
) -> (Var, AttentionTrace) {
    let batch = h.batch();
    let (t, j) = (dims.window, dims.joints);
    let per_joint = tape.gather_rows(h, joint_major_index(batch, t, j), batch * j);
    let trace = low_rank_attention(tape, pv, idx, dims, per_joint);
    let out = tape.gather_rows(trace.output, time_major_index(batch, t, j), batch);
    (out, trace)
}
