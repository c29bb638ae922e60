//! Wasserstein critics: an unbounded score per input row, no sigmoid.
//!
//! The fidelity critic scores single poses, the continuity critic scores
//! consecutive-frame pairs presented as `[pose_t, pose_{t+1} - pose_t]`.
//! Inputs are standardized with the coordinate statistics first.

use std::rc::Rc;

use ndarray::Array3;

use crate::autodiff::{Tape, Var};
use crate::features::Normalizer;

use super::params::{MlpIndex, ParamVars};

pub trait Critic {
    /// Scores every row of `x: [1, N, in]`, giving `[1, N, 1]`.
    fn score(&self, tape: &Tape, x: Var) -> Var;
}

/// `tanh(tanh(x W1 + b1) W2 + b2) W3 + b3`.
#[derive(Debug, Clone, Copy)]
pub struct MlpCritic {
    pub w: [Var; 3],
    pub b: [Var; 3],
}

impl MlpCritic {
    pub fn from_params(pv: &ParamVars, idx: &MlpIndex) -> Self {
        Self {
            w: idx.w.map(|i| pv[i]),
            b: idx.b.map(|i| pv[i]),
        }
    }
}

fn affine(tape: &Tape, x: Var, w: Var, b: Var) -> Var {
    let y = tape.matmul(x, w);
    tape.add(y, tape.broadcast(b, y.shape()))
}

impl Critic for MlpCritic {
    fn score(&self, tape: &Tape, x: Var) -> Var {
        let h1 = tape.tanh(affine(tape, x, self.w[0], self.b[0]));
        let h2 = tape.tanh(affine(tape, h1, self.w[1], self.b[1]));
        affine(tape, h2, self.w[2], self.b[2])
    }
}

/// `D(x) = wᵀx`.
#[derive(Debug, Clone, Copy)]
pub struct LinearCritic {
    /// `[1, in, 1]`
    pub w: Var,
}

impl Critic for LinearCritic {
    fn score(&self, tape: &Tape, x: Var) -> Var {
        tape.matmul(x, self.w)
    }
}

/// Standardized critic inputs built from pose sequences laid out as rows
/// `(sample, frame, joint)` of a `[1, S·F·J, 3]` node.
pub struct CriticInputs {
    /// `[1, S·F, 3J]`
    pub fidelity: Var,
    /// `[1, S·(F-1), 6J]`
    pub continuity: Var,
}

pub fn critic_inputs(
    tape: &Tape,
    seq: Var,
    samples: usize,
    frames: usize,
    norm: &Normalizer,
) -> CriticInputs {
    let joints = norm.joints();
    assert_eq!(seq.shape(), [1, samples * frames * joints, 3]);
    let (std, mean) = norm.coord_tiles(samples * frames);
    let inv_std = std.mapv(|s| 1.0 / s);
    let centered = tape.sub(seq, tape.leaf(mean));
    let scaled = tape.mul(centered, tape.leaf(inv_std.clone()));
    let fidelity = tape.reshape(scaled, [1, samples * frames, joints * 3]);

    let pairs = samples * (frames - 1);
    let mut cur = Vec::with_capacity(pairs * joints);
    let mut next = Vec::with_capacity(pairs * joints);
    for s in 0..samples {
        for f in 0..frames - 1 {
            for j in 0..joints {
                cur.push((s * frames + f) * joints + j);
                next.push((s * frames + f + 1) * joints + j);
            }
        }
    }
    let cur: Rc<[usize]> = cur.into();
    let next: Rc<[usize]> = next.into();
    let pose_part = tape.gather_rows(scaled, cur.clone(), 1);
    let a = tape.gather_rows(seq, cur, 1);
    let b = tape.gather_rows(seq, next, 1);
    let inv_pair = Array3::from_shape_fn((1, pairs * joints, 3), |(_, r, k)| {
        1.0 / norm.coord_std[[r % joints, k]]
    });
    let diff = tape.mul(tape.sub(b, a), tape.leaf(inv_pair));
    let pose_part = tape.reshape(pose_part, [1, pairs, joints * 3]);
    let diff = tape.reshape(diff, [1, pairs, joints * 3]);
    let continuity = tape.add(
        tape.pad_cols(pose_part, 0, joints * 6),
        tape.pad_cols(diff, joints * 3, joints * 6),
    );
    CriticInputs {
        fidelity,
        continuity,
    }
}
