//! Spatio-temporal predictor and critics.
//!
//! Token layout: a batch of `B` windows becomes a `[B, T·J, D]` node with
//! rows ordered time-major, `(t, j)`. Each block applies, with pre-norm
//! residuals, spatial attention within frames, temporal attention along
//! each joint, and a tanh feed-forward layer. With the low-rank flag off
//! the two attentions are replaced by one full-rank attention over all
//! `T·J` tokens of a window.

pub mod attention;
pub mod critic;
pub mod params;

use std::ops::Range;

use ndarray::{s, Array3, Array4, Axis};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::features::Normalizer;

pub use attention::{
    full_attention, low_rank_attention, spatial_attention, temporal_attention, AttentionTrace,
};
pub use critic::{critic_inputs, Critic, CriticInputs, LinearCritic, MlpCritic};
pub use params::{ModelDims, ModelParams, ParamGroup, ParamLayout, ParamVars};

const LN_EPS: f64 = 1e-5;

/// Which components are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    /// Quotient-space features (off: root-aligned coordinates).
    pub quotient: bool,
    /// Masking/denoising auxiliary tasks.
    pub enhancement: bool,
    /// Low-rank gated decoupled attention (off: full-rank joint attention).
    pub low_rank: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            quotient: true,
            enhancement: true,
            low_rank: true,
        }
    }
}

fn check_input(dims: &ModelDims, features: &Array4<f64>) -> Result<()> {
    let (_, t, j, c) = features.dim();
    if (t, j, c) != (dims.window, dims.joints, dims.channels) {
        return Err(Error::DimsMismatch(format!(
            "features are {t}x{j}x{c}, model expects {}x{}x{}",
            dims.window, dims.joints, dims.channels
        )));
    }
    Ok(())
}

/// Token embeddings `[B, T·J, D]` for features `[B, T, J, C]`.
///
/// Each scalar coordinate gets its own embedding `x_c · W_c + b_c`; a
/// masked coordinate's embedding is replaced by the mask token. A token is
/// the sum of its coordinates' embeddings. Masked inputs never reach the
/// tape, so their values cannot affect any output.
pub fn embed(
    tape: &Tape,
    pv: &ParamVars,
    params: &ModelParams,
    features: &Array4<f64>,
    mask: Option<&Array4<bool>>,
) -> Result<Var> {
    let dims = &params.dims;
    check_input(dims, features)?;
    if let Some(m) = mask {
        if m.dim() != features.dim() {
            return Err(Error::DimsMismatch(
                "mask shape differs from features".into(),
            ));
        }
    }
    let idx = &params.layout.index;
    let (b, t, j, c) = features.dim();
    let rows = b * t * j;
    let flat_mask = mask.map(|m| m.to_shape((1, rows, c)).unwrap().to_owned());
    let mut x = features.to_shape((1, rows, c)).unwrap().to_owned();
    let mut keep = Array3::<f64>::ones((1, rows, c));
    if let Some(m) = &flat_mask {
        for ((xv, kv), &mv) in x.iter_mut().zip(keep.iter_mut()).zip(m.iter()) {
            if mv {
                *xv = 0.0;
                *kv = 0.0;
            }
        }
    }
    let xw = tape.matmul(tape.leaf(x), pv[idx.embed_w]);
    let bias = tape.matmul(tape.leaf(keep), pv[idx.embed_b]);
    let mut h = tape.add(xw, bias);
    if let Some(m) = &flat_mask {
        let m = m.mapv(|v| if v { 1.0 } else { 0.0 });
        let tokens = tape.expand_rows(pv[idx.mask_token], c);
        h = tape.add(h, tape.matmul(tape.leaf(m), tokens));
    }
    Ok(tape.reshape(h, [b, t * j, dims.d_model]))
}

/// Per-coordinate embeddings `[T, J, C, D]` of one window, computed
/// directly from the parameter values.
pub fn coordinate_embeddings(
    params: &ModelParams,
    features: &Array3<f64>,
    mask: Option<&Array3<bool>>,
) -> Array4<f64> {
    let idx = &params.layout.index;
    let w = params.array(idx.embed_w);
    let bias = params.array(idx.embed_b);
    let token = params.array(idx.mask_token);
    let (t, j, c) = features.dim();
    let d = params.dims.d_model;
    Array4::from_shape_fn((t, j, c, d), |(a, b, ch, k)| {
        if mask.is_some_and(|m| m[[a, b, ch]]) {
            token[[0, 0, k]]
        } else {
            features[[a, b, ch]] * w[[0, ch, k]] + bias[[0, ch, k]]
        }
    })
}

pub fn layer_norm(tape: &Tape, x: Var, gain: Var, bias: Var) -> Var {
    let d = x.cols();
    let mean = tape.scale(tape.sum_cols(x), 1.0 / d as f64);
    let centered = tape.sub(x, tape.expand_cols(mean, d));
    let var = tape.scale(tape.sum_cols(tape.mul(centered, centered)), 1.0 / d as f64);
    let inv = tape.powf(tape.add_scalar(var, LN_EPS), -0.5);
    let y = tape.mul(centered, tape.expand_cols(inv, d));
    let y = tape.mul(y, tape.broadcast(gain, y.shape()));
    tape.add(y, tape.broadcast(bias, x.shape()))
}

fn affine(tape: &Tape, x: Var, w: Var, b: Var) -> Var {
    let y = tape.matmul(x, w);
    tape.add(y, tape.broadcast(b, y.shape()))
}

/// `L` residual blocks over `h: [B, T·J, D]`.
pub fn backbone(tape: &Tape, pv: &ParamVars, params: &ModelParams, low_rank: bool, h: Var) -> Var {
    let dims = &params.dims;
    let mut h = h;
    for layer in &params.layout.index.layers {
        if low_rank {
            let x = layer_norm(tape, h, pv[layer.ln1.0], pv[layer.ln1.1]);
            let (s, _) = spatial_attention(tape, pv, &layer.spatial, dims, x);
            h = tape.add(h, s);
            let x = layer_norm(tape, h, pv[layer.ln2.0], pv[layer.ln2.1]);
            let (t, _) = temporal_attention(tape, pv, &layer.temporal, dims, x);
            h = tape.add(h, t);
        } else {
            let x = layer_norm(tape, h, pv[layer.ln1.0], pv[layer.ln1.1]);
            h = tape.add(h, full_attention(tape, pv, &layer.spatial, dims, x));
        }
        let x = layer_norm(tape, h, pv[layer.ln3.0], pv[layer.ln3.1]);
        let hidden = tape.tanh(affine(tape, x, pv[layer.ff_w1], pv[layer.ff_b1]));
        h = tape.add(h, affine(tape, hidden, pv[layer.ff_w2], pv[layer.ff_b2]));
    }
    h
}

/// Future coordinates `[1, n·T_f·J, 3]` (rows `(window, frame, joint)`)
/// for windows `range` of the final-normed tokens `h`, read from each
/// joint's last observed token. The head predicts a displacement, in
/// coordinate std units, from `anchor` (`[n, J, 3]`, the last observed
/// root-aligned pose of each window).
pub fn prediction_head(
    tape: &Tape,
    pv: &ParamVars,
    params: &ModelParams,
    h: Var,
    range: Range<usize>,
    norm: &Normalizer,
    anchor: &Array3<f64>,
) -> Var {
    let dims = &params.dims;
    let idx = &params.layout.index;
    let (t, j, tf) = (dims.window, dims.joints, dims.future);
    let n = range.len();
    let last: Vec<usize> = range
        .clone()
        .flat_map(|b| (0..j).map(move |jj| b * t * j + (t - 1) * j + jj))
        .collect();
    let last = tape.gather_rows(h, last.into(), 1);
    let raw = affine(tape, last, pv[idx.pred_w], pv[idx.pred_b]);
    let raw = tape.reshape(raw, [1, n * j * tf, 3]);
    let mut order = Vec::with_capacity(n * tf * j);
    for b in 0..n {
        for f in 0..tf {
            for jj in 0..j {
                order.push((b * j + jj) * tf + f);
            }
        }
    }
    let raw = tape.gather_rows(raw, order.into(), 1);
    displace(tape, raw, norm, anchor, tf)
}

/// `anchor + std ⊙ raw` for rows `(window, frame, joint)` of `frames`
/// frames per window.
fn displace(tape: &Tape, raw: Var, norm: &Normalizer, anchor: &Array3<f64>, frames: usize) -> Var {
    let j = anchor.dim().1;
    let n = raw.rows() / (frames * j);
    let (std, _) = norm.coord_tiles(n * frames);
    let base = Array3::from_shape_fn((1, n * frames * j, 3), |(_, r, k)| {
        anchor[[r / (frames * j), r % j, k]]
    });
    tape.add(tape.mul(raw, tape.leaf(std)), tape.leaf(base))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconHead {
    Mask,
    Denoise,
}

/// Reconstructed observed coordinates `[1, n·T·J, 3]` for windows `range`,
/// displaced from the same `anchor` poses as the prediction head.
#[allow(clippy::too_many_arguments)]
pub fn reconstruction_head(
    tape: &Tape,
    pv: &ParamVars,
    params: &ModelParams,
    h: Var,
    range: Range<usize>,
    which: ReconHead,
    norm: &Normalizer,
    anchor: &Array3<f64>,
) -> Var {
    let dims = &params.dims;
    let idx = &params.layout.index;
    let per = dims.tokens();
    let rows: Vec<usize> = range.clone().flat_map(|b| b * per..(b + 1) * per).collect();
    let x = tape.gather_rows(h, rows.into(), 1);
    let (w, b) = match which {
        ReconHead::Mask => (idx.mask_w, idx.mask_b),
        ReconHead::Denoise => (idx.denoise_w, idx.denoise_b),
    };
    let raw = affine(tape, x, pv[w], pv[b]);
    displace(tape, raw, norm, anchor, dims.window)
}

pub fn final_norm(tape: &Tape, pv: &ParamVars, params: &ModelParams, h: Var) -> Var {
    let (g, b) = params.layout.index.lnf;
    layer_norm(tape, h, pv[g], pv[b])
}

/// Inputs for one generator pass over `B` windows.
pub struct GeneratorInput<'a> {
    pub clean: &'a Array4<f64>,
    /// Last observed root-aligned pose per window, `[B, J, 3]`.
    pub anchor: &'a Array3<f64>,
    pub masked: Option<(&'a Array4<f64>, &'a Array4<bool>)>,
    pub noised: Option<&'a Array4<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorOutput {
    /// Backbone tokens before the final norm, `[3B or B, T·J, D]`.
    pub tokens: Var,
    pub pred: Var,
    pub mask_recon: Option<Var>,
    pub denoise_recon: Option<Var>,
}

fn stack(parts: &[&Array4<f64>]) -> Array4<f64> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("equal window shapes")
}

/// Runs clean, masked and noised windows through one shared backbone and
/// applies the three heads to their respective parts.
pub fn generator_forward(
    tape: &Tape,
    pv: &ParamVars,
    params: &ModelParams,
    low_rank: bool,
    norm: &Normalizer,
    input: &GeneratorInput<'_>,
) -> Result<GeneratorOutput> {
    let b = input.clean.dim().0;
    let mut parts = vec![input.clean];
    let mut mask_parts: Vec<Array4<bool>> = vec![Array4::from_elem(input.clean.dim(), false)];
    let mut masked_range = None;
    let mut noised_range = None;
    if let Some((m, mk)) = input.masked {
        masked_range = Some(parts.len() * b..(parts.len() + 1) * b);
        parts.push(m);
        mask_parts.push(mk.to_owned());
    }
    if let Some(nz) = input.noised {
        noised_range = Some(parts.len() * b..(parts.len() + 1) * b);
        parts.push(nz);
        mask_parts.push(Array4::from_elem(nz.dim(), false));
    }
    let (_, _, joints, _) = input.clean.dim();
    if input.anchor.dim() != (b, joints, 3) {
        return Err(Error::DimsMismatch(format!(
            "anchor shape {:?}",
            input.anchor.dim()
        )));
    }
    for p in &parts {
        if p.dim() != input.clean.dim() {
            return Err(Error::DimsMismatch(
                "auxiliary inputs differ in shape".into(),
            ));
        }
    }
    let features = stack(&parts);
    let any_mask = input.masked.is_some();
    let mask = any_mask.then(|| {
        let views: Vec<_> = mask_parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("equal mask shapes")
    });
    let h0 = embed(tape, pv, params, &features, mask.as_ref())?;
    let tokens = backbone(tape, pv, params, low_rank, h0);
    let hf = final_norm(tape, pv, params, tokens);
    let pred = prediction_head(tape, pv, params, hf, 0..b, norm, input.anchor);
    let mask_recon = masked_range
        .map(|r| reconstruction_head(tape, pv, params, hf, r, ReconHead::Mask, norm, input.anchor));
    let denoise_recon = noised_range.map(|r| {
        reconstruction_head(
            tape,
            pv,
            params,
            hf,
            r,
            ReconHead::Denoise,
            norm,
            input.anchor,
        )
    });
    Ok(GeneratorOutput {
        tokens,
        pred,
        mask_recon,
        denoise_recon,
    })
}

/// Converts `[1, n·F·J, 3]` head output into `n` arrays of `F × J × 3`.
pub fn unflatten_frames(value: &Array3<f64>, frames: usize, joints: usize) -> Vec<Array3<f64>> {
    let per = frames * joints;
    let n = value.dim().1 / per;
    (0..n)
        .map(|w| {
            value
                .slice(s![0, w * per..(w + 1) * per, ..])
                .to_shape((frames, joints, 3))
                .unwrap()
                .to_owned()
        })
        .collect()
}

/// Fidelity critic scores, one per frame of `frames: [F, J, 3]`.
pub fn discriminate_fidelity(
    params: &ModelParams,
    norm: &Normalizer,
    frames: &Array3<f64>,
) -> Vec<f64> {
    let tape = Tape::new();
    let pv = params.leaves(&tape);
    let (f, j, _) = frames.dim();
    let seq = tape.leaf(frames.to_shape((1, f * j, 3)).unwrap().to_owned());
    let inputs = critic_inputs(&tape, seq, 1, f, norm);
    let critic = MlpCritic::from_params(&pv, &params.layout.index.fidelity);
    let s = critic.score(&tape, inputs.fidelity);
    let v = tape.value(s).iter().cloned().collect();
    v
}

/// Continuity critic scores, one per consecutive pair of `frames`.
pub fn discriminate_continuity(
    params: &ModelParams,
    norm: &Normalizer,
    frames: &Array3<f64>,
) -> Vec<f64> {
    let tape = Tape::new();
    let pv = params.leaves(&tape);
    let (f, j, _) = frames.dim();
    let seq = tape.leaf(frames.to_shape((1, f * j, 3)).unwrap().to_owned());
    let inputs = critic_inputs(&tape, seq, 1, f, norm);
    let critic = MlpCritic::from_params(&pv, &params.layout.index.continuity);
    let s = critic.score(&tape, inputs.continuity);
    let v = tape.value(s).iter().cloned().collect();
    v
}
