//! Training losses: the composite task loss, the Wasserstein critic loss
//! with gradient penalty, and the total generator loss.
//!
//! Coordinates are laid out as `[1, rows, 3]` tape nodes with one row per
//! joint and frame, in millimeters.

use std::rc::Rc;

use ndarray::{Array2, Array3, Axis};
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::network::Critic;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            beta1: 0.9,
            beta2: 0.1,
            lambda: 10.0,
        }
    }
}

impl LossWeights {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            alpha1: cfg.alpha1,
            alpha2: cfg.alpha2,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            lambda: cfg.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("lambda", self.lambda),
        ];
        match all.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            Some((name, v)) => Err(Error::Config(format!(
                "{name} must be finite and non-negative, got {v}"
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport {
    pub l_pred: f64,
    pub l_mask: f64,
    pub l_denoise: f64,
    pub l_composite: f64,
    pub l_adv: f64,
    pub gp_term: f64,
    pub l_total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,l_pred,l_mask,l_denoise,l_adv,gp_term,l_total";

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.l_pred, self.l_mask, self.l_denoise, self.l_adv, self.gp_term, self.l_total
        )
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l_pred,
            self.l_mask,
            self.l_denoise,
            self.l_composite,
            self.l_adv,
            self.gp_term,
            self.l_total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Composite loss nodes.
#[derive(Debug, Clone, Copy)]
pub struct CompositeTerms {
    pub l_pred: Var,
    pub l_mask: Option<Var>,
    pub l_denoise: Option<Var>,
    pub l_composite: Var,
    /// Joint-frames entering the mask term.
    pub masked_joints: usize,
}

/// Per-row squared distance `[1, N, 1]`.
fn row_sq_err(tape: &Tape, out: Var, target: &Array3<f64>) -> Var {
    let d = tape.sub(out, tape.leaf(target.clone()));
    tape.sum_cols(tape.mul(d, d))
}

/// Composite loss over flattened rows.
///
/// `joint_mask` flags the reconstruction rows holding at least one masked
/// scalar; only those enter the mask term. An empty mask makes the mask
/// term zero.
pub fn composite_terms(
    tape: &Tape,
    pred: Var,
    future: &Array3<f64>,
    mask_recon: Option<Var>,
    denoise_recon: Option<Var>,
    observed: &Array3<f64>,
    joint_mask: &[bool],
    weights: &LossWeights,
) -> Result<CompositeTerms> {
    let dims_ok = |v: Var, t: &Array3<f64>| v.shape() == [t.dim().0, t.dim().1, t.dim().2];
    if !dims_ok(pred, future) {
        return Err(Error::DimsMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            future.dim()
        )));
    }
    for r in [mask_recon, denoise_recon].into_iter().flatten() {
        if !dims_ok(r, observed) {
            return Err(Error::DimsMismatch(format!(
                "reconstruction {:?} vs target {:?}",
                r.shape(),
                observed.dim()
            )));
        }
    }
    let l_pred = tape.mean_all(row_sq_err(tape, pred, future));
    let mut total = l_pred;
    let mut masked_joints = 0;
    let l_mask = match mask_recon {
        Some(r) => {
            if joint_mask.len() != r.rows() {
                return Err(Error::DimsMismatch(
                    "mask length differs from reconstruction rows".into(),
                ));
            }
            masked_joints = joint_mask.iter().filter(|&&m| m).count();
            let term =
                if masked_joints == 0 {
                    if weights.alpha1 > 0.0 {
                        log::warn!("mask term skipped: no masked joints in batch");
                    }
                    tape.constant([1, 1, 1], 0.0)
                } else {
                    let sel = Array3::from_shape_fn((1, r.rows(), 1), |(_, i, _)| {
                        if joint_mask[i] {
                            1.0
                        } else {
                            0.0
                        }
                    });
                    let e = tape.mul(row_sq_err(tape, r, observed), tape.leaf(sel));
                    tape.scale(tape.sum_all(e), 1.0 / masked_joints as f64)
                };
            total = tape.add(total, tape.scale(term, weights.alpha1));
            Some(term)
        }
        None => None,
    };
    let l_denoise = denoise_recon.map(|r| {
        let term = tape.mean_all(row_sq_err(tape, r, observed));
        total = tape.add(total, tape.scale(term, weights.alpha2));
        term
    });
    Ok(CompositeTerms {
        l_pred,
        l_mask,
        l_denoise,
        l_composite: total,
        masked_joints,
    })
}

fn flat(a: &Array3<f64>) -> Array3<f64> {
    let (f, j, k) = a.dim();
    a.to_shape((1, f * j, k)).unwrap().to_owned()
}

/// Composite loss for one window given as `frames × J × 3` arrays.
/// `joint_mask` is `T × J`. Adversarial fields of the report stay zero
/// and `l_total` equals `β₁·l_composite`.
#[allow(clippy::too_many_arguments)]
pub fn loss_composite(
    pred: &Array3<f64>,
    mask_recon: &Array3<f64>,
    denoise_recon: &Array3<f64>,
    future: &Array3<f64>,
    observed: &Array3<f64>,
    joint_mask: &Array2<bool>,
    weights: &LossWeights,
) -> Result<LossReport> {
    let tape = Tape::new();
    let flags: Vec<bool> = joint_mask.iter().copied().collect();
    let terms = composite_terms(
        &tape,
        tape.leaf(flat(pred)),
        &flat(future),
        Some(tape.leaf(flat(mask_recon))),
        Some(tape.leaf(flat(denoise_recon))),
        &flat(observed),
        &flags,
        weights,
    )?;
    let mut report = LossReport {
        l_pred: tape.scalar(terms.l_pred),
        l_mask: terms.l_mask.map_or(0.0, |v| tape.scalar(v)),
        l_denoise: terms.l_denoise.map_or(0.0, |v| tape.scalar(v)),
        l_composite: tape.scalar(terms.l_composite),
        ..LossReport::default()
    };
    report.l_total = loss_total(&report, weights);
    Ok(report)
}

/// `β₁·l_composite + β₂·l_adv`.
pub fn loss_total(report: &LossReport, weights: &LossWeights) -> f64 {
    weights.beta1 * report.l_composite + weights.beta2 * report.l_adv
}

/// One `ε ~ U[0, 1)` per sample.
pub fn draw_epsilons(samples: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, "interpolate", &[]);
    (0..samples).map(|_| r.random::<f64>()).collect()
}

/// `x̂ = ε·x + (1 − ε)·x′` per sample along axis 0.
pub fn interpolate_with(
    real: &Array3<f64>,
    fake: &Array3<f64>,
    eps: &[f64],
) -> Result<Array3<f64>> {
    if real.dim() != fake.dim() || eps.len() != real.dim().0 {
        return Err(Error::DimsMismatch(format!(
            "real {:?}, fake {:?}, {} epsilons",
            real.dim(),
            fake.dim(),
            eps.len()
        )));
    }
    let mut out = fake.clone();
    for ((mut o, x), &e) in out.outer_iter_mut().zip(real.outer_iter()).zip(eps) {
        o.zip_mut_with(&x, |xp, &xr| *xp = e * xr + (1.0 - e) * *xp);
    }
    Ok(out)
}

/// Interpolates with epsilons drawn from `seed`; returns them as well.
pub fn interpolate_samples(
    real: &Array3<f64>,
    fake: &Array3<f64>,
    seed: u64,
) -> Result<(Array3<f64>, Vec<f64>)> {
    let eps = draw_epsilons(real.dim().0, seed);
    Ok((interpolate_with(real, fake, &eps)?, eps))
}

/// Critic-side nodes of the Wasserstein objective.
#[derive(Debug, Clone, Copy)]
pub struct CriticTerms {
    /// `E[D(x′)] − E[D(x)]`
    pub wasserstein: Var,
    /// `λ·E[(‖∇D(x̂)‖₂ − 1)²]`
    pub gp_term: Var,
    /// `wasserstein + gp_term`, minimized by the critic.
    pub critic_loss: Var,
}

/// Wasserstein critic loss with gradient penalty for one critic.
///
/// Each row of `real`, `fake` and `interp` (`[1, N, in]`) is one critic
/// input. `interp` must be a leaf so the penalty differentiates with
/// respect to the critic input alone.
pub fn critic_terms(
    tape: &Tape,
    critic: &dyn Critic,
    real: Var,
    fake: Var,
    interp: Var,
    lambda: f64,
) -> Result<CriticTerms> {
    let d_real = tape.mean_all(critic.score(tape, real));
    let d_fake = tape.mean_all(critic.score(tape, fake));
    let wasserstein = tape.sub(d_fake, d_real);
    let d_interp = critic.score(tape, interp);
    let g = tape.grad(d_interp, &[interp])?[0];
    let norm = tape.sqrt_safe(tape.sum_cols(tape.mul(g, g)));
    if tape.value(norm).iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalInstability);
    }
    let dev = tape.add_scalar(norm, -1.0);
    let gp_term = tape.scale(tape.mean_all(tape.mul(dev, dev)), lambda);
    let critic_loss = tape.add(wasserstein, gp_term);
    Ok(CriticTerms {
        wasserstein,
        gp_term,
        critic_loss,
    })
}

/// `−E[D(x′)]` for the generator.
pub fn generator_term(tape: &Tape, critic: &dyn Critic, fake: Var) -> Var {
    tape.scale(tape.mean_all(critic.score(tape, fake)), -1.0)
}

/// Scalar values of the adversarial objective for one critic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialValues {
    pub wasserstein: f64,
    pub gp_term: f64,
    pub critic_loss: f64,
    pub generator_term: f64,
}

/// Adversarial loss for `[S, N, in]` batches of critic inputs with one
/// interpolation weight per sample `S` drawn from `seed`.
pub fn loss_adversarial(
    critic: &dyn Critic,
    tape: &Tape,
    real: &Array3<f64>,
    fake: &Array3<f64>,
    lambda: f64,
    seed: u64,
) -> Result<AdversarialValues> {
    let (interp, _) = interpolate_samples(real, fake, seed)?;
    let rows = |a: &Array3<f64>| {
        let (s, n, c) = a.dim();
        a.to_shape((1, s * n, c)).unwrap().to_owned()
    };
    let fake_v = tape.leaf(rows(fake));
    let terms = critic_terms(
        tape,
        critic,
        tape.leaf(rows(real)),
        fake_v,
        tape.leaf(rows(&interp)),
        lambda,
    )?;
    let gen = generator_term(tape, critic, fake_v);
    Ok(AdversarialValues {
        wasserstein: tape.scalar(terms.wasserstein),
        gp_term: tape.scalar(terms.gp_term),
        critic_loss: tape.scalar(terms.critic_loss),
        generator_term: tape.scalar(gen),
    })
}

/// Row indices placing `samples` windows of `frames` frames into
/// `(sample, frame + 1, joint)` order, leaving frame 0 for a seam frame.
pub fn seam_index(samples: usize, frames: usize, joints: usize) -> Rc<[usize]> {
    let mut idx = Vec::with_capacity(samples * frames * joints);
    for s in 0..samples {
        for f in 0..frames {
            for j in 0..joints {
                idx.push((s * (frames + 1) + f + 1) * joints + j);
            }
        }
    }
    idx.into()
}

/// Prepends `seam` (`S × J × 3`) to each window of `future`
/// (`[1, S·F·J, 3]`), giving `[1, S·(F+1)·J, 3]`.
pub fn with_seam(tape: &Tape, seam: &Array3<f64>, future: Var, frames: usize) -> Var {
    let (samples, joints, _) = seam.dim();
    let total = samples * (frames + 1) * joints;
    let placed = tape.scatter_rows(future, seam_index(samples, frames, joints), [1, total, 3]);
    let mut base = Array3::<f64>::zeros((1, total, 3));
    for (s, pose) in seam.outer_iter().enumerate() {
        for (j, p) in pose.axis_iter(Axis(0)).enumerate() {
            let row = s * (frames + 1) * joints + j;
            for k in 0..3 {
                base[[0, row, k]] = p[k];
            }
        }
    }
    tape.add(placed, tape.leaf(base))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LinearCritic;

    fn w() -> LossWeights {
        LossWeights::default()
    }

    #[test]
    fn single_joint_error() {
        let pred = Array3::from_shape_vec((1, 1, 3), vec![3.0, 4.0, 0.0]).unwrap();
        let zero = Array3::zeros((1, 1, 3));
        let obs = Array3::zeros((2, 1, 3));
        let m = Array2::from_elem((2, 1), false);
        let r = loss_composite(&pred, &obs, &obs, &zero, &obs, &m, &w()).unwrap();
        assert_eq!(r.l_pred, 25.0);
        assert_eq!(r.l_mask, 0.0);
        assert_eq!(r.l_composite, 25.0);
    }

    #[test]
    fn normalization_counts() {
        // 2 masked joint-frames out of 6, each off by 1 in one axis
        let obs = Array3::zeros((3, 2, 3));
        let mut recon = obs.clone();
        recon[[0, 0, 0]] = 1.0;
        recon[[2, 1, 2]] = 1.0;
        let mut m = Array2::from_elem((3, 2), false);
        m[[0, 0]] = true;
        m[[2, 1]] = true;
        let fut = Array3::zeros((4, 2, 3));
        let r = loss_composite(&fut, &recon, &recon, &fut, &obs, &m, &w()).unwrap();
        assert_eq!(r.l_mask, 1.0);
        assert_eq!(r.l_denoise, 2.0 / 6.0);
    }

    #[test]
    fn zero_alphas_leave_prediction_only() {
        let pred = Array3::from_elem((2, 2, 3), 1.5);
        let obs = Array3::from_elem((3, 2, 3), 0.25);
        let zero_f = Array3::zeros((2, 2, 3));
        let zero_o = Array3::zeros((3, 2, 3));
        let m = Array2::from_elem((3, 2), true);
        let weights = LossWeights {
            alpha1: 0.0,
            alpha2: 0.0,
            ..w()
        };
        let r = loss_composite(&pred, &obs, &obs, &zero_f, &zero_o, &m, &weights).unwrap();
        assert_eq!(r.l_composite, r.l_pred);
        assert!(r.l_mask > 0.0);
    }

    #[test]
    fn total_arithmetic() {
        let r = LossReport {
            l_composite: 10.0,
            l_adv: -2.0,
            ..LossReport::default()
        };
        assert!((loss_total(&r, &w()) - 8.8).abs() < 1e-12);
        let only = LossWeights { beta2: 0.0, ..w() };
        assert_eq!(loss_total(&r, &only), 0.9 * 10.0);
        assert_eq!(loss_total(&LossReport::default(), &w()), 0.0);
    }

    #[test]
    fn interpolation_endpoints() {
        let x = Array3::from_elem((1, 1, 2), 2.0);
        let y = Array3::zeros((1, 1, 2));
        assert_eq!(interpolate_with(&x, &y, &[1.0]).unwrap(), x);
        assert_eq!(interpolate_with(&x, &y, &[0.0]).unwrap(), y);
        assert_eq!(
            interpolate_with(&x, &y, &[0.5]).unwrap(),
            Array3::from_elem((1, 1, 2), 1.0)
        );
        assert!(interpolate_with(&x, &Array3::zeros((2, 1, 2)), &[0.5]).is_err());
    }

    #[test]
    fn epsilons_in_unit_interval() {
        let e = draw_epsilons(1000, 9);
        assert!(e.iter().all(|v| (0.0..1.0).contains(v)));
        assert_eq!(e, draw_epsilons(1000, 9));
    }

    #[test]
    fn unit_linear_critic_has_no_penalty() {
        let tape = Tape::new();
        let critic = LinearCritic {
            w: tape.leaf(Array3::from_elem((1, 4, 1), 0.5)),
        };
        let real = Array3::from_shape_fn((3, 2, 4), |(a, b, c)| (a * 7 + b * 3 + c) as f64 * 0.1);
        let fake = real.mapv(|v| -v * 2.0 + 1.0);
        let v = loss_adversarial(&critic, &tape, &real, &fake, 10.0, 1).unwrap();
        assert_eq!(v.gp_term, 0.0);
    }

    #[test]
    fn seam_layout() {
        let tape = Tape::new();
        let seam = Array3::from_shape_fn((2, 1, 3), |(s, _, k)| (100 * s + k) as f64);
        let fut = tape.leaf(Array3::from_shape_fn((1, 4, 3), |(_, r, k)| {
            (r * 10 + k) as f64 + 0.5
        }));
        let seq = with_seam(&tape, &seam, fut, 2);
        let v = tape.value(seq);
        let col0: Vec<f64> = (0..6).map(|r| v[[0, r, 0]]).collect();
        assert_eq!(col0, vec![0.0, 0.5, 10.5, 100.0, 20.5, 30.5]);
    }
}
