//! Bias-corrected Adam over a flat parameter slice.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// Standard decays `0.9 / 0.999` and `ε = 1e-8`.
    pub fn standard(len: usize) -> Self {
        Self::new(len, 0.9, 0.999, 1e-8)
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// Index of the first non-finite gradient, if any.
pub fn first_non_finite(grads: &[f64]) -> Option<usize> {
    grads.iter().position(|g| !g.is_finite())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// One Adam update of `params` in place. Non-finite gradients leave
/// parameters and state untouched and report the first offending index.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::DimsMismatch(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    if let Some(index) = first_non_finite(grads) {
        return Err(Error::AbortStep {
            index,
            name: format!("param[{index}]"),
        });
    }
    state.step += 1;
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut s = OptimizerState::standard(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 0.001).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = vec![0.0];
        let mut s = OptimizerState::standard(1);
        adam_step(&mut p, &[1.0], &mut s, 0.001).unwrap();
        assert!((p[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-9);
    }

    #[test]
    fn non_finite_aborts_without_mutation() {
        let mut p = vec![0.5, 0.5];
        let mut s = OptimizerState::standard(2);
        let err = adam_step(&mut p, &[0.1, f64::NAN], &mut s, 0.1).unwrap_err();
        assert!(matches!(err, Error::AbortStep { index: 1, .. }));
        assert_eq!(p, vec![0.5, 0.5]);
        assert_eq!(s, OptimizerState::standard(2));
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut small = vec![0.3];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.3]);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![0.3, -0.7];
            let mut s = OptimizerState::standard(2);
            for k in 0..50 {
                let g = [p[0] * 2.0 + k as f64 * 0.01, (p[1] - 1.0) * 3.0];
                adam_step(&mut p, &g, &mut s, 0.01).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }
}
