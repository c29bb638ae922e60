//! Masked and noised copies of a feature tensor for the auxiliary
//! reconstruction and denoising tasks.
//!
//! Feature tensors are `T × J × C`. Corruption is drawn per scalar in
//! row-major order from a ChaCha8 stream: one uniform draw decides
//! selection, and selected entries of the noise stream take one extra
//! standard-normal draw.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    Masked,
    Noised,
}

impl CorruptionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::Masked => "masked",
            CorruptionKind::Noised => "noised",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionMask {
    pub mask: Array3<bool>,
    pub kind: CorruptionKind,
}

impl CorruptionMask {
    pub fn clean(shape: (usize, usize, usize), kind: CorruptionKind) -> Self {
        Self {
            mask: Array3::from_elem(shape, false),
            kind,
        }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// `(t, j, channel)` of every corrupted scalar in row-major order.
    pub fn triples(&self) -> Vec<(usize, usize, usize)> {
        self.mask
            .indexed_iter()
            .filter(|(_, &m)| m)
            .map(|((t, j, c), _)| (t, j, c))
            .collect()
    }

    /// True for every `(t, j)` with at least one corrupted channel.
    pub fn joint_flags(&self) -> ndarray::Array2<bool> {
        let (t, j, _) = self.mask.dim();
        ndarray::Array2::from_shape_fn((t, j), |(a, b)| {
            self.mask.slice(ndarray::s![a, b, ..]).iter().any(|&m| m)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedBatch {
    pub original: Array3<f64>,
    pub masked: Array3<f64>,
    pub mask: CorruptionMask,
    pub noised: Array3<f64>,
    pub noise_mask: CorruptionMask,
    pub seed: u64,
}

fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidProbability { name, value: p })
    }
}

/// Replaces each scalar with the sentinel `0.0` with probability `p_m`.
pub fn apply_mask(
    features: &Array3<f64>,
    p_m: f64,
    rng_seed: u64,
) -> Result<(Array3<f64>, CorruptionMask)> {
    check_probability("p_m", p_m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = features.clone();
    let mut mask = CorruptionMask::clean(features.dim(), CorruptionKind::Masked);
    for (x, m) in out.iter_mut().zip(mask.mask.iter_mut()) {
        if rng.random::<f64>() < p_m {
            *x = 0.0;
            *m = true;
        }
    }
    Ok((out, mask))
}

/// Masks whole `(t, j)` tokens (every channel) with probability `p_m`.
pub fn apply_joint_mask(
    features: &Array3<f64>,
    p_m: f64,
    rng_seed: u64,
) -> Result<(Array3<f64>, CorruptionMask)> {
    check_probability("p_m", p_m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (t_len, joints, channels) = features.dim();
    let mut out = features.clone();
    let mut mask = CorruptionMask::clean(features.dim(), CorruptionKind::Masked);
    for t in 0..t_len {
        for j in 0..joints {
            if rng.random::<f64>() < p_m {
                for c in 0..channels {
                    out[[t, j, c]] = 0.0;
                    mask.mask[[t, j, c]] = true;
                }
            }
        }
    }
    Ok((out, mask))
}

/// Adds `N(0, sigma²)` noise to each scalar with probability `p_n`.
pub fn apply_noise(
    features: &Array3<f64>,
    p_n: f64,
    sigma: f64,
    rng_seed: u64,
) -> Result<(Array3<f64>, CorruptionMask)> {
    check_probability("p_n", p_n)?;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidSigma(sigma));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = features.clone();
    let mut mask = CorruptionMask::clean(features.dim(), CorruptionKind::Noised);
    for (x, m) in out.iter_mut().zip(mask.mask.iter_mut()) {
        if rng.random::<f64>() < p_n {
            let eps: f64 = rng.sample(StandardNormal);
            *x += sigma * eps;
            *m = true;
        }
    }
    Ok((out, mask))
}

/// Builds `(P, P_M, P_D)` from independent mask and noise streams derived
/// from `seed`. With the enhancement flag off all three are copies of the
/// input and both masks are clean.
pub fn build_batch(features: &Array3<f64>, cfg: &TrainConfig, seed: u64) -> Result<PerturbedBatch> {
    if !cfg.flag_e {
        return Ok(PerturbedBatch {
            original: features.clone(),
            masked: features.clone(),
            mask: CorruptionMask::clean(features.dim(), CorruptionKind::Masked),
            noised: features.clone(),
            noise_mask: CorruptionMask::clean(features.dim(), CorruptionKind::Noised),
            seed,
        });
    }
    let mask_seed = derive_seed(seed, "mask", &[]);
    let noise_seed = derive_seed(seed, "noise", &[]);
    let (masked, mask) = if cfg.joint_mask {
        apply_joint_mask(features, cfg.p_m, mask_seed)?
    } else {
        apply_mask(features, cfg.p_m, mask_seed)?
    };
    let (noised, noise_mask) = apply_noise(features, cfg.p_n, cfg.sigma, noise_seed)?;
    Ok(PerturbedBatch {
        original: features.clone(),
        masked,
        mask,
        noised,
        noise_mask,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // two-sided 99.9% normal quantile
    const Z999: f64 = 3.290_526_731_491_926;

    fn ramp(shape: (usize, usize, usize)) -> Array3<f64> {
        let mut k = 0.0;
        Array3::from_shape_fn(shape, |_| {
            k += 1.0;
            k * 0.37 - 11.0
        })
    }

    #[test]
    fn mask_extremes() {
        let x = ramp((4, 5, 3));
        let (y, m) = apply_mask(&x, 0.0, 1).unwrap();
        assert_eq!(y, x);
        assert_eq!(m.count(), 0);

        let (y, m) = apply_mask(&x, 1.0, 1).unwrap();
        assert_eq!(m.count(), x.len());
        assert!(y.iter().all(|&v| v == 0.0));
        assert_eq!(m.kind, CorruptionKind::Masked);
    }

    #[test]
    fn mask_fraction_within_binomial_ci() {
        let n = 100_000usize;
        let x = Array3::from_elem((1000, 10, 10), 1.0);
        let p = 0.1;
        let (_, m) = apply_mask(&x, p, 42).unwrap();
        let frac = m.count() as f64 / n as f64;
        let half = Z999 * (p * (1.0 - p) / n as f64).sqrt();
        assert!((frac - p).abs() < half, "fraction {frac}");
    }

    #[test]
    fn noise_moments() {
        let x = ramp((1000, 10, 10));
        let (y, m) = apply_noise(&x, 1.0, 10.0, 9).unwrap();
        assert_eq!(m.count(), x.len());
        let d: Vec<f64> = y.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < Z999 * 10.0 / n.sqrt(), "mean {mean}");
        assert!((9.8..=10.2).contains(&sd), "sd {sd}");
    }

    #[test]
    fn noise_zero_probability_and_determinism() {
        let x = ramp((6, 4, 3));
        let (y, m) = apply_noise(&x, 0.0, 1.0, 3).unwrap();
        assert_eq!(y, x);
        assert_eq!(m.count(), 0);

        let a = apply_noise(&x, 0.5, 2.0, 77).unwrap();
        let b = apply_noise(&x, 0.5, 2.0, 77).unwrap();
        assert!(a
            .0
            .iter()
            .zip(b.0.iter())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn invalid_parameters() {
        let x = ramp((2, 2, 3));
        assert!(matches!(
            apply_mask(&x, 1.5, 0),
            Err(Error::InvalidProbability { name: "p_m", .. })
        ));
        assert!(matches!(
            apply_noise(&x, -0.1, 1.0, 0),
            Err(Error::InvalidProbability { name: "p_n", .. })
        ));
        assert_eq!(
            apply_noise(&x, 0.1, 0.0, 0).unwrap_err(),
            Error::InvalidSigma(0.0)
        );
    }

    #[test]
    fn build_batch_ablation_off() {
        let x = ramp((5, 4, 3));
        let cfg = TrainConfig {
            flag_e: false,
            ..TrainConfig::default()
        };
        let b = build_batch(&x, &cfg, 5).unwrap();
        assert_eq!(b.masked, x);
        assert_eq!(b.noised, x);
        assert_eq!(b.mask.count() + b.noise_mask.count(), 0);
    }

    #[test]
    fn build_batch_streams_are_independent() {
        let x = ramp((100, 10, 10));
        let cfg = TrainConfig {
            p_m: 0.1,
            p_n: 0.1,
            sigma: 0.5,
            ..TrainConfig::default()
        };
        let b = build_batch(&x, &cfg, 11).unwrap();
        let n = x.len() as f64;
        let half = Z999 * (0.1 * 0.9 / n).sqrt();
        assert!((b.mask.count() as f64 / n - 0.1).abs() < half);
        assert!((b.noise_mask.count() as f64 / n - 0.1).abs() < half);
        assert_ne!(b.mask.mask, b.noise_mask.mask);
        // overlap of two independent 10% draws is about 1%
        let both = b
            .mask
            .mask
            .iter()
            .zip(b.noise_mask.mask.iter())
            .filter(|(a, c)| **a && **c)
            .count() as f64;
        let half_both = Z999 * (0.01 * 0.99 / n).sqrt();
        assert!((both / n - 0.01).abs() < half_both, "overlap {}", both / n);
    }

    #[test]
    fn neighbouring_seeds_differ() {
        let x = ramp((10, 10, 10));
        let (_, a) = apply_mask(&x, 0.5, 1000).unwrap();
        let (_, b) = apply_mask(&x, 0.5, 1001).unwrap();
        assert_ne!(a.mask, b.mask);
    }

    #[test]
    fn joint_masking_covers_all_channels() {
        let x = ramp((50, 6, 7));
        let (y, m) = apply_joint_mask(&x, 0.3, 4).unwrap();
        let flags = m.joint_flags();
        for ((t, j), &f) in flags.indexed_iter() {
            for c in 0..7 {
                assert_eq!(m.mask[[t, j, c]], f);
                if !f {
                    assert_eq!(y[[t, j, c]].to_bits(), x[[t, j, c]].to_bits());
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn untouched_entries_are_bitwise_equal(
                seed in any::<u64>(), pm in 0.0..=1.0f64, pn in 0.0..=1.0f64, sigma in 1e-3..10.0f64,
            ) {
                let x = ramp((8, 5, 7));
                let cfg = TrainConfig { p_m: pm, p_n: pn, sigma, ..TrainConfig::default() };
                let b = build_batch(&x, &cfg, seed).unwrap();
                for (idx, &orig) in x.indexed_iter() {
                    if !b.mask.mask[idx] {
                        prop_assert_eq!(b.masked[idx].to_bits(), orig.to_bits());
                    }
                    if !b.noise_mask.mask[idx] {
                        prop_assert_eq!(b.noised[idx].to_bits(), orig.to_bits());
                    }
                }
                let again = build_batch(&x, &cfg, seed).unwrap();
                prop_assert_eq!(again, b);
            }
        }
    }
}
