//! Network input features for an observed window.
//!
//! Quotient layout, per frame and joint (7 channels):
//! `|v|, Ω_xy, Ω_yz, Ω_zx, p1_x, p1_y, p1_z`, where `v` is the velocity
//! arriving at the frame and `p1` the last observed pose broadcast over the
//! window. The first frame has no incoming velocity and carries zeros in
//! the four motion channels. Coordinate layout is just `x, y, z`.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::motion::{MotionSequence, Pose, Skeleton};
use crate::quotient::{encode_field, tangent_velocities};

pub const QUOTIENT_CHANNELS: usize = 7;
pub const COORD_CHANNELS: usize = 3;

pub fn channels(quotient: bool) -> usize {
    if quotient {
        QUOTIENT_CHANNELS
    } else {
        COORD_CHANNELS
    }
}

fn coords_array(frames: &[Pose]) -> Array3<f64> {
    let joints = frames[0].joint_count();
    Array3::from_shape_fn((frames.len(), joints, 3), |(t, j, k)| frames[t].joint(j)[k])
}

/// Raw (unnormalized) features of an observed window, `T × J × C`.
pub fn window_features(obs: &[Pose], quotient: bool, dt: f64) -> Result<Array3<f64>> {
    if obs.is_empty() {
        return Err(Error::SequenceTooShort {
            frames: 0,
            needed: 1,
        });
    }
    if !quotient {
        return Ok(coords_array(obs));
    }
    let joints = obs[0].joint_count();
    let seq = MotionSequence::new(obs.to_vec(), 1.0, Skeleton::new(joints.max(2), 0)?)?;
    let field = tangent_velocities(&seq, dt)?;
    let (mags, cos) = encode_field(&field);
    let last = &obs[obs.len() - 1];
    let mut out = Array3::zeros((obs.len(), joints, QUOTIENT_CHANNELS));
    for t in 0..obs.len() {
        for j in 0..joints {
            if t > 0 {
                out[[t, j, 0]] = mags[[t - 1, j]];
                for c in 0..3 {
                    out[[t, j, 1 + c]] = cos.omega[[t - 1, j, c]];
                }
            }
            let p = last.joint(j);
            for c in 0..3 {
                out[[t, j, 4 + c]] = p[c];
            }
        }
    }
    Ok(out)
}

/// Per-joint, per-channel standardization of inputs and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub feat_mean: Array2<f64>,
    pub feat_std: Array2<f64>,
    pub coord_mean: Array2<f64>,
    pub coord_std: Array2<f64>,
}

const STD_FLOOR: f64 = 1e-8;

fn mean_std(
    samples: impl Iterator<Item = Array2<f64>>,
    shape: (usize, usize),
) -> (Array2<f64>, Array2<f64>) {
    let mut sum = Array2::<f64>::zeros(shape);
    let mut sq = Array2::<f64>::zeros(shape);
    let mut n = 0.0;
    let collected: Vec<Array2<f64>> = samples.collect();
    for s in &collected {
        sum += s;
        n += 1.0;
    }
    if n == 0.0 {
        return (Array2::zeros(shape), Array2::ones(shape));
    }
    let mean = sum / n;
    for s in &collected {
        let d = s - &mean;
        sq += &(&d * &d);
    }
    let std = (sq / n).mapv(|v| {
        let s = v.sqrt();
        if s < STD_FLOOR {
            1.0
        } else {
            s
        }
    });
    (mean, std)
}

impl Normalizer {
    pub fn identity(joints: usize, channels: usize) -> Self {
        Self {
            feat_mean: Array2::zeros((joints, channels)),
            feat_std: Array2::ones((joints, channels)),
            coord_mean: Array2::zeros((joints, 3)),
            coord_std: Array2::ones((joints, 3)),
        }
    }

    /// Statistics over every frame of every feature tensor and every pose.
    pub fn fit(features: &[Array3<f64>], poses: &[&Pose]) -> Result<Self> {
        let first = features.first().ok_or(Error::EmptyDataset)?;
        let (_, joints, channels) = first.dim();
        let (feat_mean, feat_std) = mean_std(
            features
                .iter()
                .flat_map(|f| f.outer_iter().map(|row| row.to_owned()).collect::<Vec<_>>()),
            (joints, channels),
        );
        let (coord_mean, coord_std) = mean_std(
            poses
                .iter()
                .map(|p| Array2::from_shape_fn((joints, 3), |(j, k)| p.joint(j)[k])),
            (joints, 3),
        );
        Ok(Self {
            feat_mean,
            feat_std,
            coord_mean,
            coord_std,
        })
    }

    pub fn joints(&self) -> usize {
        self.feat_mean.nrows()
    }

    pub fn channels(&self) -> usize {
        self.feat_mean.ncols()
    }

    pub fn normalize(&self, features: &Array3<f64>) -> Array3<f64> {
        let mut out = features.clone();
        for mut frame in out.outer_iter_mut() {
            frame -= &self.feat_mean;
            frame /= &self.feat_std;
        }
        out
    }

    /// Constant `[1, n * J, 3]` tiles of coordinate std and mean for rows
    /// ordered `(.., j)` with `n` blocks of `J` joints.
    pub fn coord_tiles(&self, blocks: usize) -> (Array3<f64>, Array3<f64>) {
        let j = self.joints();
        let std = Array3::from_shape_fn((1, blocks * j, 3), |(_, r, k)| self.coord_std[[r % j, k]]);
        let mean =
            Array3::from_shape_fn((1, blocks * j, 3), |(_, r, k)| self.coord_mean[[r % j, k]]);
        (std, mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window() -> Vec<Pose> {
        vec![
            Pose::new(vec![[0.0; 3], [0.0, 0.0, 0.0]]).unwrap(),
            Pose::new(vec![[0.0; 3], [3.0, 4.0, 0.0]]).unwrap(),
            Pose::new(vec![[0.0; 3], [3.0, 4.0, 0.0]]).unwrap(),
        ]
    }

    #[test]
    fn quotient_layout() {
        let f = window_features(&window(), true, 1.0).unwrap();
        assert_eq!(f.dim(), (3, 2, 7));
        // first frame has no incoming velocity
        assert!((0..4).all(|c| f[[0, 1, c]] == 0.0));
        assert_eq!(f[[1, 1, 0]], 5.0);
        assert!((f[[1, 1, 2]] - 0.8).abs() < 1e-15);
        assert_eq!(f[[2, 1, 0]], 0.0);
        for t in 0..3 {
            assert_eq!([f[[t, 1, 4]], f[[t, 1, 5]], f[[t, 1, 6]]], [3.0, 4.0, 0.0]);
        }
    }

    #[test]
    fn coordinate_layout() {
        let f = window_features(&window(), false, 1.0).unwrap();
        assert_eq!(f.dim(), (3, 2, 3));
        assert_eq!(f[[1, 1, 1]], 4.0);
    }

    #[test]
    fn normalizer_standardizes() {
        let w = window();
        let f = window_features(&w, false, 1.0).unwrap();
        let poses: Vec<&Pose> = w.iter().collect();
        let n = Normalizer::fit(std::slice::from_ref(&f), &poses).unwrap();
        let z = n.normalize(&f);
        // joint 0 is constant, so its std falls back to 1
        assert_eq!(n.feat_std[[0, 0]], 1.0);
        let col: Vec<f64> = (0..3).map(|t| z[[t, 1, 0]]).collect();
        let mean = col.iter().sum::<f64>() / 3.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert_eq!(n.coord_mean[[1, 0]], 2.0);
    }
}
