//! Quotient-space pose features.
//!
//! A sequence is reduced to per-joint velocity magnitudes plus, for each of
//! the three coordinate planes, the cosine between the velocity and its
//! orthogonal projection onto that plane. Together with the last observed
//! pose these form a [`QuotientRepresentation`].
//!
//! For every non-zero velocity the three cosines satisfy
//! `Ω_xy² + Ω_yz² + Ω_zx² = 2`, since each squared cosine is the fraction
//! of `‖v‖²` lying in that plane and each axis belongs to two planes.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::motion::{MotionSequence, Pose};

/// One of the three fixed 2-planes of `Gr(2, 3)` used for projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Plane {
    Xy,
    Yz,
    Zx,
}

impl Plane {
    /// Channel order used throughout: `Ω_xy, Ω_yz, Ω_zx`.
    pub const ALL: [Plane; 3] = [Plane::Xy, Plane::Yz, Plane::Zx];

    /// Orthonormal basis `U_α` as two column vectors.
    pub fn basis(self) -> [[f64; 3]; 2] {
        match self {
            Plane::Xy => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            Plane::Yz => [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            Plane::Zx => [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]],
        }
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthogonal projection `U_α U_αᵀ v`.
pub fn grassmann_project(v: [f64; 3], plane: Plane) -> [f64; 3] {
    let mut out = [0.0; 3];
    for u in plane.basis() {
        let coef = dot(v, u);
        for k in 0..3 {
            out[k] += coef * u[k];
        }
    }
    out
}

/// Cosine between a velocity and its projection onto a plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthogonalCosine {
    pub value: f64,
    /// False only when `v` itself is zero.
    pub valid: bool,
}

pub fn orthogonal_cosine(v: [f64; 3], plane: Plane) -> OrthogonalCosine {
    let v_norm = norm(v);
    if v_norm == 0.0 {
        return OrthogonalCosine {
            value: 0.0,
            valid: false,
        };
    }
    let proj = grassmann_project(v, plane);
    let proj_norm = norm(proj);
    if proj_norm == 0.0 {
        // v is orthogonal to the plane; the cosine tends to 0.
        return OrthogonalCosine {
            value: 0.0,
            valid: true,
        };
    }
    let value = (dot(v, proj) / (v_norm * proj_norm)).clamp(0.0, 1.0);
    OrthogonalCosine { value, valid: true }
}

/// Finite-difference velocities, `(T-1) × J × 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentField {
    pub velocities: Array3<f64>,
    pub dt: f64,
}

impl TangentField {
    pub fn steps(&self) -> usize {
        self.velocities.shape()[0]
    }

    pub fn joints(&self) -> usize {
        self.velocities.shape()[1]
    }

    pub fn velocity(&self, t: usize, j: usize) -> [f64; 3] {
        [
            self.velocities[[t, j, 0]],
            self.velocities[[t, j, 1]],
            self.velocities[[t, j, 2]],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrassmannCosines {
    /// `(T-1) × J × 3`, channels ordered `Ω_xy, Ω_yz, Ω_zx`.
    pub omega: Array3<f64>,
    pub valid: Array2<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuotientRepresentation {
    pub last_pose: Pose,
    pub magnitudes: Array2<f64>,
    pub cosines: GrassmannCosines,
}

impl QuotientRepresentation {
    pub fn steps(&self) -> usize {
        self.magnitudes.shape()[0]
    }

    pub fn joints(&self) -> usize {
        self.magnitudes.shape()[1]
    }

    /// `(|v|, Ω_xy, Ω_yz, Ω_zx)` for one frame step and joint.
    pub fn channels(&self, t: usize, j: usize) -> [f64; 4] {
        let o = &self.cosines.omega;
        [
            self.magnitudes[[t, j]],
            o[[t, j, 0]],
            o[[t, j, 1]],
            o[[t, j, 2]],
        ]
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() && dt > 0.0 {
        Ok(())
    } else {
        Err(Error::DimsMismatch(format!(
            "dt must be positive, got {dt}"
        )))
    }
}

pub fn tangent_velocities(seq: &MotionSequence, dt: f64) -> Result<TangentField> {
    check_dt(dt)?;
    let t_len = seq.len();
    if t_len < 2 {
        return Err(Error::SequenceTooShort {
            frames: t_len,
            needed: 2,
        });
    }
    let joints = seq.joint_count();
    let mut velocities = Array3::zeros((t_len - 1, joints, 3));
    for t in 0..t_len - 1 {
        let (a, b) = (seq.frame(t), seq.frame(t + 1));
        for j in 0..joints {
            let (pa, pb) = (a.joint(j), b.joint(j));
            for k in 0..3 {
                velocities[[t, j, k]] = (pb[k] - pa[k]) / dt;
            }
        }
    }
    Ok(TangentField { velocities, dt })
}

/// Velocity magnitudes and plane cosines of a tangent field.
pub fn encode_field(field: &TangentField) -> (Array2<f64>, GrassmannCosines) {
    let (steps, joints) = (field.steps(), field.joints());
    let mut magnitudes = Array2::zeros((steps, joints));
    let mut omega = Array3::zeros((steps, joints, 3));
    let mut valid = Array2::from_elem((steps, joints), false);
    for t in 0..steps {
        for j in 0..joints {
            let v = field.velocity(t, j);
            magnitudes[[t, j]] = norm(v);
            for (c, plane) in Plane::ALL.into_iter().enumerate() {
                let cos = orthogonal_cosine(v, plane);
                omega[[t, j, c]] = cos.value;
                valid[[t, j]] = cos.valid;
            }
        }
    }
    (magnitudes, GrassmannCosines { omega, valid })
}

pub fn encode_quotient(seq: &MotionSequence, dt: f64) -> Result<QuotientRepresentation> {
    let field = tangent_velocities(seq, dt)?;
    let (magnitudes, cosines) = encode_field(&field);
    Ok(QuotientRepresentation {
        last_pose: seq.frame(seq.len() - 1).clone(),
        magnitudes,
        cosines,
    })
}

/// Rebuilds a sequence from its first frame and a tangent field.
pub fn integrate_velocities(start: &Pose, field: &TangentField) -> Result<Vec<Pose>> {
    if start.joint_count() != field.joints() {
        return Err(Error::SkeletonMismatch(format!(
            "start pose has {} joints, field has {}",
            start.joint_count(),
            field.joints()
        )));
    }
    let mut frames = Vec::with_capacity(field.steps() + 1);
    frames.push(start.clone());
    for t in 0..field.steps() {
        let prev = &frames[t];
        let next = (0..field.joints())
            .map(|j| {
                let p = prev.joint(j);
                let v = field.velocity(t, j);
                [
                    p[0] + v[0] * field.dt,
                    p[1] + v[1] * field.dt,
                    p[2] + v[2] * field.dt,
                ]
            })
            .collect();
        frames.push(Pose::from_coords_unchecked(next));
    }
    Ok(frames)
}

/// Recovers `(|v_x|, |v_y|, |v_z|)` from the magnitude and the three
/// cosines. Signs are lost by the encoding.
pub fn component_magnitudes(q: &QuotientRepresentation, t: usize, j: usize) -> Result<[f64; 3]> {
    if !q.cosines.valid[[t, j]] {
        return Err(Error::DegenerateVelocity { frame: t, joint: j });
    }
    let [mag, xy, yz, zx] = q.channels(t, j);
    Ok(components_from_cosines(mag, xy, yz, zx))
}

pub(crate) fn components_from_cosines(mag: f64, xy: f64, yz: f64, zx: f64) -> [f64; 3] {
    let part = |a: f64, b: f64| mag * (a * a + b * b - 1.0).max(0.0).sqrt();
    [part(xy, zx), part(xy, yz), part(yz, zx)]
}
