//! Motion data types, horizon arithmetic and root alignment.
//!
//! Coordinates are millimeters everywhere. A [`Pose`] is one frame of `J`
//! joint positions; a [`MotionSequence`] is an ordered run of poses sharing
//! one [`Skeleton`] at a fixed frame rate.

use crate::error::{Error, Result};

const INTEGRAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joint_count: usize,
    root_index: usize,
    joint_names: Option<Vec<String>>,
}

impl Skeleton {
    pub fn new(joint_count: usize, root_index: usize) -> Result<Self> {
        if joint_count < 2 {
            return Err(Error::InvalidSkeleton(format!(
                "need at least 2 joints, got {joint_count}"
            )));
        }
        if root_index >= joint_count {
            return Err(Error::InvalidSkeleton(format!(
                "root index {root_index} out of range for {joint_count} joints"
            )));
        }
        Ok(Self {
            joint_count,
            root_index,
            joint_names: None,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.joint_count {
            return Err(Error::InvalidSkeleton(format!(
                "{} names for {} joints",
                names.len(),
                self.joint_count
            )));
        }
        self.joint_names = Some(names);
        Ok(self)
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn root_index(&self) -> usize {
        self.root_index
    }

    pub fn joint_names(&self) -> Option<&[String]> {
        self.joint_names.as_deref()
    }
}

/// One frame of joint positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    coords: Vec<[f64; 3]>,
}

impl Pose {
    pub fn new(coords: Vec<[f64; 3]>) -> Result<Self> {
        for (joint, c) in coords.iter().enumerate() {
            if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { frame: 0, joint });
            }
        }
        Ok(Self { coords })
    }

    pub fn zeros(joints: usize) -> Self {
        Self {
            coords: vec![[0.0; 3]; joints],
        }
    }

    pub fn joint_count(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn joint(&self, j: usize) -> [f64; 3] {
        self.coords[j]
    }

    pub(crate) fn from_coords_unchecked(coords: Vec<[f64; 3]>) -> Self {
        Self { coords }
    }

    /// Bitwise equality of every coordinate, distinguishing `0.0` from `-0.0`.
    pub fn bitwise_eq(&self, other: &Pose) -> bool {
        self.coords.len() == other.coords.len()
            && self
                .coords
                .iter()
                .zip(&other.coords)
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()))
    }

    pub fn translated(&self, offset: [f64; 3]) -> Pose {
        Pose {
            coords: self
                .coords
                .iter()
                .map(|c| [c[0] + offset[0], c[1] + offset[1], c[2] + offset[2]])
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    frames: Vec<Pose>,
    fps: f64,
    skeleton: Skeleton,
}

impl MotionSequence {
    /// Builds a sequence, checking that every pose matches the skeleton and
    /// is finite.
    ///
    /// A single frame is accepted (deduplication can legitimately collapse
    /// a static clip to one pose); operations that need motion reject it.
    pub fn new(frames: Vec<Pose>, fps: f64, skeleton: Skeleton) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::SequenceTooShort {
                frames: 0,
                needed: 1,
            });
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidSkeleton(format!(
                "fps must be positive, got {fps}"
            )));
        }
        for (t, pose) in frames.iter().enumerate() {
            if pose.joint_count() != skeleton.joint_count() {
                return Err(Error::SkeletonMismatch(format!(
                    "frame {t} has {} joints, skeleton has {}",
                    pose.joint_count(),
                    skeleton.joint_count()
                )));
            }
            for (joint, c) in pose.coords().iter().enumerate() {
                if !c.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite { frame: t, joint });
                }
            }
        }
        Ok(Self {
            frames,
            fps,
            skeleton,
        })
    }

    pub fn frames(&self) -> &[Pose] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Pose {
        &self.frames[t]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn joint_count(&self) -> usize {
        self.skeleton.joint_count()
    }

    /// Applies `f` to every pose, keeping fps and skeleton.
    pub fn map_frames(&self, f: impl Fn(&Pose) -> Pose) -> MotionSequence {
        MotionSequence {
            frames: self.frames.iter().map(f).collect(),
            fps: self.fps,
            skeleton: self.skeleton.clone(),
        }
    }

    pub fn into_frames(self) -> Vec<Pose> {
        self.frames
    }
}

/// Future horizons in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSpec {
    milliseconds: Vec<u32>,
}

impl Default for HorizonSpec {
    fn default() -> Self {
        Self {
            milliseconds: vec![80, 160, 320, 400, 560, 1000],
        }
    }
}

impl HorizonSpec {
    pub fn new(milliseconds: Vec<u32>) -> Result<Self> {
        if milliseconds.is_empty() {
            return Err(Error::Config("horizon list is empty".into()));
        }
        if milliseconds.contains(&0) {
            return Err(Error::Config("horizons must be positive".into()));
        }
        if milliseconds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("horizons must be strictly increasing".into()));
        }
        Ok(Self { milliseconds })
    }

    pub fn milliseconds(&self) -> &[u32] {
        &self.milliseconds
    }

    /// Frame offsets for every horizon at `fps`, 1-based.
    pub fn frames(&self, fps: f64) -> Result<Vec<usize>> {
        self.milliseconds
            .iter()
            .map(|&ms| horizon_to_frame(ms, fps))
            .collect()
    }
}

/// Maps a horizon in milliseconds to a 1-based index into the predicted
/// window (frame 1 is the first predicted frame).
pub fn horizon_to_frame(ms: u32, fps: f64) -> Result<usize> {
    let exact = f64::from(ms) * fps / 1000.0;
    let rounded = exact.round();
    if ms == 0 || !(fps > 0.0) || (exact - rounded).abs() > INTEGRAL_TOL || rounded < 1.0 {
        return Err(Error::HorizonMisaligned { ms, fps });
    }
    Ok(rounded as usize)
}

/// Subtracts the root joint from every joint.
pub fn root_align(pose: &Pose, root_index: usize) -> Pose {
    let root = pose.joint(root_index);
    Pose::from_coords_unchecked(
        pose.coords()
            .iter()
            .map(|c| [c[0] - root[0], c[1] - root[1], c[2] - root[2]])
            .collect(),
    )
}

pub fn root_align_sequence(seq: &MotionSequence) -> MotionSequence {
    let root = seq.skeleton().root_index();
    seq.map_frames(|p| root_align(p, root))
}

/// Drops bitwise-duplicate consecutive frames, then keeps every `k`-th frame
/// where `k = fps / target_fps`.
pub fn downsample(seq: &MotionSequence, target_fps: f64) -> Result<MotionSequence> {
    let ratio = seq.fps() / target_fps;
    let stride = ratio.round();
    if !(target_fps > 0.0) || stride < 1.0 || (ratio - stride).abs() > INTEGRAL_TOL {
        return Err(Error::ResampleUnsupported {
            from: seq.fps(),
            to: target_fps,
        });
    }
    let stride = stride as usize;

    let mut deduped: Vec<&Pose> = Vec::with_capacity(seq.len());
    for pose in seq.frames() {
        if deduped.last().is_none_or(|prev| !prev.bitwise_eq(pose)) {
            deduped.push(pose);
        }
    }
    let frames = deduped.into_iter().step_by(stride).cloned().collect();
    MotionSequence::new(frames, target_fps, seq.skeleton().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(coords: &[[f64; 3]]) -> Pose {
        Pose::new(coords.to_vec()).unwrap()
    }

    fn seq_of(frames: Vec<Pose>, fps: f64) -> MotionSequence {
        let j = frames[0].joint_count();
        MotionSequence::new(frames, fps, Skeleton::new(j, 0).unwrap()).unwrap()
    }

    #[test]
    fn horizon_examples() {
        assert_eq!(horizon_to_frame(80, 25.0).unwrap(), 2);
        assert_eq!(horizon_to_frame(1000, 25.0).unwrap(), 25);
        assert_eq!(horizon_to_frame(40, 25.0).unwrap(), 1);
    }

    #[test]
    fn horizon_rejects_fractional_frames() {
        let err = horizon_to_frame(10, 25.0).unwrap_err();
        assert_eq!(err, Error::HorizonMisaligned { ms: 10, fps: 25.0 });
        assert!(err.to_string().contains("10 ms"));
        assert!(horizon_to_frame(0, 25.0).is_err());
    }

    #[test]
    fn horizon_spec_requires_strict_increase() {
        assert!(HorizonSpec::new(vec![80, 80]).is_err());
        assert!(HorizonSpec::new(vec![160, 80]).is_err());
        assert!(HorizonSpec::new(vec![]).is_err());
        let frames = HorizonSpec::default().frames(25.0).unwrap();
        assert_eq!(frames, vec![2, 4, 8, 10, 14, 25]);
    }

    #[test]
    fn skeleton_invariants() {
        assert!(Skeleton::new(1, 0).is_err());
        assert!(Skeleton::new(3, 3).is_err());
        let s = Skeleton::new(2, 1).unwrap();
        assert!(s.clone().with_names(vec!["a".into()]).is_err());
        assert!(s.with_names(vec!["a".into(), "b".into()]).is_ok());
    }

    #[test]
    fn sequence_rejects_mismatched_poses() {
        let frames = vec![pose(&[[0.0; 3], [1.0; 3]]), pose(&[[0.0; 3]])];
        let err = MotionSequence::new(frames, 25.0, Skeleton::new(2, 0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::SkeletonMismatch(_)));
        assert!(Pose::new(vec![[f64::NAN, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn root_align_examples() {
        let p = pose(&[[5.0; 3], [5.0; 3], [5.0; 3]]);
        assert_eq!(root_align(&p, 0), pose(&[[0.0; 3]; 3]));

        let p = pose(&[[0.0; 3], [1.0, 2.0, 3.0]]);
        assert_eq!(root_align(&p, 0), p);

        let p = pose(&[[1.0, 2.0, 3.0], [4.0, 6.0, 3.0]]);
        assert_eq!(root_align(&p, 0), pose(&[[0.0; 3], [3.0, 4.0, 0.0]]));
    }

    #[test]
    fn downsample_examples() {
        let frames: Vec<Pose> = (0..10)
            .map(|t| pose(&[[t as f64, 0.0, 0.0], [0.0; 3]]))
            .collect();
        let seq = seq_of(frames, 50.0);
        let down = downsample(&seq, 25.0).unwrap();
        assert_eq!(down.fps(), 25.0);
        let kept: Vec<f64> = down.frames().iter().map(|p| p.joint(0)[0]).collect();
        assert_eq!(kept, vec![0.0, 2.0, 4.0, 6.0, 8.0]);

        assert_eq!(downsample(&seq, 50.0).unwrap(), seq);

        let still = seq_of(vec![pose(&[[1.0; 3], [2.0; 3]]); 4], 25.0);
        assert_eq!(downsample(&still, 25.0).unwrap().len(), 1);

        assert!(matches!(
            downsample(&seq, 30.0),
            Err(Error::ResampleUnsupported { .. })
        ));
    }

    #[test]
    fn dedup_distinguishes_signed_zero() {
        let a = pose(&[[0.0; 3], [0.0; 3]]);
        let b = pose(&[[-0.0, 0.0, 0.0], [0.0; 3]]);
        let seq = seq_of(vec![a, b], 25.0);
        assert_eq!(downsample(&seq, 25.0).unwrap().len(), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_pose() -> impl Strategy<Value = Pose> {
            prop::collection::vec(prop::array::uniform3(-1e4..1e4f64), 2..12)
                .prop_map(|c| Pose::new(c).unwrap())
        }

        fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
        }

        proptest! {
            #[test]
            fn root_align_idempotent(p in arb_pose(), r in 0usize..2) {
                let once = root_align(&p, r);
                prop_assert!(root_align(&once, r).bitwise_eq(&once));
            }

            #[test]
            fn root_align_preserves_distances(p in arb_pose()) {
                let q = root_align(&p, 0);
                for a in 0..p.joint_count() {
                    for b in 0..p.joint_count() {
                        let d0 = dist(p.joint(a), p.joint(b));
                        let d1 = dist(q.joint(a), q.joint(b));
                        prop_assert!((d0 - d1).abs() <= 1e-12 * d0.max(1.0) * 1e3);
                    }
                }
            }

            #[test]
            fn horizon_monotone(a in 1u32..200, b in 1u32..200) {
                let (lo, hi) = (a.min(b) * 40, a.max(b) * 40);
                prop_assert!(horizon_to_frame(lo, 25.0).unwrap() <= horizon_to_frame(hi, 25.0).unwrap());
            }

            #[test]
            fn stride_one_without_duplicates_is_identity(n in 2usize..20) {
                let frames: Vec<Pose> = (0..n).map(|t| pose(&[[t as f64, 1.0, 2.0], [0.5; 3]])).collect();
                let seq = seq_of(frames, 25.0);
                prop_assert_eq!(downsample(&seq, 25.0).unwrap(), seq);
            }
        }
    }
}
