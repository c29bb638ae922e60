//! A trained predictor: parameters, feature statistics and ablation flags.

use ndarray::{Array3, Array4, Axis};

use crate::autodiff::Tape;
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::Predictor;
use crate::features::{channels, window_features, Normalizer};
use crate::motion::{root_align, Pose};
use crate::network::{
    generator_forward, unflatten_frames, Ablation, GeneratorInput, ModelDims, ModelParams,
};

/// Model dimensions implied by a configuration and a joint count.
pub fn dims_for(cfg: &TrainConfig, joints: usize) -> ModelDims {
    ModelDims {
        d_model: cfg.d_model,
        rank: cfg.rank,
        heads: cfg.heads,
        layers: cfg.layers,
        joints,
        window: cfg.observed,
        future: cfg.future,
        channels: channels(cfg.flag_d),
        critic_width: cfg.critic_width,
    }
}

pub fn ablation_for(cfg: &TrainConfig) -> Ablation {
    Ablation {
        quotient: cfg.flag_d,
        enhancement: cfg.flag_e,
        low_rank: cfg.flag_l,
    }
}

/// Poses as a `frames × J × 3` array.
pub fn poses_array(poses: &[Pose]) -> Array3<f64> {
    let joints = poses.first().map_or(0, Pose::joint_count);
    Array3::from_shape_fn((poses.len(), joints, 3), |(t, j, k)| poses[t].joint(j)[k])
}

pub fn aligned(poses: &[Pose], root: usize) -> Vec<Pose> {
    poses.iter().map(|p| root_align(p, root)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub normalizer: Normalizer,
    pub ablation: Ablation,
    pub dt: f64,
    pub root: usize,
}

impl Model {
    /// The inference part of a checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(Self {
            params: ModelParams::from_values(ck.dims, ck.params.clone())?,
            normalizer: ck.normalizer.clone(),
            ablation: ck.ablation,
            dt: ck.dt,
            root: ck.root,
        })
    }

    /// Raw features of a root-aligned observation.
    pub fn raw_features(&self, observed: &[Pose]) -> Result<Array3<f64>> {
        let dims = &self.params.dims;
        if observed.len() != dims.window {
            return Err(Error::DimsMismatch(format!(
                "observation has {} frames, model expects {}",
                observed.len(),
                dims.window
            )));
        }
        if observed.iter().any(|p| p.joint_count() != dims.joints) {
            return Err(Error::DimsMismatch(format!(
                "observation joints differ from model's {}",
                dims.joints
            )));
        }
        window_features(
            &aligned(observed, self.root),
            self.ablation.quotient,
            self.dt,
        )
    }

    /// Root-aligned future frames for one observation.
    pub fn predict_aligned(&self, observed: &[Pose]) -> Result<Vec<Pose>> {
        let feats = self.normalizer.normalize(&self.raw_features(observed)?);
        let last = root_align(&observed[observed.len() - 1], self.root);
        let anchor = poses_array(std::slice::from_ref(&last));
        let batch: Array4<f64> = feats.insert_axis(Axis(0));
        let tape = Tape::new();
        let pv = self.params.leaves(&tape);
        let out = generator_forward(
            &tape,
            &pv,
            &self.params,
            self.ablation.low_rank,
            &self.normalizer,
            &GeneratorInput {
                clean: &batch,
                anchor: &anchor,
                masked: None,
                noised: None,
            },
        )?;
        let dims = &self.params.dims;
        let frames = unflatten_frames(&tape.value(out.pred), dims.future, dims.joints).remove(0);
        frames
            .outer_iter()
            .enumerate()
            .map(|(t, f)| {
                let coords: Vec<[f64; 3]> = f.outer_iter().map(|r| [r[0], r[1], r[2]]).collect();
                if coords.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { frame: t, joint: 0 });
                }
                Pose::new(coords)
            })
            .collect()
    }
}

impl Predictor for Model {
    /// Root-aligned prediction shifted back by the last observed root.
    fn predict(&self, observed: &[Pose]) -> Result<Vec<Pose>> {
        let last = observed.last().ok_or(Error::SequenceTooShort {
            frames: 0,
            needed: 1,
        })?;
        let offset = last.joint(self.root);
        Ok(self
            .predict_aligned(observed)?
            .iter()
            .map(|p| p.translated(offset))
            .collect())
    }
}
