//! Alternating critic/generator optimization.
//!
//! Each generator step takes the next batch of the epoch's shuffled window
//! order and
//!
//! 1. runs clean, masked and noised windows through the shared backbone,
//! 2. updates both critics on `[last observed frame, future]` sequences
//!    (real vs. predicted) with the gradient penalty,
//! 3. updates the generator on `β₁·composite + β₂·adversarial`.
//!
//! Random streams are derived from the configured seed: `"shuffle"` per
//! epoch, `"corrupt"` per (window, epoch), `"interpolate"` per (step,
//! critic step). A run can therefore resume from its progress counters.

use ndarray::{Array3, Array4, Axis};
use rand::seq::SliceRandom;

use crate::autodiff::{Tape, Var};
use crate::checkpoint::{Checkpoint, Progress};
use crate::config::TrainConfig;
use crate::dataio::WindowedDataset;
use crate::error::{Error, Result};
use crate::features::{window_features, Normalizer};
use crate::model::{ablation_for, aligned, dims_for, poses_array, Model};
use crate::motion::Pose;
use crate::network::{
    critic_inputs, generator_forward, GeneratorInput, MlpCritic, ModelParams, ParamGroup, ParamVars,
};
use crate::objectives::{
    composite_terms, critic_terms, draw_epsilons, generator_term, interpolate_with, with_seam,
    CompositeTerms, LossReport, LossWeights,
};
use crate::optim::{adam_step, clip_global_norm, first_non_finite, OptimizerState};
use crate::perturb::build_batch;
use crate::rng::{derive_seed, stream};

/// Root-aligned windows with their normalized features.
struct Prepared {
    features: Vec<Array3<f64>>,
    observed: Vec<Array3<f64>>,
    future: Vec<Array3<f64>>,
}

fn prepare(
    dataset: &WindowedDataset,
    cfg: &TrainConfig,
    normalizer: Option<Normalizer>,
) -> Result<(Prepared, Normalizer)> {
    let root = dataset.root;
    let mut raw = Vec::with_capacity(dataset.len());
    let mut observed = Vec::with_capacity(dataset.len());
    let mut future = Vec::with_capacity(dataset.len());
    let mut all_poses: Vec<Pose> = Vec::new();
    for w in &dataset.windows {
        let obs = aligned(&w.observed, root);
        let fut = aligned(&w.future, root);
        raw.push(window_features(&obs, cfg.flag_d, cfg.dt)?);
        observed.push(poses_array(&obs));
        future.push(poses_array(&fut));
        all_poses.extend(obs);
        all_poses.extend(fut);
    }
    let normalizer = match normalizer {
        Some(n) => n,
        None => {
            let refs: Vec<&Pose> = all_poses.iter().collect();
            Normalizer::fit(&raw, &refs)?
        }
    };
    let features = raw.iter().map(|f| normalizer.normalize(f)).collect();
    Ok((
        Prepared {
            features,
            observed,
            future,
        },
        normalizer,
    ))
}

fn check_dataset(dataset: &WindowedDataset, cfg: &TrainConfig) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.observed != cfg.observed || dataset.future != cfg.future {
        return Err(Error::DimsMismatch(format!(
            "dataset windows are {}+{}, configuration expects {}+{}",
            dataset.observed, dataset.future, cfg.observed, cfg.future
        )));
    }
    Ok(())
}

fn stack<T: Clone>(items: &[&Array3<T>]) -> Array4<T> {
    let views: Vec<_> = items.iter().map(|a| a.view()).collect();
    ndarray::stack(Axis(0), &views).expect("equal window shapes")
}

/// `[1, n·F·J, 3]` rows `(window, frame, joint)`.
fn flat_rows(items: &[&Array3<f64>]) -> Array3<f64> {
    let s = stack(items);
    let (n, f, j, k) = s.dim();
    s.into_shape_with_order((1, n * f * j, k)).unwrap()
}

pub struct Trainer {
    cfg: TrainConfig,
    weights: LossWeights,
    data: Prepared,
    model: Model,
    generator_opt: OptimizerState,
    critic_opt: OptimizerState,
    progress: Progress,
    log: Vec<LossReport>,
}

impl Trainer {
    pub fn new(dataset: &WindowedDataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_dataset(dataset, &cfg)?;
        let (data, normalizer) = prepare(dataset, &cfg, None)?;
        let params = ModelParams::init(dims_for(&cfg, dataset.joints), cfg.seed)?;
        let gen_len = params.layout.group_range(ParamGroup::Generator).len();
        let critic_len = params.layout.group_range(ParamGroup::Critic).len();
        let opt = |n| OptimizerState::new(n, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        Ok(Self {
            weights: LossWeights::from_config(&cfg),
            generator_opt: opt(gen_len),
            critic_opt: opt(critic_len),
            model: Model {
                params,
                normalizer,
                ablation: ablation_for(&cfg),
                dt: cfg.dt,
                root: dataset.root,
            },
            cfg,
            data,
            progress: Progress::default(),
            log: Vec::new(),
        })
    }

    /// Continues a run from a checkpoint over the same dataset.
    pub fn resume(dataset: &WindowedDataset, ck: Checkpoint) -> Result<Self> {
        let cfg = ck.config.clone();
        cfg.validate()?;
        check_dataset(dataset, &cfg)?;
        if dims_for(&cfg, dataset.joints) != ck.dims || dataset.root != ck.root {
            return Err(Error::DimsMismatch(
                "checkpoint does not match the dataset".into(),
            ));
        }
        let (data, normalizer) = prepare(dataset, &cfg, Some(ck.normalizer))?;
        let params = ModelParams::from_values(ck.dims, ck.params)?;
        if ck.generator_opt.len() != params.layout.group_range(ParamGroup::Generator).len()
            || ck.critic_opt.len() != params.layout.group_range(ParamGroup::Critic).len()
        {
            return Err(Error::Format(
                "optimizer state does not match parameter groups".into(),
            ));
        }
        Ok(Self {
            weights: LossWeights::from_config(&cfg),
            model: Model {
                params,
                normalizer,
                ablation: ck.ablation,
                dt: ck.dt,
                root: ck.root,
            },
            generator_opt: ck.generator_opt,
            critic_opt: ck.critic_opt,
            progress: ck.progress,
            cfg,
            data,
            log: Vec::new(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            dims: self.model.params.dims,
            ablation: self.model.ablation,
            root: self.model.root,
            dt: self.model.dt,
            normalizer: self.model.normalizer.clone(),
            params: self.model.params.values.clone(),
            generator_opt: self.generator_opt.clone(),
            critic_opt: self.critic_opt.clone(),
            progress: self.progress,
            config: self.cfg.clone(),
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn log(&self) -> &[LossReport] {
        &self.log
    }

    pub fn progress(&self) -> Progress {
        self.progress
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn batches_per_epoch(&self) -> usize {
        self.data.features.len().div_ceil(self.cfg.batch_size)
    }

    pub fn finished(&self) -> bool {
        self.progress.epoch >= self.cfg.epochs
            || self.cfg.max_steps.is_some_and(|m| self.progress.step >= m)
    }

    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.features.len()).collect();
        order.shuffle(&mut stream(self.cfg.seed, "shuffle", &[epoch as u64]));
        order
    }

    /// Performs one critic/generator step. Returns `None` once the run is
    /// complete.
    pub fn step(&mut self) -> Result<Option<LossReport>> {
        if self.finished() {
            return Ok(None);
        }
        let order = self.epoch_order(self.progress.epoch);
        let start = self.progress.cursor * self.cfg.batch_size;
        let end = (start + self.cfg.batch_size).min(order.len());
        let batch = order[start..end].to_vec();
        let report = self.train_batch(&batch)?;
        self.progress.step += 1;
        self.progress.cursor += 1;
        if self.progress.cursor >= self.batches_per_epoch() {
            self.progress.cursor = 0;
            self.progress.epoch += 1;
            log::info!(
                "epoch {} done at step {}: l_pred {:.4}",
                self.progress.epoch,
                self.progress.step,
                report.l_pred
            );
        }
        self.log.push(report);
        Ok(Some(report))
    }

    /// Trains until the configured epochs or step cap are reached.
    pub fn run(&mut self) -> Result<()> {
        while self.step()?.is_some() {}
        Ok(())
    }

    /// Trains at most `n` more steps.
    pub fn run_steps(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            if self.step()?.is_none() {
                break;
            }
        }
        Ok(())
    }

    fn abort(&self, index: usize, offset: usize) -> Error {
        let layout = &self.model.params.layout;
        let name = layout
            .entry_at(offset + index)
            .map_or_else(|| format!("param[{}]", offset + index), |e| e.name.clone());
        Error::AbortStep {
            index: offset + index,
            name,
        }
    }

    fn train_batch(&mut self, batch: &[usize]) -> Result<LossReport> {
        let pass = self.forward(batch)?;
        let gp = self.critic_update(&pass)?;
        self.generator_update(pass, gp)
    }

    /// Generator forward pass and composite loss for one batch.
    fn forward(&self, batch: &[usize]) -> Result<BatchPass> {
        let cfg = &self.cfg;
        let epoch = self.progress.epoch as u64;
        let enhance = self.model.ablation.enhancement;

        let mut clean = Vec::with_capacity(batch.len());
        let mut masked = Vec::with_capacity(batch.len());
        let mut masks = Vec::with_capacity(batch.len());
        let mut noised = Vec::with_capacity(batch.len());
        let mut joint_flags = Vec::new();
        for &i in batch {
            let seed = derive_seed(cfg.seed, "corrupt", &[i as u64, epoch]);
            let pb = build_batch(&self.data.features[i], cfg, seed)?;
            joint_flags.extend(pb.mask.joint_flags().iter().copied());
            clean.push(pb.original);
            masked.push(pb.masked);
            masks.push(pb.mask.mask);
            noised.push(pb.noised);
        }
        let clean = stack(&clean.iter().collect::<Vec<_>>());
        let masked = stack(&masked.iter().collect::<Vec<_>>());
        let masks = stack(&masks.iter().collect::<Vec<_>>());
        let noised = stack(&noised.iter().collect::<Vec<_>>());
        let future = flat_rows(
            &batch
                .iter()
                .map(|&i| &self.data.future[i])
                .collect::<Vec<_>>(),
        );
        let observed = flat_rows(
            &batch
                .iter()
                .map(|&i| &self.data.observed[i])
                .collect::<Vec<_>>(),
        );
        let seam: Array3<f64> = stack(
            &batch
                .iter()
                .map(|&i| &self.data.observed[i])
                .collect::<Vec<_>>(),
        )
        .index_axis(Axis(1), cfg.observed - 1)
        .to_owned();

        let params = &self.model.params;
        let tape = Tape::new();
        let pv = params.leaves(&tape);
        let out = generator_forward(
            &tape,
            &pv,
            params,
            self.model.ablation.low_rank,
            &self.model.normalizer,
            &GeneratorInput {
                clean: &clean,
                anchor: &seam,
                masked: enhance.then_some((&masked, &masks)),
                noised: enhance.then_some(&noised),
            },
        )?;
        let terms = composite_terms(
            &tape,
            out.pred,
            &future,
            out.mask_recon,
            out.denoise_recon,
            &observed,
            &joint_flags,
            &self.weights,
        )?;
        let real_seq = {
            let t = Tape::new();
            let v = with_seam(&t, &seam, t.leaf(future), cfg.future);
            let x = t.value(v).clone();
            x
        };
        let fake_seq = tape
            .value(with_seam(&tape, &seam, out.pred, cfg.future))
            .clone();
        Ok(BatchPass {
            tape,
            pv,
            pred: out.pred,
            terms,
            seam,
            real_seq,
            fake_seq,
            windows: batch.len(),
        })
    }

    /// Critic steps on real vs. predicted sequences. Touches only the
    /// critic parameters; returns the last gradient penalty.
    fn critic_update(&mut self, pass: &BatchPass) -> Result<f64> {
        let cfg = &self.cfg;
        let step = self.progress.step;
        let n = pass.windows;
        let frames = cfg.future + 1;
        let joints = self.model.params.dims.joints;
        let critic_range = self.model.params.layout.group_range(ParamGroup::Critic);
        let mut gp_value = 0.0;
        for k in 0..cfg.critic_steps {
            let ct = Tape::new();
            let cpv = self.model.params.leaves(&ct);
            let eps = draw_epsilons(
                n,
                derive_seed(cfg.seed, "interpolate", &[step as u64, k as u64]),
            );
            let per_window =
                |a: &Array3<f64>| a.to_shape((n, frames * joints, 3)).unwrap().to_owned();
            let interp = interpolate_with(
                &per_window(&pass.real_seq),
                &per_window(&pass.fake_seq),
                &eps,
            )?;
            let interp = interp
                .into_shape_with_order((1, n * frames * joints, 3))
                .unwrap();
            let norm = &self.model.normalizer;
            let real_in = critic_inputs(&ct, ct.leaf(pass.real_seq.clone()), n, frames, norm);
            let fake_in = critic_inputs(&ct, ct.leaf(pass.fake_seq.clone()), n, frames, norm);
            let interp_in = critic_inputs(&ct, ct.leaf(interp), n, frames, norm);
            let relf = |v: Var| {
                let x = ct.value(v).clone();
                ct.leaf(x)
            };
            let (if_leaf, ic_leaf) = (relf(interp_in.fidelity), relf(interp_in.continuity));
            let idx = &self.model.params.layout.index;
            let fid = MlpCritic::from_params(&cpv, &idx.fidelity);
            let con = MlpCritic::from_params(&cpv, &idx.continuity);
            let tf = critic_terms(
                &ct,
                &fid,
                real_in.fidelity,
                fake_in.fidelity,
                if_leaf,
                cfg.lambda,
            )?;
            let tc = critic_terms(
                &ct,
                &con,
                real_in.continuity,
                fake_in.continuity,
                ic_leaf,
                cfg.lambda,
            )?;
            let loss = ct.add(tf.critic_loss, tc.critic_loss);
            if !ct.scalar(loss).is_finite() {
                return Err(Error::NonFiniteLoss { step: step + 1 });
            }
            gp_value = ct.scalar(tf.gp_term) + ct.scalar(tc.gp_term);
            let grads = cpv.flat_grad(&ct, loss, &self.model.params.layout)?;
            let mut g = grads[critic_range.clone()].to_vec();
            if let Some(i) = first_non_finite(&g) {
                return Err(self.abort(i, critic_range.start));
            }
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut g, c);
            }
            adam_step(
                &mut self.model.params.values[critic_range.clone()],
                &g,
                &mut self.critic_opt,
                cfg.lr,
            )?;
        }
        Ok(gp_value)
    }

    /// Generator step on `β₁·composite + β₂·adversarial`, scored by the
    /// current critics. Touches only the generator parameters.
    fn generator_update(&mut self, pass: BatchPass, gp_value: f64) -> Result<LossReport> {
        let BatchPass {
            tape,
            pv,
            pred,
            terms,
            seam,
            windows,
            ..
        } = pass;
        let step = self.progress.step;
        let frames = self.cfg.future + 1;
        let params = &self.model.params;
        let layout = &params.layout;
        let mut gpv = ParamVars {
            vars: pv.vars.clone(),
        };
        for (e_idx, e) in layout.entries.iter().enumerate() {
            if e.group == ParamGroup::Critic {
                gpv.vars[e_idx] = tape.leaf(params.array(e_idx));
            }
        }
        let fake = with_seam(&tape, &seam, pred, self.cfg.future);
        let fake_in = critic_inputs(&tape, fake, windows, frames, &self.model.normalizer);
        let idx = &layout.index;
        let fid = MlpCritic::from_params(&gpv, &idx.fidelity);
        let con = MlpCritic::from_params(&gpv, &idx.continuity);
        let adv = tape.add(
            generator_term(&tape, &fid, fake_in.fidelity),
            generator_term(&tape, &con, fake_in.continuity),
        );
        let total = tape.add(
            tape.scale(terms.l_composite, self.weights.beta1),
            tape.scale(adv, self.weights.beta2),
        );
        let report = LossReport {
            l_pred: tape.scalar(terms.l_pred),
            l_mask: terms.l_mask.map_or(0.0, |v| tape.scalar(v)),
            l_denoise: terms.l_denoise.map_or(0.0, |v| tape.scalar(v)),
            l_composite: tape.scalar(terms.l_composite),
            l_adv: tape.scalar(adv),
            gp_term: gp_value,
            l_total: tape.scalar(total),
        };
        if !report.is_finite() {
            return Err(Error::NonFiniteLoss { step: step + 1 });
        }
        let gen_range = layout.group_range(ParamGroup::Generator);
        let grads = gpv.flat_grad(&tape, total, layout)?;
        let mut g = grads[gen_range.clone()].to_vec();
        if let Some(i) = first_non_finite(&g) {
            return Err(self.abort(i, gen_range.start));
        }
        if let Some(c) = self.cfg.clip_norm {
            clip_global_norm(&mut g, c);
        }
        let lr = self.cfg.lr;
        adam_step(
            &mut self.model.params.values[gen_range],
            &g,
            &mut self.generator_opt,
            lr,
        )?;
        Ok(report)
    }
}

/// One batch's generator pass, shared by the critic and generator updates.
struct BatchPass {
    tape: Tape,
    pv: ParamVars,
    pred: Var,
    terms: CompositeTerms,
    /// Last observed frame per window, `B × J × 3`.
    seam: Array3<f64>,
    real_seq: Array3<f64>,
    fake_seq: Array3<f64>,
    windows: usize,
}

/// Output of a complete training run.
pub struct TrainOutput {
    pub model: Model,
    pub log: Vec<LossReport>,
    pub checkpoint: Checkpoint,
}

pub fn train(dataset: &WindowedDataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    let mut t = Trainer::new(dataset, cfg.clone())?;
    t.run()?;
    let checkpoint = t.checkpoint();
    let log = t.log.clone();
    Ok(TrainOutput {
        model: t.into_model(),
        log,
        checkpoint,
    })
}

/// Training log as CSV with a header row.
pub fn log_csv(log: &[LossReport], first_step: usize) -> String {
    let mut out = String::from(LossReport::CSV_HEADER);
    out.push('\n');
    for (i, r) in log.iter().enumerate() {
        out.push_str(&r.csv_row(first_step + i));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{make_windows, synth_generate, LabeledSequence, SynthKind};

    fn small() -> (WindowedDataset, TrainConfig) {
        let seq = synth_generate(SynthKind::Sinusoid, 3, 20, 25.0, 1, 50.0).unwrap();
        let ds = make_windows(&[LabeledSequence::new(seq, None)], 4, 3, 1).unwrap();
        let cfg = TrainConfig {
            observed: 4,
            future: 3,
            d_model: 8,
            rank: 2,
            heads: 2,
            layers: 1,
            critic_width: 8,
            batch_size: 4,
            ..TrainConfig::default()
        };
        (ds, cfg)
    }

    #[test]
    fn updates_touch_only_their_own_group() {
        let (ds, cfg) = small();
        let mut t = Trainer::new(&ds, cfg).unwrap();
        let layout = t.model.params.layout.clone();
        let gen = layout.group_range(ParamGroup::Generator);
        let critic = layout.group_range(ParamGroup::Critic);
        let before = t.model.params.values.clone();
        let pass = t.forward(&[0, 1, 2, 3]).unwrap();
        let gp = t.critic_update(&pass).unwrap();
        let mid = t.model.params.values.clone();
        assert_eq!(before[gen.clone()], mid[gen.clone()]);
        assert_ne!(before[critic.clone()], mid[critic.clone()]);
        t.generator_update(pass, gp).unwrap();
        let after = t.model.params.values.clone();
        assert_eq!(mid[critic.clone()], after[critic]);
        assert_ne!(mid[gen.clone()], after[gen]);
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let (ds, cfg) = small();
        let t = Trainer::new(&ds, cfg).unwrap();
        let mut a = t.epoch_order(0);
        assert_eq!(a, t.epoch_order(0));
        assert_ne!(a, t.epoch_order(1));
        a.sort_unstable();
        assert_eq!(a, (0..ds.len()).collect::<Vec<_>>());
    }
}
