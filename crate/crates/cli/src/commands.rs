use std::path::{Path, PathBuf};

use clap::Args;
use qmotion::checkpoint::Checkpoint;
use qmotion::dataio::{
    make_windows, parse_mqs, synth_generate, write_mask_sidecar, write_mqq, write_mqs, SynthKind,
};
use qmotion::eval::Predictor;
use qmotion::model::poses_array;
use qmotion::motion::downsample;
use qmotion::perturb::build_batch;
use qmotion::quotient::encode_quotient;
use qmotion::trainer::log_csv;
use qmotion::{
    evaluate, Error, LabeledSequence, Model, MotionSequence, Pose, Result, TrainConfig, Trainer,
};

use crate::settings::{Settings, Tunables};
use crate::Command;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// sinusoid, random_walk or constant
    #[arg(long, default_value = "sinusoid")]
    kind: String,
    #[arg(long, default_value_t = 5)]
    joints: usize,
    #[arg(long, default_value_t = 60)]
    frames: usize,
    /// Number of sequences; sequence i uses seed + i.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Oscillation amplitude or step size in millimeters
    #[arg(long, default_value_t = 100.0)]
    amplitude: f64,
    #[arg(long)]
    action: Option<String>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    /// MQS input files
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    /// MQS input file
    input: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// MQS training sequences
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// CSV loss log (defaults to the checkpoint path with a .csv extension)
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from a checkpoint instead of starting fresh
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Observation file; its last frames form the observed window.
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output MQS file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// MQS test sequences
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV report path
    #[arg(long)]
    out: PathBuf,
    /// Optional SVG chart of error against horizon
    #[arg(long)]
    svg: Option<PathBuf>,
}

pub fn run(command: Command, tunables: &Tunables) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a, &with_pool(tunables.resolve(TrainConfig::default())?)?),
        Command::Transform(a) => transform(a),
        Command::Perturb(a) => perturb(a, &with_pool(tunables.resolve(TrainConfig::default())?)?),
        Command::Train(a) => train(a, tunables),
        Command::Predict(a) => predict(a, tunables),
        Command::Eval(a) => eval(a, tunables),
    }
}

fn with_pool(s: Settings) -> Result<Settings> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(s.config.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(s)
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_sequence(path: &Path) -> Result<LabeledSequence> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_mqs(&text).map_err(|e| match e {
        Error::Parse {
            line,
            column,
            message,
        } => Error::Parse {
            line,
            column,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Reads sequences and brings them to the configured frame rate.
fn read_at_rate(paths: &[PathBuf], fps: f64) -> Result<Vec<LabeledSequence>> {
    paths
        .iter()
        .map(|p| {
            let s = read_sequence(p)?;
            let sequence = if s.sequence.fps() == fps {
                s.sequence
            } else {
                downsample(&s.sequence, fps)?
            };
            Ok(LabeledSequence::new(sequence, s.action))
        })
        .collect()
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "sequence".into(), |s| s.to_string_lossy().into_owned())
}

fn synth(a: SynthArgs, s: &Settings) -> Result<()> {
    let kind: SynthKind = a.kind.parse()?;
    for i in 0..a.count {
        let seq = synth_generate(
            kind,
            a.joints,
            a.frames,
            s.config.fps,
            s.config.seed + i as u64,
            a.amplitude,
        )?;
        let path = a.out.join(format!("{}_{i:03}.mqs", a.kind));
        write(&path, write_mqs(&seq, a.action.as_deref()))?;
    }
    Ok(())
}

fn transform(a: TransformArgs) -> Result<()> {
    for input in &a.inputs {
        let seq = read_sequence(input)?.sequence;
        let q = encode_quotient(&seq, 1.0 / seq.fps())?;
        write(&a.out.join(format!("{}.mqq", stem(input))), write_mqq(&q))?;
    }
    Ok(())
}

fn from_array(frames: &ndarray::Array3<f64>, like: &MotionSequence) -> Result<MotionSequence> {
    let poses = frames
        .outer_iter()
        .map(|f| Pose::new(f.outer_iter().map(|r| [r[0], r[1], r[2]]).collect()))
        .collect::<Result<Vec<_>>>()?;
    MotionSequence::new(poses, like.fps(), like.skeleton().clone())
}

fn perturb(a: PerturbArgs, s: &Settings) -> Result<()> {
    let labeled = read_sequence(&a.input)?;
    let seq = &labeled.sequence;
    let batch = build_batch(&poses_array(seq.frames()), &s.config, s.config.seed)?;
    let name = stem(&a.input);
    let action = labeled.action.as_deref();
    write(
        &a.out.join(format!("{name}.masked.mqs")),
        write_mqs(&from_array(&batch.masked, seq)?, action),
    )?;
    write(
        &a.out.join(format!("{name}.noised.mqs")),
        write_mqs(&from_array(&batch.noised, seq)?, action),
    )?;
    write(
        &a.out.join(format!("{name}.masked.mask")),
        write_mask_sidecar(&batch.mask),
    )?;
    write(
        &a.out.join(format!("{name}.noised.mask")),
        write_mask_sidecar(&batch.noise_mask),
    )?;
    Ok(())
}

fn train(a: TrainArgs, tunables: &Tunables) -> Result<()> {
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let base = resume
        .as_ref()
        .map_or_else(TrainConfig::default, |ck| ck.config.clone());
    let s = with_pool(tunables.resolve(base)?)?;
    let cfg = s.config;
    let seqs = read_at_rate(&a.inputs, cfg.fps)?;
    let data = make_windows(&seqs, cfg.observed, cfg.future, cfg.stride)?;
    let mut trainer = match resume {
        Some(mut ck) => {
            ck.config = cfg.clone();
            Trainer::resume(&data, ck)?
        }
        None => Trainer::new(&data, cfg.clone())?,
    };
    let first_step = trainer.progress().step + 1;
    let mut epoch = trainer.progress().epoch;
    while !trainer.finished() {
        trainer.step()?;
        let p = trainer.progress();
        if p.epoch != epoch || trainer.finished() {
            if let Some(r) = trainer.log().last() {
                eprintln!(
                    "train: epoch {}/{} step {} l_pred={:.6} l_composite={:.6} l_adv={:.6} l_total={:.6}",
                    epoch + 1,
                    cfg.epochs,
                    p.step,
                    r.l_pred,
                    r.l_composite,
                    r.l_adv,
                    r.l_total
                );
            }
            epoch = p.epoch;
        }
    }
    trainer.checkpoint().save(&a.out)?;
    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("csv"));
    write(&log_path, log_csv(trainer.log(), first_step))
}

fn load_model(path: &Path, tunables: &Tunables) -> Result<(Model, Settings)> {
    let ck = Checkpoint::load(path)?;
    let s = with_pool(tunables.resolve(ck.config.clone())?)?;
    Ok((Model::from_checkpoint(&ck)?, s))
}

fn predict(a: PredictArgs, tunables: &Tunables) -> Result<()> {
    let (model, s) = load_model(&a.checkpoint, tunables)?;
    let labeled = read_at_rate(std::slice::from_ref(&a.input), s.config.fps)?.remove(0);
    let frames = labeled.sequence.frames();
    let n = model.params.dims.window;
    if frames.len() < n {
        return Err(Error::SequenceTooShort {
            frames: frames.len(),
            needed: n,
        });
    }
    let future = model.predict(&frames[frames.len() - n..])?;
    let seq = MotionSequence::new(
        future,
        labeled.sequence.fps(),
        labeled.sequence.skeleton().clone(),
    )?;
    write(&a.out, write_mqs(&seq, labeled.action.as_deref()))
}

fn eval(a: EvalArgs, tunables: &Tunables) -> Result<()> {
    let (model, s) = load_model(&a.checkpoint, tunables)?;
    let cfg = &s.config;
    let seqs = read_at_rate(&a.inputs, cfg.fps)?;
    let data = make_windows(
        &seqs,
        model.params.dims.window,
        model.params.dims.future,
        cfg.stride,
    )?;
    let report = evaluate(&model, &data, &s.horizons, cfg.eval_windows)?;
    print!("{}", report.table());
    write(&a.out, report.csv())?;
    if let Some(svg) = &a.svg {
        write(svg, report.svg())?;
    }
    Ok(())
}
