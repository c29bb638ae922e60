//! Configuration layering: command-line flag over config file over base.

use std::path::{Path, PathBuf};

use clap::Args;
use qmotion::{Error, HorizonSpec, Result, TrainConfig};

/// Flags accepted by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Tunables {
    /// key = value configuration file
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 is the strict single-thread mode, 0 uses every core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub fps: Option<f64>,
    /// Masking probability
    #[arg(long, global = true)]
    pub pm: Option<f64>,
    /// Noising probability
    #[arg(long, global = true)]
    pub pn: Option<f64>,
    /// Noise standard deviation
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true)]
    pub alpha1: Option<f64>,
    #[arg(long, global = true)]
    pub alpha2: Option<f64>,
    #[arg(long, global = true)]
    pub beta1: Option<f64>,
    #[arg(long, global = true)]
    pub beta2: Option<f64>,
    /// Gradient penalty weight
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Windows per generator step
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    /// Feed raw coordinates instead of quotient features
    #[arg(long, global = true)]
    pub ablate_d: bool,
    /// Disable the masking and denoising tasks
    #[arg(long, global = true)]
    pub ablate_e: bool,
    /// Replace the gated low-rank attention with plain attention
    #[arg(long, global = true)]
    pub ablate_l: bool,
    /// Comma-separated horizons in milliseconds
    #[arg(long, global = true, value_name = "MS,MS,...")]
    pub horizons: Option<String>,
    /// Any other configuration key
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct Settings {
    pub config: TrainConfig,
    pub horizons: HorizonSpec,
}

pub fn parse_horizons(text: &str) -> Result<HorizonSpec> {
    let ms = text
        .split(',')
        .map(|t| {
            t.trim().parse::<u32>().map_err(|_| {
                Error::Config(format!(
                    "horizon {:?} is not a whole number of milliseconds",
                    t.trim()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    HorizonSpec::new(ms)
}

/// Splits the `horizons` line out of a config file, blanking it so line
/// numbers in parse errors still match the file.
fn split_horizons(text: &str) -> (String, Option<String>) {
    let mut horizons = None;
    let rest: Vec<&str> = text
        .lines()
        .map(|line| {
            let body = line.split('#').next().unwrap_or("");
            match body.split_once('=') {
                Some((k, v)) if k.trim() == "horizons" => {
                    horizons = Some(v.trim().to_string());
                    ""
                }
                _ => line,
            }
        })
        .collect();
    (rest.join("\n"), horizons)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn set(cfg: &mut TrainConfig, key: &str, value: String) -> Result<()> {
    cfg.set(key, &value)
        .map_err(|m| Error::Config(format!("{key}: {m}")))
}

impl Tunables {
    /// Layers the config file and then the flags on top of `base`.
    pub fn resolve(&self, base: TrainConfig) -> Result<Settings> {
        let mut cfg = base;
        let mut horizons = HorizonSpec::default();
        if let Some(path) = &self.config {
            let (text, h) = split_horizons(&read(path)?);
            cfg.apply_text(&text).map_err(|e| match e {
                Error::Parse {
                    line,
                    column,
                    message,
                } => Error::Config(format!("{}:{line}:{column}: {message}", path.display())),
                other => other,
            })?;
            if let Some(h) = h {
                horizons = parse_horizons(&h)?;
            }
        }
        let pairs: [(&str, Option<String>); 14] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("threads", self.threads.map(|v| v.to_string())),
            ("fps", self.fps.map(|v| v.to_string())),
            ("p_m", self.pm.map(|v| v.to_string())),
            ("p_n", self.pn.map(|v| v.to_string())),
            ("sigma", self.sigma.map(|v| v.to_string())),
            ("alpha1", self.alpha1.map(|v| v.to_string())),
            ("alpha2", self.alpha2.map(|v| v.to_string())),
            ("beta1", self.beta1.map(|v| v.to_string())),
            ("beta2", self.beta2.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch.map(|v| v.to_string())),
        ];
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            set(&mut cfg, k.trim(), v.trim().to_string())?;
        }
        for (key, value) in pairs {
            if let Some(v) = value {
                set(&mut cfg, key, v)?;
            }
        }
        if self.ablate_d {
            cfg.flag_d = false;
        }
        if self.ablate_e {
            cfg.flag_e = false;
        }
        if self.ablate_l {
            cfg.flag_l = false;
        }
        if let Some(h) = &self.horizons {
            horizons = parse_horizons(h)?;
        }
        cfg.validate()?;
        Ok(Settings {
            config: cfg,
            horizons,
        })
    }
}
