//! Training configuration and its flat `key = value` text form.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Keys are the [`TrainConfig`] field names. Optional numeric settings
//! accept `none`. Booleans are `true` or `false`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Hard cap on generator steps, applied on top of `epochs`.
    pub max_steps: Option<usize>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
    pub p_m: f64,
    pub p_n: f64,
    /// Noise standard deviation in units of the per-feature training
    /// standard deviation (features are standardized before corruption).
    pub sigma: f64,
    pub joint_mask: bool,
    pub critic_steps: usize,
    pub seed: u64,
    /// Quotient-space input features (off: root-aligned coordinates).
    pub flag_d: bool,
    /// Masking and denoising auxiliary tasks.
    pub flag_e: bool,
    /// Low-rank gated decoupled attention (off: full-rank joint attention).
    pub flag_l: bool,
    pub d_model: usize,
    pub rank: usize,
    pub heads: usize,
    pub layers: usize,
    pub critic_width: usize,
    pub observed: usize,
    pub future: usize,
    pub stride: usize,
    pub fps: f64,
    pub dt: f64,
    pub clip_norm: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub threads: usize,
    /// Windows evaluated per action; `None` uses all of them.
    pub eval_windows: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            epochs: 15,
            batch_size: 16,
            max_steps: None,
            alpha1: 1.0,
            alpha2: 1.0,
            beta1: 0.9,
            beta2: 0.1,
            lambda: 10.0,
            p_m: 0.1,
            p_n: 0.1,
            sigma: 0.05,
            joint_mask: false,
            critic_steps: 1,
            seed: 0,
            flag_d: true,
            flag_e: true,
            flag_l: true,
            d_model: 64,
            rank: 16,
            heads: 4,
            layers: 2,
            critic_width: 64,
            observed: 10,
            future: 25,
            stride: 1,
            fps: 25.0,
            dt: 1.0,
            clip_norm: Some(10.0),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            threads: 1,
            eval_windows: None,
        }
    }
}

/// Every key accepted by [`TrainConfig::set`], in canonical order.
pub const CONFIG_KEYS: &[&str] = &[
    "lr",
    "epochs",
    "batch_size",
    "max_steps",
    "alpha1",
    "alpha2",
    "beta1",
    "beta2",
    "lambda",
    "p_m",
    "p_n",
    "sigma",
    "joint_mask",
    "critic_steps",
    "seed",
    "flag_d",
    "flag_e",
    "flag_l",
    "d_model",
    "rank",
    "heads",
    "layers",
    "critic_width",
    "observed",
    "future",
    "stride",
    "fps",
    "dt",
    "clip_norm",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "threads",
    "eval_windows",
];

fn parse_f64(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = v
        .parse()
        .map_err(|_| format!("expected a number, got {v:?}"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("expected a finite number, got {v:?}"))
    }
}

fn parse_usize(v: &str) -> std::result::Result<usize, String> {
    v.parse()
        .map_err(|_| format!("expected a non-negative integer, got {v:?}"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn parse_opt<T>(
    v: &str,
    f: impl Fn(&str) -> std::result::Result<T, String>,
) -> std::result::Result<Option<T>, String> {
    if v == "none" {
        Ok(None)
    } else {
        f(v).map(Some)
    }
}

fn fmt_opt<T: std::fmt::Debug>(v: &Option<T>) -> String {
    match v {
        Some(x) => format!("{x:?}"),
        None => "none".to_string(),
    }
}

impl TrainConfig {
    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "lr" => self.lr = parse_f64(value)?,
            "epochs" => self.epochs = parse_usize(value)?,
            "batch_size" => self.batch_size = parse_usize(value)?,
            "max_steps" => self.max_steps = parse_opt(value, parse_usize)?,
            "alpha1" => self.alpha1 = parse_f64(value)?,
            "alpha2" => self.alpha2 = parse_f64(value)?,
            "beta1" => self.beta1 = parse_f64(value)?,
            "beta2" => self.beta2 = parse_f64(value)?,
            "lambda" => self.lambda = parse_f64(value)?,
            "p_m" => self.p_m = parse_f64(value)?,
            "p_n" => self.p_n = parse_f64(value)?,
            "sigma" => self.sigma = parse_f64(value)?,
            "joint_mask" => self.joint_mask = parse_bool(value)?,
            "critic_steps" => self.critic_steps = parse_usize(value)?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| format!("expected an unsigned 64-bit seed, got {value:?}"))?
            }
            "flag_d" => self.flag_d = parse_bool(value)?,
            "flag_e" => self.flag_e = parse_bool(value)?,
            "flag_l" => self.flag_l = parse_bool(value)?,
            "d_model" => self.d_model = parse_usize(value)?,
            "rank" => self.rank = parse_usize(value)?,
            "heads" => self.heads = parse_usize(value)?,
            "layers" => self.layers = parse_usize(value)?,
            "critic_width" => self.critic_width = parse_usize(value)?,
            "observed" => self.observed = parse_usize(value)?,
            "future" => self.future = parse_usize(value)?,
            "stride" => self.stride = parse_usize(value)?,
            "fps" => self.fps = parse_f64(value)?,
            "dt" => self.dt = parse_f64(value)?,
            "clip_norm" => self.clip_norm = parse_opt(value, parse_f64)?,
            "adam_beta1" => self.adam_beta1 = parse_f64(value)?,
            "adam_beta2" => self.adam_beta2 = parse_f64(value)?,
            "adam_eps" => self.adam_eps = parse_f64(value)?,
            "threads" => self.threads = parse_usize(value)?,
            "eval_windows" => self.eval_windows = parse_opt(value, parse_usize)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Text form of one field, as written by [`TrainConfig::to_text`].
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lr" => format!("{:?}", self.lr),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "max_steps" => fmt_opt(&self.max_steps),
            "alpha1" => format!("{:?}", self.alpha1),
            "alpha2" => format!("{:?}", self.alpha2),
            "beta1" => format!("{:?}", self.beta1),
            "beta2" => format!("{:?}", self.beta2),
            "lambda" => format!("{:?}", self.lambda),
            "p_m" => format!("{:?}", self.p_m),
            "p_n" => format!("{:?}", self.p_n),
            "sigma" => format!("{:?}", self.sigma),
            "joint_mask" => self.joint_mask.to_string(),
            "critic_steps" => self.critic_steps.to_string(),
            "seed" => self.seed.to_string(),
            "flag_d" => self.flag_d.to_string(),
            "flag_e" => self.flag_e.to_string(),
            "flag_l" => self.flag_l.to_string(),
            "d_model" => self.d_model.to_string(),
            "rank" => self.rank.to_string(),
            "heads" => self.heads.to_string(),
            "layers" => self.layers.to_string(),
            "critic_width" => self.critic_width.to_string(),
            "observed" => self.observed.to_string(),
            "future" => self.future.to_string(),
            "stride" => self.stride.to_string(),
            "fps" => format!("{:?}", self.fps),
            "dt" => format!("{:?}", self.dt),
            "clip_norm" => fmt_opt(&self.clip_norm),
            "adam_beta1" => format!("{:?}", self.adam_beta1),
            "adam_beta2" => format!("{:?}", self.adam_beta2),
            "adam_eps" => format!("{:?}", self.adam_eps),
            "threads" => self.threads.to_string(),
            "eval_windows" => fmt_opt(&self.eval_windows),
            _ => return None,
        })
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen: Vec<&str> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("");
            if line.trim().is_empty() {
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(Error::parse(line_no, 1, "expected key = value"));
            };
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            let value_col = eq + 2 + (line[eq + 1..].len() - line[eq + 1..].trim_start().len());
            if key.is_empty() {
                return Err(Error::parse(line_no, 1, "missing key"));
            }
            if seen.contains(&key) {
                return Err(Error::parse(line_no, 1, format!("duplicate key {key:?}")));
            }
            self.set(key, value).map_err(|m| {
                let col = if m.starts_with("unknown key") {
                    1
                } else {
                    value_col
                };
                Error::parse(line_no, col, m)
            })?;
            seen.push(key);
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("lambda", self.lambda),
        ] {
            if v < 0.0 {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, p) in [("p_m", self.p_m), ("p_n", self.p_n)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidProbability { name, value: p });
            }
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidSigma(self.sigma));
        }
        if self.critic_steps == 0 {
            return fail("critic_steps must be positive".into());
        }
        if self.d_model == 0 || self.heads == 0 || self.rank == 0 || self.critic_width == 0 {
            return fail("model widths must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return fail(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            ));
        }
        if self.rank > self.d_model {
            return fail(format!(
                "rank {} exceeds d_model {}",
                self.rank, self.d_model
            ));
        }
        if self.observed < 2 && self.flag_d {
            return fail("quotient features need at least 2 observed frames".into());
        }
        if self.observed == 0 || self.future == 0 || self.stride == 0 {
            return fail("observed, future and stride must be positive".into());
        }
        if !(self.fps > 0.0) || !(self.dt > 0.0) {
            return fail("fps and dt must be positive".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return fail(format!("clip_norm must be positive, got {c}"));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || !(self.adam_eps > 0.0)
        {
            return fail("adam moment decays must be in [0, 1) and eps positive".into());
        }
        if self.threads == 0 {
            return fail("threads must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let c = TrainConfig::default();
        assert_eq!(c.lr, 0.001);
        assert_eq!((c.epochs, c.batch_size), (15, 16));
        assert_eq!((c.alpha1, c.alpha2, c.beta1, c.beta2), (1.0, 1.0, 0.9, 0.1));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.lr = 0.0025;
        c.max_steps = Some(500);
        c.clip_norm = None;
        c.flag_e = false;
        c.seed = u64::MAX;
        let back = TrainConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_key_is_settable() {
        let c = TrainConfig::default();
        for key in CONFIG_KEYS {
            let mut d = TrainConfig::default();
            d.set(key, &c.get(key).unwrap()).unwrap();
            assert_eq!(d, c, "{key}");
        }
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = TrainConfig::from_text("# hi\n\nlr = 0.01 # inline\n  epochs=3\n").unwrap();
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.epochs, 3);
    }

    #[test]
    fn errors_carry_positions() {
        let e = TrainConfig::from_text("lr = 0.1\nbogus = 1\n").unwrap_err();
        assert!(
            matches!(
                e,
                Error::Parse {
                    line: 2,
                    column: 1,
                    ..
                }
            ),
            "{e:?}"
        );
        let e = TrainConfig::from_text("lr = abc").unwrap_err();
        assert!(
            matches!(
                e,
                Error::Parse {
                    line: 1,
                    column: 6,
                    ..
                }
            ),
            "{e:?}"
        );
        let e = TrainConfig::from_text("lr 0.1").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = TrainConfig::from_text("lr = 1\nlr = 2").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        let e = TrainConfig::from_text("lr = inf").unwrap_err();
        assert!(matches!(e, Error::Parse { .. }));
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::from_text("d_model = 30\nheads = 4").is_err());
        assert!(TrainConfig::from_text("rank = 65").is_err());
        assert!(matches!(
            TrainConfig::from_text("p_m = 2"),
            Err(Error::InvalidProbability { .. })
        ));
        assert!(TrainConfig::from_text("beta2 = -1").is_err());
    }
}
