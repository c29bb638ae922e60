//! Binary checkpoint container.
//!
//! All integers are little-endian `u64` unless noted, floats are IEEE-754
//! `f64` little-endian bit patterns.
//!
//! ```text
//! magic        4 bytes  "QMCK"
//! version      u32      1
//! dims         9 × u64  d_model rank heads layers joints window future channels critic_width
//! flags        u8       bit 0 quotient, bit 1 enhancement, bit 2 low-rank
//! root         u64
//! dt           f64
//! normalizer   u64 J, u64 C, J·C feature means, J·C feature stds,
//!              J·3 coordinate means, J·3 coordinate stds (row-major)
//! params       u64 n, n × f64 (layout order)
//! adam × 2     generator then critic: u64 n, f64 β1, f64 β2, f64 ε,
//!              u64 step, n × f64 first moments, n × f64 second moments
//! progress     u64 epoch, u64 batch cursor, u64 generator step
//! config       u64 byte length, UTF-8 `key = value` text
//! checksum     u64 FNV-1a over every preceding byte
//! ```
//!
//! Random state is not stored as generator internals: every stream is
//! re-derived from the configured seed and the progress counters.

use std::path::Path;

use ndarray::Array2;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::features::Normalizer;
use crate::network::{Ablation, ModelDims};
use crate::optim::OptimizerState;

pub const MAGIC: &[u8; 4] = b"QMCK";
pub const VERSION: u32 = 1;

/// Position of a training run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Progress {
    pub epoch: usize,
    /// Next batch within the epoch.
    pub cursor: usize,
    /// Generator steps completed.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dims: ModelDims,
    pub ablation: Ablation,
    pub root: usize,
    pub dt: f64,
    pub normalizer: Normalizer,
    pub params: Vec<f64>,
    pub generator_opt: OptimizerState,
    pub critic_opt: OptimizerState,
    pub progress: Progress,
    pub config: TrainConfig,
}

fn fnv(bytes: &[u8]) -> u64 {
    crate::rng::fnv1a(bytes)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn f64s(&mut self, v: impl IntoIterator<Item = f64>) {
        for x in v {
            self.f64(x);
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Format(format!("truncated while reading {what}")));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Format(format!("{what} out of range")))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_bits(self.u64(what)?))
    }
    /// A count of 8-byte items that must fit in the remaining input.
    fn count(&mut self, what: &str, per_item: usize) -> Result<usize> {
        let n = self.usize(what)?;
        let remaining = (self.data.len() - self.pos) / 8;
        if n.checked_mul(per_item).is_none_or(|k| k > remaining) {
            return Err(Error::Format(format!(
                "truncated: {what} claims {n} values"
            )));
        }
        Ok(n)
    }
    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format(format!("{what} too long")))?,
            what,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

fn write_opt(w: &mut Writer, s: &OptimizerState) {
    w.usize(s.len());
    w.f64(s.beta1);
    w.f64(s.beta2);
    w.f64(s.eps);
    w.u64(s.step);
    w.f64s(s.m.iter().copied());
    w.f64s(s.v.iter().copied());
}

fn read_opt(r: &mut Reader<'_>, what: &str) -> Result<OptimizerState> {
    let n = r.count(what, 2)?;
    let beta1 = r.f64(what)?;
    let beta2 = r.f64(what)?;
    let eps = r.f64(what)?;
    let step = r.u64(what)?;
    let m = r.f64s(n, what)?;
    let v = r.f64s(n, what)?;
    Ok(OptimizerState {
        m,
        v,
        step,
        beta1,
        beta2,
        eps,
    })
}

fn array(r: &mut Reader<'_>, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>> {
    let v = r.f64s(rows * cols, what)?;
    Ok(Array2::from_shape_vec((rows, cols), v).expect("sized read"))
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        let d = &self.dims;
        for v in [
            d.d_model,
            d.rank,
            d.heads,
            d.layers,
            d.joints,
            d.window,
            d.future,
            d.channels,
            d.critic_width,
        ] {
            w.usize(v);
        }
        let a = &self.ablation;
        w.0.push(u8::from(a.quotient) | u8::from(a.enhancement) << 1 | u8::from(a.low_rank) << 2);
        w.usize(self.root);
        w.f64(self.dt);
        let n = &self.normalizer;
        w.usize(n.joints());
        w.usize(n.channels());
        for arr in [&n.feat_mean, &n.feat_std, &n.coord_mean, &n.coord_std] {
            w.f64s(arr.iter().copied());
        }
        w.usize(self.params.len());
        w.f64s(self.params.iter().copied());
        write_opt(&mut w, &self.generator_opt);
        write_opt(&mut w, &self.critic_opt);
        w.usize(self.progress.epoch);
        w.usize(self.progress.cursor);
        w.usize(self.progress.step);
        let text = self.config.to_text();
        w.usize(text.len());
        w.0.extend_from_slice(text.as_bytes());
        let sum = fnv(&w.0);
        w.u64(sum);
        w.0
    }

    pub fn decode(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        if data.len() < 16 {
            return Err(Error::Format("truncated before checksum".into()));
        }
        let (body, tail) = data.split_at(data.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if stored != fnv(body) {
            return Err(Error::Format("checksum mismatch".into()));
        }
        let mut r = Reader { data: body, pos: 8 };
        let mut d = [0usize; 9];
        for v in d.iter_mut() {
            *v = r.usize("dims")?;
        }
        let dims = ModelDims {
            d_model: d[0],
            rank: d[1],
            heads: d[2],
            layers: d[3],
            joints: d[4],
            window: d[5],
            future: d[6],
            channels: d[7],
            critic_width: d[8],
        };
        let flags = r.take(1, "flags")?[0];
        if flags > 7 {
            return Err(Error::Format(format!("unknown flag bits {flags:#x}")));
        }
        let ablation = Ablation {
            quotient: flags & 1 != 0,
            enhancement: flags & 2 != 0,
            low_rank: flags & 4 != 0,
        };
        let root = r.usize("root")?;
        let dt = r.f64("dt")?;
        let joints = r.usize("normalizer joints")?;
        let channels = r.usize("normalizer channels")?;
        let cells = joints
            .checked_mul(channels.saturating_add(3))
            .and_then(|v| v.checked_mul(2))
            .ok_or_else(|| Error::Format("normalizer size overflow".into()))?;
        if cells > (body.len() - r.pos) / 8 {
            return Err(Error::Format("truncated normalizer".into()));
        }
        let normalizer = Normalizer {
            feat_mean: array(&mut r, joints, channels, "feature means")?,
            feat_std: array(&mut r, joints, channels, "feature stds")?,
            coord_mean: array(&mut r, joints, 3, "coordinate means")?,
            coord_std: array(&mut r, joints, 3, "coordinate stds")?,
        };
        let n = r.count("parameters", 1)?;
        let params = r.f64s(n, "parameters")?;
        let generator_opt = read_opt(&mut r, "generator optimizer")?;
        let critic_opt = read_opt(&mut r, "critic optimizer")?;
        let progress = Progress {
            epoch: r.usize("epoch")?,
            cursor: r.usize("cursor")?,
            step: r.usize("step")?,
        };
        let len = r.usize("config length")?;
        let text = std::str::from_utf8(r.take(len, "config")?)
            .map_err(|_| Error::Format("config text is not UTF-8".into()))?;
        let config =
            TrainConfig::from_text(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes before checksum".into()));
        }
        let ck = Self {
            dims,
            ablation,
            root,
            dt,
            normalizer,
            params,
            generator_opt,
            critic_opt,
            progress,
            config,
        };
        ck.check_consistency()?;
        Ok(ck)
    }

    fn check_consistency(&self) -> Result<()> {
        const MAX_DIM: usize = 1 << 16;
        let d = &self.dims;
        let all = [
            d.d_model,
            d.rank,
            d.heads,
            d.layers,
            d.joints,
            d.window,
            d.future,
            d.channels,
            d.critic_width,
        ];
        if all.iter().any(|&v| v > MAX_DIM) {
            return Err(Error::Format("implausibly large dims".into()));
        }
        self.dims
            .validate()
            .map_err(|e| Error::Format(format!("dims: {e}")))?;
        if self.normalizer.joints() != self.dims.joints
            || self.normalizer.channels() != self.dims.channels
        {
            return Err(Error::Format("normalizer shape disagrees with dims".into()));
        }
        if self.root >= self.dims.joints {
            return Err(Error::Format("root joint out of range".into()));
        }
        let layout = crate::network::ParamLayout::new(&self.dims)
            .map_err(|e| Error::Format(e.to_string()))?;
        if layout.total != self.params.len() {
            return Err(Error::Format(format!(
                "{} parameters stored, layout needs {}",
                self.params.len(),
                layout.total
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(Error::from)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
