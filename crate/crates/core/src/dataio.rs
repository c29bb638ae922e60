//! Text formats, synthetic motion and windowed datasets.
//!
//! # MQS (motion sequence)
//!
//! ```text
//! MQS1 J=<joints> T=<frames> fps=<fps> root=<root>[ action=<label>]
//! <x0 y0 z0 x1 y1 z1 ...>      T lines of 3J numbers, millimeters
//! ```
//!
//! Header fields after the magic may come in any order; `root` defaults
//! to 0 and `action` is optional (no whitespace). Numbers are written in
//! shortest round-trip form, so parsing a written file recovers every
//! coordinate bitwise. Non-finite values are rejected.
//!
//! # MQQ (quotient features)
//!
//! ```text
//! MQQ v1 J=<joints> T=<steps>
//! <|v|> <Ω_xy> <Ω_yz> <Ω_zx> <valid 0|1>     one line per (step, joint), step-major
//! ```
//!
//! # MQM (corruption mask sidecar)
//!
//! ```text
//! MQM1 kind=<masked|noised> T=<frames> J=<joints> C=<channels>
//! <t> <j> <channel>            one line per corrupted scalar, row-major
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::motion::{MotionSequence, Pose, Skeleton};
use crate::perturb::{CorruptionKind, CorruptionMask};
use crate::quotient::{GrassmannCosines, QuotientRepresentation};
use crate::rng;

/// A sequence with its optional action label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub sequence: MotionSequence,
    pub action: Option<String>,
}

impl LabeledSequence {
    pub fn new(sequence: MotionSequence, action: Option<String>) -> Self {
        Self { sequence, action }
    }
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokens(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: &line[s..i],
                    column: line[..s].chars().count() + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &line[s..],
            column: line[..s].chars().count() + 1,
        });
    }
    out
}

fn parse(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::parse(line, column, message)
}

fn number(tok: &Token<'_>, line: usize) -> Result<f64> {
    let v: f64 = tok
        .text
        .parse()
        .map_err(|_| parse(line, tok.column, format!("invalid number `{}`", tok.text)))?;
    if !v.is_finite() {
        return Err(parse(
            line,
            tok.column,
            format!("non-finite value `{}`", tok.text),
        ));
    }
    Ok(v)
}

fn integer(tok: &Token<'_>, text: &str, line: usize) -> Result<usize> {
    text.parse().map_err(|_| {
        parse(
            line,
            tok.column,
            format!("invalid integer in `{}`", tok.text),
        )
    })
}

/// Parses `key=value` header tokens after the magic.
fn header_fields<'a>(
    toks: &'a [Token<'a>],
    line: usize,
    allowed: &[&str],
) -> Result<HashMap<&'a str, (&'a str, &'a Token<'a>)>> {
    let mut out = HashMap::new();
    for tok in toks {
        let (k, v) = tok.text.split_once('=').ok_or_else(|| {
            parse(
                line,
                tok.column,
                format!("expected key=value, got `{}`", tok.text),
            )
        })?;
        if !allowed.contains(&k) {
            return Err(parse(
                line,
                tok.column,
                format!("unknown header field `{k}`"),
            ));
        }
        if out.insert(k, (v, tok)).is_some() {
            return Err(parse(
                line,
                tok.column,
                format!("duplicate header field `{k}`"),
            ));
        }
    }
    Ok(out)
}

fn require<'a>(
    fields: &HashMap<&str, (&'a str, &'a Token<'a>)>,
    key: &str,
    line: usize,
) -> Result<(&'a str, &'a Token<'a>)> {
    fields
        .get(key)
        .copied()
        .ok_or_else(|| parse(line, 1, format!("missing header field `{key}`")))
}

fn lines(text: &str) -> Vec<&str> {
    let mut v: Vec<&str> = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect();
    if v.last() == Some(&"") {
        v.pop();
    }
    v
}

fn check_magic(toks: &[Token<'_>], magic: &str) -> Result<()> {
    match toks.first() {
        Some(t) if t.text == magic => Ok(()),
        Some(t) => Err(parse(
            1,
            t.column,
            format!("bad magic `{}`, expected `{magic}`", t.text),
        )),
        None => Err(parse(1, 1, format!("missing `{magic}` header"))),
    }
}

pub fn parse_mqs(text: &str) -> Result<LabeledSequence> {
    let all = lines(text);
    let head = tokens(all.first().copied().unwrap_or(""));
    check_magic(&head, "MQS1")?;
    let fields = header_fields(&head[1..], 1, &["J", "T", "fps", "root", "action"])?;
    let (jv, jt) = require(&fields, "J", 1)?;
    let joints = integer(jt, jv, 1)?;
    let (tv, tt) = require(&fields, "T", 1)?;
    let frames = integer(tt, tv, 1)?;
    let (fv, ft) = require(&fields, "fps", 1)?;
    let fps: f64 = fv
        .parse()
        .ok()
        .filter(|f: &f64| f.is_finite() && *f > 0.0)
        .ok_or_else(|| parse(1, ft.column, format!("invalid fps `{fv}`")))?;
    let root = match fields.get("root") {
        Some((v, t)) => integer(t, v, 1)?,
        None => 0,
    };
    let action = fields.get("action").map(|(v, _)| v.to_string());
    let skeleton = Skeleton::new(joints, root).map_err(|e| parse(1, jt.column, e.to_string()))?;
    if frames == 0 {
        return Err(parse(1, tt.column, "T must be positive"));
    }
    let width = joints
        .checked_mul(3)
        .ok_or_else(|| parse(1, jt.column, "J is too large"))?;
    let body = &all[1..];
    if body.len() > frames {
        return Err(parse(
            frames + 2,
            1,
            format!("expected {frames} frame lines, found more"),
        ));
    }
    let mut poses = Vec::with_capacity(frames.min(body.len()));
    for t in 0..frames {
        let line_no = t + 2;
        let line = body.get(t).ok_or_else(|| {
            parse(
                line_no,
                1,
                format!("expected {frames} frame lines, found {}", body.len()),
            )
        })?;
        let toks = tokens(line);
        if toks.len() != width {
            let col = toks
                .get(width)
                .map_or(line.chars().count() + 1, |t| t.column);
            return Err(parse(
                line_no,
                col,
                format!("expected {width} numbers, found {}", toks.len()),
            ));
        }
        let mut coords = Vec::with_capacity(joints);
        for j in 0..joints {
            let mut c = [0.0; 3];
            for (k, slot) in c.iter_mut().enumerate() {
                *slot = number(&toks[3 * j + k], line_no)?;
            }
            coords.push(c);
        }
        poses.push(Pose::from_coords_unchecked(coords));
    }
    let sequence =
        MotionSequence::new(poses, fps, skeleton).map_err(|e| parse(1, 1, e.to_string()))?;
    Ok(LabeledSequence { sequence, action })
}

pub fn write_mqs(seq: &MotionSequence, action: Option<&str>) -> String {
    let mut out = format!(
        "MQS1 J={} T={} fps={:?} root={}",
        seq.joint_count(),
        seq.len(),
        seq.fps(),
        seq.skeleton().root_index()
    );
    if let Some(a) = action {
        let _ = write!(out, " action={a}");
    }
    out.push('\n');
    for pose in seq.frames() {
        let mut first = true;
        for c in pose.coords() {
            for v in c {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:?}");
            }
        }
        out.push('\n');
    }
    out
}

/// Quotient features as stored in an MQQ file.
#[derive(Debug, Clone, PartialEq)]
pub struct QuotientTable {
    pub magnitudes: Array2<f64>,
    pub cosines: GrassmannCosines,
}

pub fn write_mqq(q: &QuotientRepresentation) -> String {
    let (steps, joints) = (q.steps(), q.joints());
    let mut out = format!("MQQ v1 J={joints} T={steps}\n");
    for t in 0..steps {
        for j in 0..joints {
            let [m, a, b, c] = q.channels(t, j);
            let valid = u8::from(q.cosines.valid[[t, j]]);
            let _ = writeln!(out, "{m:?} {a:?} {b:?} {c:?} {valid}");
        }
    }
    out
}

pub fn parse_mqq(text: &str) -> Result<QuotientTable> {
    let all = lines(text);
    let head = tokens(all.first().copied().unwrap_or(""));
    check_magic(&head, "MQQ")?;
    match head.get(1) {
        Some(t) if t.text == "v1" => {}
        Some(t) => {
            return Err(parse(
                1,
                t.column,
                format!("unsupported version `{}`", t.text),
            ))
        }
        None => return Err(parse(1, 1, "missing version")),
    }
    let fields = header_fields(&head[2..], 1, &["J", "T"])?;
    let (jv, jt) = require(&fields, "J", 1)?;
    let joints = integer(jt, jv, 1)?;
    let (tv, tt) = require(&fields, "T", 1)?;
    let steps = integer(tt, tv, 1)?;
    let rows = steps
        .checked_mul(joints)
        .ok_or_else(|| parse(1, tt.column, "header dimensions overflow"))?;
    let body = &all[1..];
    if body.len() != rows {
        let line = 2 + body.len().min(rows);
        return Err(parse(
            line,
            1,
            format!("expected {rows} rows, found {}", body.len()),
        ));
    }
    let mut magnitudes = Array2::zeros((steps, joints));
    let mut omega = Array3::zeros((steps, joints, 3));
    let mut valid = Array2::from_elem((steps, joints), false);
    for (r, line) in body.iter().enumerate() {
        let line_no = r + 2;
        let toks = tokens(line);
        if toks.len() != 5 {
            return Err(parse(
                line_no,
                1,
                format!("expected 5 fields, found {}", toks.len()),
            ));
        }
        let (t, j) = (r / joints, r % joints);
        magnitudes[[t, j]] = number(&toks[0], line_no)?;
        for c in 0..3 {
            omega[[t, j, c]] = number(&toks[1 + c], line_no)?;
        }
        valid[[t, j]] = match toks[4].text {
            "1" => true,
            "0" => false,
            other => {
                return Err(parse(
                    line_no,
                    toks[4].column,
                    format!("validity must be 0 or 1, got `{other}`"),
                ))
            }
        };
    }
    Ok(QuotientTable {
        magnitudes,
        cosines: GrassmannCosines { omega, valid },
    })
}

pub fn write_mask_sidecar(mask: &CorruptionMask) -> String {
    let (t, j, c) = mask.mask.dim();
    let mut out = format!("MQM1 kind={} T={t} J={j} C={c}\n", mask.kind.as_str());
    for (a, b, ch) in mask.triples() {
        let _ = writeln!(out, "{a} {b} {ch}");
    }
    out
}

pub fn parse_mask_sidecar(text: &str) -> Result<CorruptionMask> {
    let all = lines(text);
    let head = tokens(all.first().copied().unwrap_or(""));
    check_magic(&head, "MQM1")?;
    let fields = header_fields(&head[1..], 1, &["kind", "T", "J", "C"])?;
    let (kv, kt) = require(&fields, "kind", 1)?;
    let kind = match kv {
        "masked" => CorruptionKind::Masked,
        "noised" => CorruptionKind::Noised,
        other => return Err(parse(1, kt.column, format!("unknown kind `{other}`"))),
    };
    let mut dims = [0usize; 3];
    for (slot, key) in dims.iter_mut().zip(["T", "J", "C"]) {
        let (v, t) = require(&fields, key, 1)?;
        *slot = integer(t, v, 1)?;
    }
    let [t, j, c] = dims;
    if t.checked_mul(j)
        .and_then(|v| v.checked_mul(c))
        .is_none_or(|n| n > 1 << 24)
    {
        return Err(parse(1, 1, "mask dimensions too large"));
    }
    let mut mask = Array3::from_elem((t, j, c), false);
    for (r, line) in all[1..].iter().enumerate() {
        let line_no = r + 2;
        let toks = tokens(line);
        if toks.len() != 3 {
            return Err(parse(
                line_no,
                1,
                format!("expected 3 indices, found {}", toks.len()),
            ));
        }
        let mut idx = [0usize; 3];
        for (k, slot) in idx.iter_mut().enumerate() {
            *slot = integer(&toks[k], toks[k].text, line_no)?;
            if *slot >= dims[k] {
                return Err(parse(
                    line_no,
                    toks[k].column,
                    format!("index {} out of range", *slot),
                ));
            }
        }
        mask[idx] = true;
    }
    Ok(CorruptionMask { mask, kind })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Sinusoid,
    RandomWalk,
    Constant,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoid" => Ok(Self::Sinusoid),
            "random_walk" | "random-walk" => Ok(Self::RandomWalk),
            "constant" => Ok(Self::Constant),
            other => Err(Error::Config(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

/// Frames per sinusoid cycle of the slowest joint.
pub const DEFAULT_PERIOD: f64 = 40.0;
pub const DEFAULT_AMPLITUDE: f64 = 100.0;
const OFFSET_RANGE: f64 = 500.0;

/// Cycles per period of joint `j`.
pub fn sinusoid_harmonic(j: usize) -> f64 {
    (1 + j % 4) as f64
}

/// Generator parameters that [`synth_generate`] draws from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthLayout {
    /// `J × 3` rest positions.
    pub offsets: Vec<[f64; 3]>,
    /// `J × 3` phases in radians.
    pub phases: Vec<[f64; 3]>,
}

pub fn synth_layout(joints: usize, seed: u64) -> SynthLayout {
    let mut r = rng::stream(seed, "synth", &[]);
    let mut offsets = Vec::with_capacity(joints);
    let mut phases = Vec::with_capacity(joints);
    for _ in 0..joints {
        offsets.push([0; 3].map(|_: i32| r.random_range(-OFFSET_RANGE..OFFSET_RANGE)));
        phases.push([0; 3].map(|_: i32| r.random_range(0.0..std::f64::consts::TAU)));
    }
    SynthLayout { offsets, phases }
}

/// Coordinate of joint `j`, axis `k` at frame `t` of a sinusoid sequence.
pub fn sinusoid_value(
    layout: &SynthLayout,
    j: usize,
    k: usize,
    t: usize,
    amplitude: f64,
    period: f64,
) -> f64 {
    let w = std::f64::consts::TAU * sinusoid_harmonic(j) / period;
    layout.offsets[j][k] + amplitude * (w * t as f64 + layout.phases[j][k]).sin()
}

/// Deterministic synthetic motion with root joint 0.
pub fn synth_generate(
    kind: SynthKind,
    joints: usize,
    frames: usize,
    fps: f64,
    seed: u64,
    amplitude: f64,
) -> Result<MotionSequence> {
    synth_generate_with_period(kind, joints, frames, fps, seed, amplitude, DEFAULT_PERIOD)
}

pub fn synth_generate_with_period(
    kind: SynthKind,
    joints: usize,
    frames: usize,
    fps: f64,
    seed: u64,
    amplitude: f64,
    period: f64,
) -> Result<MotionSequence> {
    if frames < 2 {
        return Err(Error::SequenceTooShort { frames, needed: 2 });
    }
    if !(amplitude.is_finite() && amplitude >= 0.0) || !(period.is_finite() && period > 0.0) {
        return Err(Error::Config(format!(
            "amplitude must be non-negative and period positive, got {amplitude} and {period}"
        )));
    }
    let skeleton = Skeleton::new(joints, 0)?;
    let layout = synth_layout(joints, seed);
    let poses: Vec<Pose> = match kind {
        SynthKind::Constant => vec![Pose::from_coords_unchecked(layout.offsets.clone()); frames],
        SynthKind::Sinusoid => (0..frames)
            .map(|t| {
                Pose::from_coords_unchecked(
                    (0..joints)
                        .map(|j| {
                            [0, 1, 2].map(|k| sinusoid_value(&layout, j, k, t, amplitude, period))
                        })
                        .collect(),
                )
            })
            .collect(),
        SynthKind::RandomWalk => {
            let mut r = rng::stream(seed, "walk", &[]);
            let step = Normal::new(0.0, amplitude).map_err(|e| Error::Config(e.to_string()))?;
            let mut cur = layout.offsets.clone();
            let mut out = vec![Pose::from_coords_unchecked(cur.clone())];
            for _ in 1..frames {
                for c in cur.iter_mut() {
                    for v in c.iter_mut() {
                        *v += step.sample(&mut r);
                    }
                }
                out.push(Pose::from_coords_unchecked(cur.clone()));
            }
            out
        }
    };
    MotionSequence::new(poses, fps, skeleton)
}

/// One observation/future pair copied from a source sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub observed: Vec<Pose>,
    pub future: Vec<Pose>,
    pub sequence: usize,
    pub start: usize,
    pub action: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub windows: Vec<Window>,
    pub observed: usize,
    pub future: usize,
    pub stride: usize,
    pub joints: usize,
    pub root: usize,
    pub fps: f64,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Number of windows `floor((T − n − N) / stride) + 1`, or 0 when the
/// sequence is too short.
pub fn window_count(frames: usize, observed: usize, future: usize, stride: usize) -> usize {
    match frames.checked_sub(observed + future) {
        Some(rest) => rest / stride + 1,
        None => 0,
    }
}

/// Sliding windows over every sequence. All sequences must share a
/// skeleton size and root.
pub fn make_windows(
    seqs: &[LabeledSequence],
    observed: usize,
    future: usize,
    stride: usize,
) -> Result<WindowedDataset> {
    if observed == 0 || future == 0 || stride == 0 {
        return Err(Error::Config(
            "observed, future and stride must be at least 1".into(),
        ));
    }
    let first = seqs.first().ok_or(Error::EmptyDataset)?;
    let joints = first.sequence.joint_count();
    let root = first.sequence.skeleton().root_index();
    let mut windows = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        let seq = &s.sequence;
        if seq.joint_count() != joints || seq.skeleton().root_index() != root {
            return Err(Error::SkeletonMismatch(format!(
                "sequence {i} has {} joints (root {}), expected {joints} (root {root})",
                seq.joint_count(),
                seq.skeleton().root_index()
            )));
        }
        let count = window_count(seq.len(), observed, future, stride);
        if count == 0 {
            log::warn!(
                "sequence {i} has {} frames, fewer than the {} a window needs; skipped",
                seq.len(),
                observed + future
            );
        }
        for w in 0..count {
            let start = w * stride;
            let frames = seq.frames();
            windows.push(Window {
                observed: frames[start..start + observed].to_vec(),
                future: frames[start + observed..start + observed + future].to_vec(),
                sequence: i,
                start,
                action: s.action.clone(),
            });
        }
    }
    Ok(WindowedDataset {
        windows,
        observed,
        future,
        stride,
        joints,
        root,
        fps: first.sequence.fps(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_file() {
        let s = parse_mqs("MQS1 J=2 T=2 fps=25.0\n0 0 0 1 2 3\n4 5 6 7 8 9\n").unwrap();
        assert_eq!(s.sequence.len(), 2);
        assert_eq!(s.sequence.frame(1).joint(1), [7.0, 8.0, 9.0]);
        assert_eq!(s.action, None);
        assert_eq!(s.sequence.skeleton().root_index(), 0);
    }

    #[test]
    fn short_line_is_reported() {
        let err = parse_mqs("MQS1 J=2 T=2 fps=25\n0 0 0 1 2 3\n4 5 6 7 8\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn rejects_non_finite() {
        let err = parse_mqs("MQS1 J=2 T=1 fps=25\n0 0 0 1 inf 3\n").unwrap_err();
        assert!(
            matches!(
                err,
                Error::Parse {
                    line: 2,
                    column: 9,
                    ..
                }
            ),
            "{err}"
        );
        assert!(parse_mqs("MQS1 J=2 T=1 fps=25\n0 0 NaN 1 1 3\n").is_err());
    }

    #[test]
    fn header_errors() {
        assert!(parse_mqs("MQS2 J=2 T=1 fps=25\n0 0 0 1 1 3\n").is_err());
        assert!(parse_mqs("MQS1 J=2 T=1\n0 0 0 1 1 3\n").is_err());
        assert!(parse_mqs("MQS1 J=2 T=1 fps=25 fps=25\n0 0 0 1 1 3\n").is_err());
        assert!(parse_mqs("MQS1 J=2 T=1 fps=25 colour=red\n0 0 0 1 1 3\n").is_err());
        assert!(parse_mqs("MQS1 J=2 T=1 fps=25 root=2\n0 0 0 1 1 3\n").is_err());
        assert!(parse_mqs("MQS1 J=2 T=2 fps=25\n0 0 0 1 1 3\n").is_err());
        assert!(parse_mqs("").is_err());
    }

    #[test]
    fn action_and_root_survive() {
        let seq = synth_generate(SynthKind::Sinusoid, 3, 4, 25.0, 1, 10.0).unwrap();
        let text = write_mqs(&seq, Some("walking"));
        let back = parse_mqs(&text).unwrap();
        assert_eq!(back.action.as_deref(), Some("walking"));
        assert_eq!(back.sequence, seq);
        assert_eq!(write_mqs(&back.sequence, Some("walking")), text);
    }

    #[test]
    fn every_magic_mutation_is_rejected() {
        let seq = synth_generate(SynthKind::Constant, 2, 2, 25.0, 1, 1.0).unwrap();
        let text = write_mqs(&seq, None);
        for i in 0..4 {
            let mut bytes = text.clone().into_bytes();
            bytes[i] ^= 0x20;
            let mutated = String::from_utf8(bytes).unwrap();
            assert!(parse_mqs(&mutated).is_err());
        }
    }

    #[test]
    fn sinusoid_is_periodic() {
        let seq =
            synth_generate_with_period(SynthKind::Sinusoid, 5, 60, 25.0, 7, 100.0, 25.0).unwrap();
        let layout = synth_layout(5, 7);
        for t in 0..30 {
            for j in 0..5 {
                for k in 0..3 {
                    let a = sinusoid_value(&layout, j, k, t, 100.0, 25.0);
                    let b = sinusoid_value(&layout, j, k, t + 25, 100.0, 25.0);
                    assert!((a - b).abs() < 1e-9);
                    assert!(
                        (seq.frame(t + 25).joint(j)[k] - seq.frame(t).joint(j)[k]).abs() < 1e-9
                    );
                }
            }
        }
    }

    #[test]
    fn zero_amplitude_is_constant() {
        let seq = synth_generate(SynthKind::Sinusoid, 3, 10, 25.0, 2, 0.0).unwrap();
        assert!(seq.frames().iter().all(|p| p.bitwise_eq(seq.frame(0))));
        let c = synth_generate(SynthKind::Constant, 3, 10, 25.0, 2, 50.0).unwrap();
        assert!(c.frames().iter().all(|p| p.bitwise_eq(c.frame(0))));
    }

    #[test]
    fn random_walk_deterministic() {
        let a = synth_generate(SynthKind::RandomWalk, 3, 20, 25.0, 5, 10.0).unwrap();
        let b = synth_generate(SynthKind::RandomWalk, 3, 20, 25.0, 5, 10.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.frame(0), a.frame(1));
        assert!(synth_generate(SynthKind::RandomWalk, 3, 1, 25.0, 5, 10.0).is_err());
    }

    fn labeled(frames: usize) -> LabeledSequence {
        LabeledSequence::new(
            synth_generate(SynthKind::Sinusoid, 2, frames, 25.0, 0, 10.0).unwrap(),
            Some("a".into()),
        )
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&[labeled(35)], 10, 25, 1).unwrap().len(), 1);
        assert_eq!(make_windows(&[labeled(34)], 10, 25, 1).unwrap().len(), 0);
        let d = make_windows(&[labeled(45)], 10, 25, 5).unwrap();
        let starts: Vec<usize> = d.windows.iter().map(|w| w.start).collect();
        assert_eq!(starts, vec![0, 5, 10]);
    }

    #[test]
    fn windows_copy_source_frames() {
        let src = labeled(40);
        let d = make_windows(std::slice::from_ref(&src), 10, 25, 2).unwrap();
        for w in &d.windows {
            for (i, p) in w.observed.iter().chain(&w.future).enumerate() {
                assert!(p.bitwise_eq(src.sequence.frame(w.start + i)));
            }
        }
    }

    #[test]
    fn mixed_skeletons_rejected() {
        let other = LabeledSequence::new(
            synth_generate(SynthKind::Sinusoid, 3, 40, 25.0, 0, 10.0).unwrap(),
            None,
        );
        assert!(make_windows(&[labeled(40), other], 10, 25, 1).is_err());
        assert!(matches!(
            make_windows(&[], 10, 25, 1),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn mqq_round_trip() {
        let seq = synth_generate(SynthKind::Sinusoid, 3, 6, 25.0, 4, 30.0).unwrap();
        let q = crate::quotient::encode_quotient(&seq, 1.0).unwrap();
        let text = write_mqq(&q);
        assert!(text.starts_with("MQQ v1 J=3 T=5\n"));
        let t = parse_mqq(&text).unwrap();
        assert_eq!(t.magnitudes, q.magnitudes);
        assert_eq!(t.cosines, q.cosines);
        assert!(parse_mqq("MQQ v2 J=1 T=1\n0 0 0 0 0\n").is_err());
        assert!(parse_mqq("MQQ v1 J=1 T=1\n0 0 0 0 2\n").is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let mut m = CorruptionMask::clean((3, 2, 7), CorruptionKind::Noised);
        m.mask[[0, 1, 6]] = true;
        m.mask[[2, 0, 3]] = true;
        let text = write_mask_sidecar(&m);
        assert_eq!(text, "MQM1 kind=noised T=3 J=2 C=7\n0 1 6\n2 0 3\n");
        assert_eq!(parse_mask_sidecar(&text).unwrap(), m);
        assert!(parse_mask_sidecar("MQM1 kind=noised T=3 J=2 C=7\n3 0 0\n").is_err());
    }

    proptest! {
        #[test]
        fn mqs_round_trip_bitwise(
            vals in proptest::collection::vec(-1e6f64..1e6, 150),
            scale in prop_oneof![Just(1.0), Just(1e-9), Just(1e12)],
        ) {
            let poses: Vec<Pose> = vals
                .chunks(15)
                .map(|c| Pose::new(c.chunks(3).map(|x| [x[0] * scale, x[1] * scale, x[2] * scale]).collect()).unwrap())
                .collect();
            let seq = MotionSequence::new(poses, 25.0, Skeleton::new(5, 0).unwrap()).unwrap();
            let text = write_mqs(&seq, None);
            let back = parse_mqs(&text).unwrap();
            for (a, b) in seq.frames().iter().zip(back.sequence.frames()) {
                prop_assert!(a.bitwise_eq(b));
            }
            prop_assert_eq!(write_mqs(&back.sequence, None), text);
        }
    }
}
