//! Root-aligned mean per-joint position error at fixed horizons.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dataio::WindowedDataset;
use crate::error::{Error, Result};
use crate::motion::{HorizonSpec, Pose};

/// Anything that maps an observation to future poses.
pub trait Predictor: Sync {
    fn predict(&self, observed: &[Pose]) -> Result<Vec<Pose>>;
}

/// Repeats the last observed pose.
#[derive(Debug, Clone, Copy)]
pub struct LastFrame {
    pub future: usize,
}

impl Predictor for LastFrame {
    fn predict(&self, observed: &[Pose]) -> Result<Vec<Pose>> {
        let last = observed.last().ok_or(Error::SequenceTooShort {
            frames: 0,
            needed: 1,
        })?;
        Ok(vec![last.clone(); self.future])
    }
}

/// Mean joint distance of one frame after subtracting each pose's root.
pub fn frame_error(pred: &Pose, truth: &Pose, root: usize) -> Result<f64> {
    let joints = pred.joint_count();
    if joints != truth.joint_count() || root >= joints {
        return Err(Error::DimsMismatch(format!(
            "poses have {} and {} joints (root {root})",
            joints,
            truth.joint_count()
        )));
    }
    let (pr, tr) = (pred.joint(root), truth.joint(root));
    let sum: f64 = (0..joints)
        .map(|j| {
            let (a, b) = (pred.joint(j), truth.joint(j));
            (0..3)
                .map(|k| ((a[k] - pr[k]) - (b[k] - tr[k])).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(sum / joints as f64)
}

/// Mean over frames and joints of the root-aligned Euclidean error.
pub fn mpjpe(pred: &[Pose], truth: &[Pose], root: usize) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::DimsMismatch(format!(
            "{} predicted frames vs {} ground-truth frames",
            pred.len(),
            truth.len()
        )));
    }
    let mut total = 0.0;
    for (a, b) in pred.iter().zip(truth) {
        total += frame_error(a, b, root)?;
    }
    Ok(total / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonReport {
    pub milliseconds: Vec<u32>,
    /// 1-based future frame of each horizon.
    pub frames: Vec<usize>,
    /// Error per horizon averaged over all evaluated windows.
    pub average: Vec<f64>,
    pub per_action: BTreeMap<String, Vec<f64>>,
    pub windows: usize,
}

/// Indices of at most `cap` windows spread evenly over `0..len`.
fn spread(len: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(k) if k < len => (0..k).map(|i| i * len / k).collect(),
        _ => (0..len).collect(),
    }
}

fn mean_rows(rows: &[&Vec<f64>], width: usize) -> Vec<f64> {
    let mut acc = vec![0.0; width];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r.iter()) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / rows.len() as f64).collect()
}

/// Single-frame error at every horizon, averaged over windows (and per
/// action label). `max_windows` caps the windows evaluated per action.
pub fn evaluate(
    model: &dyn Predictor,
    dataset: &WindowedDataset,
    horizons: &HorizonSpec,
    max_windows: Option<usize>,
) -> Result<HorizonReport> {
    let frames = horizons.frames(dataset.fps)?;
    let needed = frames.iter().copied().max().unwrap_or(0);
    if needed > dataset.future {
        return Err(Error::WindowTooShort {
            needed,
            available: dataset.future,
        });
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, w) in dataset.windows.iter().enumerate() {
        groups
            .entry(w.action.clone().unwrap_or_default())
            .or_default()
            .push(i);
    }
    let selected: Vec<usize> = groups
        .values()
        .flat_map(|idx| spread(idx.len(), max_windows).into_iter().map(|k| idx[k]))
        .collect();
    let root = dataset.root;
    let errors: Vec<Vec<f64>> = selected
        .par_iter()
        .map(|&i| {
            let w = &dataset.windows[i];
            let pred = model.predict(&w.observed)?;
            if pred.len() < needed {
                return Err(Error::WindowTooShort {
                    needed,
                    available: pred.len(),
                });
            }
            frames
                .iter()
                .map(|&f| frame_error(&pred[f - 1], &w.future[f - 1], root))
                .collect()
        })
        .collect::<Result<_>>()?;
    let width = frames.len();
    let all: Vec<&Vec<f64>> = errors.iter().collect();
    let mut per_action = BTreeMap::new();
    for label in groups.keys().filter(|l| !l.is_empty()) {
        let rows: Vec<&Vec<f64>> = selected
            .iter()
            .zip(&errors)
            .filter(|(&i, _)| dataset.windows[i].action.as_deref() == Some(label.as_str()))
            .map(|(_, e)| e)
            .collect();
        per_action.insert(label.clone(), mean_rows(&rows, width));
    }
    Ok(HorizonReport {
        milliseconds: horizons.milliseconds().to_vec(),
        frames,
        average: mean_rows(&all, width),
        per_action,
        windows: selected.len(),
    })
}

impl HorizonReport {
    /// Fixed-width table, one decimal, one row per action plus the average.
    pub fn table(&self) -> String {
        let mut out = format!("{:<16}", "milliseconds");
        for ms in &self.milliseconds {
            let _ = write!(out, "{ms:>9}");
        }
        out.push('\n');
        let mut row = |name: &str, vals: &[f64]| {
            let _ = write!(out, "{name:<16}");
            for v in vals {
                let _ = write!(out, "{v:>9.1}");
            }
            out.push('\n');
        };
        for (name, vals) in &self.per_action {
            row(name, vals);
        }
        row("average", &self.average);
        out
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("action");
        for ms in &self.milliseconds {
            let _ = write!(out, ",{ms}");
        }
        out.push('\n');
        let rows = self
            .per_action
            .iter()
            .map(|(k, v)| (k.as_str(), v))
            .chain(std::iter::once(("average", &self.average)));
        for (name, vals) in rows {
            out.push_str(name);
            for v in vals {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    /// Line chart of the average error against horizon.
    pub fn svg(&self) -> String {
        let (w, h, pad) = (480.0, 300.0, 48.0);
        let max_ms = self.milliseconds.iter().copied().max().unwrap_or(1).max(1) as f64;
        let max_err = self.average.iter().copied().fold(0.0, f64::max).max(1e-9);
        let x = |ms: u32| pad + (w - 2.0 * pad) * ms as f64 / max_ms;
        let y = |e: f64| h - pad - (h - 2.0 * pad) * e / max_err;
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
        );
        let _ = writeln!(
            out,
            "<path d=\"M{pad} {pad} V{} H{}\" fill=\"none\" stroke=\"#444\"/>",
            h - pad,
            w - pad
        );
        let points: Vec<String> = self
            .milliseconds
            .iter()
            .zip(&self.average)
            .map(|(&ms, &e)| format!("{:.2},{:.2}", x(ms), y(e)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>",
            points.join(" ")
        );
        for (&ms, &e) in self.milliseconds.iter().zip(&self.average) {
            let _ = writeln!(
                out,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1f77b4\"/>",
                x(ms),
                y(e)
            );
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{ms}</text>",
                x(ms),
                h - pad + 16.0
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">horizon (ms)</text>",
            w / 2.0,
            h - 8.0
        );
        let _ = writeln!(
            out,
            "<text x=\"14\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">MPJPE (mm), max {max_err:.1}</text>",
            h / 2.0,
            h / 2.0
        );
        out.push_str("</svg>\n");
        out
    }
}
