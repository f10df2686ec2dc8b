//! CSV and JSON artifacts.
//!
//! Trajectory CSV columns, in order:
//! `variant, step, seed, reward, reg_value, p_z, x0_1..x0_d, grad_norm,
//! reward_queries, sampler_passes`. Floats use Rust's shortest round-trip
//! scientific notation, so parsing a file reproduces the values exactly.

use std::io::Write;
use std::path::Path;

use dno_core::optimizer::TrajectoryPoint;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub variant: String,
    pub seed: u64,
    pub point: TrajectoryPoint,
}

pub fn fmt_float(x: f64) -> String {
    format!("{x:e}")
}

pub fn trajectory_header(dim: usize) -> Vec<String> {
    let mut h: Vec<String> = ["variant", "step", "seed", "reward", "reg_value", "p_z"].map(String::from).to_vec();
    h.extend((1..=dim).map(|i| format!("x0_{i}")));
    h.extend(["grad_norm", "reward_queries", "sampler_passes"].map(String::from));
    h
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(|e| io_error(path, e))
}

/// Writes a header-first trajectory CSV. `dim` fixes the number of sample columns.
pub fn write_trajectory_csv(path: &Path, dim: usize, rows: &[TrajectoryRow]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(trajectory_header(dim)).map_err(|e| io_error(path, e))?;
    for row in rows {
        let p = &row.point;
        if p.sample.len() != dim {
            return Err(CliError::Runtime(format!("row with sample dimension {} in a {dim}-d file", p.sample.len())));
        }
        let mut rec = vec![
            row.variant.clone(),
            p.step.to_string(),
            row.seed.to_string(),
            fmt_float(p.reward),
            fmt_float(p.reg_value),
            fmt_float(p.p_z),
        ];
        rec.extend(p.sample.iter().map(|x| fmt_float(*x)));
        rec.extend([fmt_float(p.grad_norm), p.reward_queries.to_string(), p.sampler_passes.to_string()]);
        w.write_record(&rec).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

fn parse<T: std::str::FromStr>(field: &str, line: u64) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    field.parse().map_err(|e| CliError::Runtime(format!("line {line}: cannot parse `{field}`: {e}")))
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>, CliError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| io_error(path, e))?;
    let header = r.headers().map_err(|e| io_error(path, e))?.clone();
    let dim = header.iter().filter(|h| h.starts_with("x0_")).count();
    if header.iter().map(String::from).collect::<Vec<_>>() != trajectory_header(dim) {
        return Err(CliError::Runtime(format!("{}: unexpected trajectory header", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| io_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let f = |i: usize| rec.get(i).unwrap_or("");
        let sample = (0..dim).map(|i| parse(f(6 + i), line)).collect::<Result<Vec<f64>, _>>()?;
        rows.push(TrajectoryRow {
            variant: f(0).to_string(),
            seed: parse(f(2), line)?,
            point: TrajectoryPoint {
                step: parse(f(1), line)?,
                reward: parse(f(3), line)?,
                reg_value: parse(f(4), line)?,
                p_z: parse(f(5), line)?,
                sample,
                grad_norm: parse(f(6 + dim), line)?,
                reward_queries: parse(f(7 + dim), line)?,
                sampler_passes: parse(f(8 + dim), line)?,
            },
        });
    }
    Ok(rows)
}

/// Writes any header-first CSV of pre-formatted fields.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| io_error(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator; 0 for a single value).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    /// Seeds that reached this step.
    pub count: usize,
    pub reward: MeanStd,
    pub reg_value: MeanStd,
    pub p_z: MeanStd,
    pub grad_norm: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub seed: u64,
    pub termination: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub steps: Vec<StepSummary>,
    #[serde(default)]
    pub runs: Vec<RunStatus>,
}

/// Per-variant, per-step statistics across seeds, in order of first appearance.
pub fn summarize(rows: &[TrajectoryRow]) -> Vec<VariantSummary> {
    let mut variants: Vec<String> = Vec::new();
    for r in rows {
        if !variants.contains(&r.variant) {
            variants.push(r.variant.clone());
        }
    }
    variants
        .into_iter()
        .map(|variant| {
            let mine: Vec<&TrajectoryRow> = rows.iter().filter(|r| r.variant == variant).collect();
            let max_step = mine.iter().map(|r| r.point.step).max().unwrap_or(0);
            let steps = (0..=max_step)
                .filter_map(|step| {
                    let at: Vec<&TrajectoryPoint> =
                        mine.iter().filter(|r| r.point.step == step).map(|r| &r.point).collect();
                    if at.is_empty() {
                        return None;
                    }
                    let col =
                        |f: fn(&TrajectoryPoint) -> f64| MeanStd::of(&at.iter().map(|p| f(p)).collect::<Vec<_>>());
                    Some(StepSummary {
                        step,
                        count: at.len(),
                        reward: col(|p| p.reward),
                        reg_value: col(|p| p.reg_value),
                        p_z: col(|p| p.p_z),
                        grad_norm: col(|p| p.grad_norm),
                    })
                })
                .collect();
            VariantSummary { variant, steps, runs: Vec::new() }
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_error(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

const TRAJECTORY_PLOT: &str = r#"#!/usr/bin/env python3
"""Plots mean reward and P(z) per step with a one-std band, and final samples."""
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
path = Path(sys.argv[1]) if len(sys.argv) > 1 else here / "trajectory.csv"
rows = list(csv.DictReader(open(path, newline="")))
dims = sorted(k for k in rows[0] if k.startswith("x0_")) if rows else []

series = defaultdict(lambda: defaultdict(list))
last = {}
for r in rows:
    key = (r["variant"], r["seed"])
    series[r["variant"]][int(r["step"])].append((float(r["reward"]), float(r["p_z"])))
    if key not in last or int(r["step"]) >= int(last[key]["step"]):
        last[key] = r

fig, axes = plt.subplots(1, 3, figsize=(15, 4))
for variant, steps in series.items():
    xs = sorted(steps)
    for ax, idx in ((axes[0], 0), (axes[1], 1)):
        vals = [[v[idx] for v in steps[s]] for s in xs]
        mean = [sum(v) / len(v) for v in vals]
        std = [(sum((x - m) ** 2 for x in v) / max(len(v) - 1, 1)) ** 0.5 for v, m in zip(vals, mean)]
        ax.plot(xs, mean, label=variant)
        ax.fill_between(xs, [m - s for m, s in zip(mean, std)], [m + s for m, s in zip(mean, std)], alpha=0.2)
    if len(dims) >= 2:
        pts = [r for (v, _), r in last.items() if v == variant]
        axes[2].scatter([float(r[dims[0]]) for r in pts], [float(r[dims[1]]) for r in pts], s=6, label=variant)
axes[0].set(xlabel="step", ylabel="reward")
axes[1].set(xlabel="step", ylabel="P(z)")
axes[2].set(xlabel="x0_1", ylabel="x0_2", aspect="equal")
for ax in axes:
    ax.legend()
fig.tight_layout()
fig.savefig(here / "trajectory.png", dpi=150)
"#;

const STATIONARITY_PLOT: &str = r#"#!/usr/bin/env python3
"""Scatters final samples coloured by stationarity class."""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
path = Path(sys.argv[1]) if len(sys.argv) > 1 else here / "stationarity.csv"
rows = list(csv.DictReader(open(path, newline="")))
fig, ax = plt.subplots(figsize=(5, 5))
for cls in sorted({r["class"] for r in rows}):
    pts = [r for r in rows if r["class"] == cls]
    ax.scatter([float(r["x0_1"]) for r in pts], [float(r["x0_2"]) for r in pts], s=8, label=cls)
ax.set(xlabel="x0_1", ylabel="x0_2", aspect="equal")
ax.legend()
fig.tight_layout()
fig.savefig(here / "stationarity.png", dpi=150)
"#;

const PZ_PLOT: &str = r#"#!/usr/bin/env python3
"""Histograms of log P(z) per vector kind."""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
path = Path(sys.argv[1]) if len(sys.argv) > 1 else here / "pz.csv"
rows = list(csv.DictReader(open(path, newline="")))
fig, ax = plt.subplots(figsize=(6, 4))
for kind in sorted({r["kind"] for r in rows}):
    vals = [max(float(r["log_p_z"]), -50.0) for r in rows if r["kind"] == kind]
    ax.hist(vals, bins=30, alpha=0.6, label=kind)
ax.set(xlabel="log P(z) (clipped at -50)", ylabel="count")
ax.legend()
fig.tight_layout()
fig.savefig(here / "pz.png", dpi=150)
"#;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Trajectory,
    Stationarity,
    Pz,
}

pub fn write_plot_script(dir: &Path, kind: PlotKind) -> Result<(), CliError> {
    let path = dir.join("plot.py");
    let body = match kind {
        PlotKind::Trajectory => TRAJECTORY_PLOT,
        PlotKind::Stationarity => STATIONARITY_PLOT,
        PlotKind::Pz => PZ_PLOT,
    };
    let mut f = std::fs::File::create(&path).map_err(|e| io_error(&path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| io_error(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: &str, seed: u64, step: usize, reward: f64) -> TrajectoryRow {
        TrajectoryRow {
            variant: variant.into(),
            seed,
            point: TrajectoryPoint {
                step,
                reward,
                reg_value: -0.5,
                p_z: 0.25,
                sample: vec![0.1, -3.0e-17],
                grad_norm: 1.0 / 3.0,
                reward_queries: step + 1,
                sampler_passes: step + 1,
            },
        }
    }

    #[test]
    fn empty_file_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_trajectory_csv(&p, 2, &[]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "variant,step,seed,reward,reg_value,p_z,x0_1,x0_2,grad_norm,reward_queries,sampler_passes\n");
        assert!(read_trajectory_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn one_point_is_two_lines_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let rows = vec![row("a", 7, 0, std::f64::consts::PI)];
        write_trajectory_csv(&p, 2, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(!text.contains('\r'));
        assert_eq!(read_trajectory_csv(&p).unwrap(), rows);
    }

    #[test]
    fn summary_statistics() {
        let rows = vec![row("a", 0, 0, 1.0), row("a", 1, 0, 3.0), row("a", 0, 1, 2.0), row("b", 0, 0, 5.0)];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].steps[0].count, 2);
        assert_eq!(s[0].steps[0].reward, MeanStd { mean: 2.0, std: 2f64.sqrt() });
        assert_eq!(s[0].steps[1].reward, MeanStd { mean: 2.0, std: 0.0 });
        assert_eq!(s[1].variant, "b");
    }
}
