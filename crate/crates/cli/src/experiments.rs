//! Experiment drivers: optimization arms over seeds, indicator evaluation
//! and stationarity classification.

use std::path::{Path, PathBuf};

use dno_core::optimizer::{classify_stationarity, dno_run, RunResult, Stationarity};
use dno_core::probreg::{self, Factorization, PermutationSet};
use dno_core::rng::{self, Purpose};
use dno_core::SamplingMap;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Arm, ExperimentConfig};
use crate::output::{self, PlotKind, RunStatus, TrajectoryRow, VariantSummary};
use crate::CliError;

/// Result of one arm on one seed.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub variant: String,
    pub seed: u64,
    pub result: RunResult,
}

fn runtime(e: dno_core::DnoError) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Runs every arm on every seed. Seeds run in parallel; the output is in
/// (arm, seed) order regardless of scheduling.
pub fn run_arms(arms: &[Arm], seeds: &[u64]) -> Result<Vec<SeedRun>, CliError> {
    let mut out = Vec::with_capacity(arms.len() * seeds.len());
    for arm in arms {
        let runs: Vec<Result<SeedRun, CliError>> = seeds
            .par_iter()
            .map(|&seed| {
                let config = dno_core::DnoConfig { seed, ..arm.config.clone() };
                let result = dno_run(&arm.sampler, &config).map_err(runtime)?;
                Ok(SeedRun { variant: arm.label.clone(), seed, result })
            })
            .collect();
        for r in runs {
            out.push(r?);
        }
    }
    Ok(out)
}

pub fn trajectory_rows(runs: &[SeedRun]) -> Vec<TrajectoryRow> {
    runs.iter()
        .flat_map(|r| {
            r.result.trajectory.iter().map(move |p| TrajectoryRow {
                variant: r.variant.clone(),
                seed: r.seed,
                point: p.clone(),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct Summary<'a> {
    name: String,
    command: &'a str,
    seeds: &'a [u64],
    config: &'a ExperimentConfig,
    variants: Vec<VariantSummary>,
}

/// What a finished command produced.
#[derive(Debug)]
pub struct Outcome {
    pub dir: PathBuf,
    /// Human-readable reasons for runs that did not complete.
    pub failures: Vec<String>,
}

fn write_trajectory_outputs(
    dir: &Path,
    command: &str,
    cfg: &ExperimentConfig,
    seeds: &[u64],
    dim: usize,
    runs: &[SeedRun],
) -> Result<Outcome, CliError> {
    let rows = trajectory_rows(runs);
    output::write_trajectory_csv(&dir.join("trajectory.csv"), dim, &rows)?;
    let mut variants = output::summarize(&rows);
    let mut failures = Vec::new();
    for v in variants.iter_mut() {
        v.runs = runs
            .iter()
            .filter(|r| r.variant == v.variant)
            .map(|r| {
                let termination = r.result.termination.reason();
                if !r.result.termination.is_completed() {
                    failures.push(format!("{} seed {}: {termination}", r.variant, r.seed));
                }
                RunStatus { seed: r.seed, termination }
            })
            .collect();
    }
    let summary = Summary { name: cfg.name(), command, seeds, config: cfg, variants };
    output::write_json(&dir.join("summary.json"), &summary)?;
    output::write_plot_script(dir, PlotKind::Trajectory)?;
    Ok(Outcome { dir: dir.to_path_buf(), failures })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

/// `run`: the configured experiment's arms over all seeds.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, CliError> {
    let arms = cfg.arms()?;
    let seeds = cfg.seed_list();
    create_dir(dir)?;
    let runs = run_arms(&arms, &seeds)?;
    let dim = arms[0].sampler.sample_dim();
    write_trajectory_outputs(dir, "run", cfg, &seeds, dim, &runs)
}

/// `sweep`: regularized arms over the `(k, b, γ)` grid.
pub fn run_sweep(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, CliError> {
    let arms = cfg.sweep_arms()?;
    let seeds = cfg.seed_list();
    create_dir(dir)?;
    let runs = run_arms(&arms, &seeds)?;
    let dim = arms[0].sampler.sample_dim();
    write_trajectory_outputs(dir, "sweep", cfg, &seeds, dim, &runs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationarityRow {
    pub seed: u64,
    pub class: Stationarity,
    pub sample: Vec<f64>,
    pub g1_norm: f64,
    pub g2_norm: f64,
    pub g1g2_norm: f64,
    pub final_reward: f64,
}

pub fn class_name(c: Stationarity) -> &'static str {
    match c {
        Stationarity::TypeI => "type_i",
        Stationarity::TypeII => "type_ii",
        Stationarity::TypeIII => "type_iii",
        Stationarity::NotStationary => "not_stationary",
    }
}

/// Optimizes each seed and classifies the final noise.
pub fn classify_seeds(arm: &Arm, seeds: &[u64], tolerance: f64) -> Result<Vec<StationarityRow>, CliError> {
    let rows: Vec<Result<StationarityRow, CliError>> = seeds
        .par_iter()
        .map(|&seed| {
            let config = dno_core::DnoConfig { seed, ..arm.config.clone() };
            let run = dno_run(&arm.sampler, &config).map_err(runtime)?;
            let report =
                classify_stationarity(&arm.sampler, &config.reward, &run.final_noise, tolerance).map_err(runtime)?;
            Ok(StationarityRow {
                seed,
                class: report.class,
                sample: report.sample,
                g1_norm: report.g1_norm,
                g2_norm: report.g2_norm,
                g1g2_norm: report.g1g2_norm,
                final_reward: run.trajectory.last().map_or(f64::NAN, |p| p.reward),
            })
        })
        .collect();
    rows.into_iter().collect()
}

#[derive(Serialize)]
struct StationaritySummary<'a> {
    name: String,
    command: &'static str,
    seeds: &'a [u64],
    tolerance: f64,
    counts: Vec<(&'static str, usize)>,
    config: &'a ExperimentConfig,
}

/// `stationarity`: classification over the configured seed grid.
pub fn run_stationarity(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, CliError> {
    let arm = cfg.stationarity_arm()?;
    let seeds = cfg.seed_list();
    create_dir(dir)?;
    let tol = cfg.stationarity.tolerance;
    let rows = classify_seeds(&arm, &seeds, tol)?;
    let dim = arm.sampler.sample_dim();
    let mut header = vec!["seed".to_string(), "class".to_string()];
    header.extend((1..=dim).map(|i| format!("x0_{i}")));
    header.extend(["g1_norm", "g2_norm", "g1g2_norm", "final_reward"].map(String::from));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut rec = vec![r.seed.to_string(), class_name(r.class).to_string()];
            rec.extend(r.sample.iter().map(|x| output::fmt_float(*x)));
            rec.extend([r.g1_norm, r.g2_norm, r.g1g2_norm, r.final_reward].map(output::fmt_float));
            rec
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    output::write_table(&dir.join("stationarity.csv"), &header_refs, &table)?;
    let classes = [Stationarity::TypeI, Stationarity::TypeII, Stationarity::TypeIII, Stationarity::NotStationary];
    let counts = classes.map(|c| (class_name(c), rows.iter().filter(|r| r.class == c).count())).to_vec();
    for (name, count) in &counts {
        println!("{name}: {count}");
    }
    let summary = StationaritySummary {
        name: cfg.name(),
        command: "stationarity",
        seeds: &seeds,
        tolerance: tol,
        counts,
        config: cfg,
    };
    output::write_json(&dir.join("summary.json"), &summary)?;
    output::write_plot_script(dir, PlotKind::Stationarity)?;
    Ok(Outcome { dir: dir.to_path_buf(), failures: Vec::new() })
}

/// Synthetic vector families for the `pz` command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorKind {
    Gaussian,
    Zeros,
    /// A Gaussian block of length `n/4` repeated four times.
    Repeated,
}

impl VectorKind {
    pub fn name(self) -> &'static str {
        match self {
            VectorKind::Gaussian => "gaussian",
            VectorKind::Zeros => "zeros",
            VectorKind::Repeated => "repeated",
        }
    }
}

/// Trial `trial` of a synthetic family, drawn from its own stream.
pub fn synthetic_vector(kind: VectorKind, n: usize, seed: u64, trial: u64) -> Result<Vec<f64>, CliError> {
    let mut rng = rng::stream(seed, Purpose::Synthetic, trial, kind as u64);
    Ok(match kind {
        VectorKind::Gaussian => rng::standard_normal_vec(&mut rng, n),
        VectorKind::Zeros => vec![0.0; n],
        VectorKind::Repeated => {
            if !n.is_multiple_of(4) {
                return Err(CliError::Config(format!("repeated vectors need n divisible by 4, got {n}")));
            }
            let block = rng::standard_normal_vec(&mut rng, n / 4);
            block.iter().cycle().take(n).copied().collect()
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PzRow {
    pub index: usize,
    pub kind: String,
    pub log_p_z: f64,
    pub m1: f64,
    pub m2: f64,
}

/// `P(z)` of each vector over `q` seeded permutations.
pub fn evaluate_pz(vectors: &[(String, Vec<f64>)], k: usize, q: usize, seed: u64) -> Result<Vec<PzRow>, CliError> {
    let n = vectors.first().map_or(0, |v| v.1.len());
    if vectors.iter().any(|v| v.1.len() != n) {
        return Err(CliError::Config("all vectors must have the same length".into()));
    }
    if q == 0 {
        return Err(CliError::Config("q must be positive".into()));
    }
    let fac = Factorization::new(n, k)?;
    let perms = PermutationSet::random(n, q, seed);
    vectors
        .par_iter()
        .enumerate()
        .map(|(index, (kind, z))| {
            let log_p_z = probreg::log_indicator(z, fac, &perms).map_err(runtime)?;
            let s = probreg::statistics(z, fac, None).map_err(runtime)?;
            Ok(PzRow { index, kind: kind.clone(), log_p_z, m1: s.m1, m2: s.m2 })
        })
        .collect()
}

pub fn write_pz(dir: &Path, rows: &[PzRow], n: usize, k: usize, q: usize) -> Result<Outcome, CliError> {
    create_dir(dir)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.index.to_string(),
                r.kind.clone(),
                n.to_string(),
                k.to_string(),
                q.to_string(),
                output::fmt_float(r.log_p_z.exp()),
                output::fmt_float(r.log_p_z),
                output::fmt_float(r.m1),
                output::fmt_float(r.m2),
            ]
        })
        .collect();
    output::write_table(&dir.join("pz.csv"), &["index", "kind", "n", "k", "q", "p_z", "log_p_z", "m1", "m2"], &table)?;
    output::write_plot_script(dir, PlotKind::Pz)?;
    Ok(Outcome { dir: dir.to_path_buf(), failures: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(json: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(json).unwrap()
    }

    #[test]
    fn arms_run_in_seed_order() {
        let cfg = small(
            r#"{"experiment": "ode_vs_sde", "reward": {"name": "example1"},
                "sampler": {"steps": 5}, "optimizer": {"steps": 3}, "seeds": {"count": 3, "base": 10}}"#,
        );
        let runs = run_arms(&cfg.arms().unwrap(), &cfg.seed_list()).unwrap();
        let order: Vec<(String, u64)> = runs.iter().map(|r| (r.variant.clone(), r.seed)).collect();
        assert_eq!(
            order,
            [("eta=0", 10), ("eta=0", 11), ("eta=0", 12), ("eta=1", 10), ("eta=1", 11), ("eta=1", 12)]
                .map(|(v, s)| (v.to_string(), s))
        );
        // Paired arms start from the same initial noise.
        assert_eq!(runs[0].result.trajectory[0].p_z, runs[3].result.trajectory[0].p_z);
    }

    #[test]
    fn synthetic_families() {
        let z = synthetic_vector(VectorKind::Repeated, 16, 1, 0).unwrap();
        assert_eq!(&z[..4], &z[4..8]);
        assert!(synthetic_vector(VectorKind::Repeated, 18, 1, 0).is_err());
        assert_eq!(
            synthetic_vector(VectorKind::Gaussian, 8, 1, 3).unwrap(),
            synthetic_vector(VectorKind::Gaussian, 8, 1, 3).unwrap()
        );
        assert!(synthetic_vector(VectorKind::Zeros, 8, 1, 0).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pz_rows() {
        let vectors = vec![
            ("zeros".to_string(), vec![0.0; 1024]),
            ("gaussian".to_string(), synthetic_vector(VectorKind::Gaussian, 1024, 0, 0).unwrap()),
        ];
        let rows = evaluate_pz(&vectors, 2, 20, 0).unwrap();
        assert!(rows[0].log_p_z < rows[1].log_p_z);
        assert_eq!(rows[0].m2, 1.0);
        assert!(evaluate_pz(&vectors, 3, 20, 0).is_err());
    }
}
