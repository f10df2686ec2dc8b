//! Optimization-level criteria on the 2-D toys.

use dno_core::optimizer::{
    classify_stationarity, monotonicity_harness, HarnessOptions, Stationarity, DEFAULT_STATIONARITY_TOL,
};
use dno_core::rewards::make_reward;
use dno_core::toy_models::make_model;
use dno_core::{DnoConfig, NoiseSchedule, RunResult, Sampler, Stepper};
use dno_lab::config::Arm;
use dno_lab::experiments::{run_arms, SeedRun};
use rayon::prelude::*;

use crate::stats::{mean, median, norm, std_err};
use crate::{ring_sampler, Verdict};

fn seeds(count: u64) -> Vec<u64> {
    (0..count).collect()
}

fn arm(label: &str, sampler: Sampler, config: DnoConfig) -> Arm {
    Arm { label: label.to_string(), sampler, config }
}

/// Runs split back into one vector per arm, in seed order.
fn by_arm(runs: Vec<SeedRun>, arms: usize) -> Vec<Vec<RunResult>> {
    let per = runs.len() / arms;
    let mut out: Vec<Vec<RunResult>> = (0..arms).map(|_| Vec::with_capacity(per)).collect();
    for (i, r) in runs.into_iter().enumerate() {
        out[i / per].push(r.result);
    }
    out
}

fn final_reward(r: &RunResult) -> f64 {
    r.trajectory.last().map_or(f64::NAN, |p| p.reward)
}

fn final_p_z(r: &RunResult) -> f64 {
    r.trajectory.last().map_or(f64::NAN, |p| p.p_z)
}

pub fn c02_monotone_ascent() -> Verdict {
    let run = || -> dno_core::Result<_> {
        let map = ring_sampler(50, 1.0)?;
        let config = DnoConfig { stepper: Stepper::Ga, steps: 100, ..DnoConfig::new(make_reward("example1", false)?) };
        monotonicity_harness(&map, &config, &HarnessOptions::default())
    };
    match run() {
        Ok(rep) => {
            let frac = rep.monotone_fraction();
            let curve = rep.mean_curve_monotone();
            Verdict::new(
                frac >= 0.99 && curve && rep.learning_rate <= 1.0 / rep.lipschitz,
                format!(
                    "L_hat {:.4e}, l {:.4e} after {} halvings; {} of {} seeds non-decreasing ({:.1}%, need >= 99%); \
                     mean curve monotone: {curve}",
                    rep.lipschitz,
                    rep.learning_rate,
                    rep.retries,
                    rep.deltas.len() - rep.violating_seeds.len(),
                    rep.deltas.len(),
                    100.0 * frac
                ),
            )
        }
        Err(e) => Verdict::error(e),
    }
}

pub fn c03_sde_vs_ode() -> Verdict {
    let run = || -> Result<Vec<Vec<RunResult>>, String> {
        let sde = ring_sampler(50, 1.0).map_err(|e| e.to_string())?;
        let ode = sde.with_eta(0.0).map_err(|e| e.to_string())?;
        let config = DnoConfig::new(make_reward("example1", false).map_err(|e| e.to_string())?);
        let arms = [arm("eta=1", sde, config.clone()), arm("eta=0", ode, config)];
        Ok(by_arm(run_arms(&arms, &seeds(1000)).map_err(|e| e.to_string())?, 2))
    };
    let results = match run() {
        Ok(r) => r,
        Err(e) => return Verdict::error(e),
    };
    let sde: Vec<f64> = results[0].iter().map(final_reward).collect();
    let ode: Vec<f64> = results[1].iter().map(final_reward).collect();
    let diff: Vec<f64> = sde.iter().zip(&ode).map(|(a, b)| a - b).collect();
    let se = std_err(&diff);
    Verdict::new(
        mean(&sde) >= mean(&ode) - se,
        format!(
            "1000 seeds, 100 Adam steps: eta=1 {:.4} +- {:.4}, eta=0 {:.4} +- {:.4}; paired difference {:.4} (SE {:.4})",
            mean(&sde),
            std_err(&sde),
            mean(&ode),
            std_err(&ode),
            mean(&diff),
            se
        ),
    )
}

pub fn c06_reward_hacking() -> Verdict {
    let run = || -> Result<Vec<Vec<RunResult>>, String> {
        let map = ring_sampler(50, 1.0).map_err(|e| e.to_string())?;
        let base = DnoConfig {
            steps: 1000,
            k: 2,
            perm_batch: 100,
            indicator_perms: 100,
            ..DnoConfig::new(make_reward("quad_ood", false).map_err(|e| e.to_string())?)
        };
        let arms = [
            arm("no_reg", map.clone(), DnoConfig { reg_enabled: false, ..base.clone() }),
            arm("reg", map, DnoConfig { reg_enabled: true, gamma: 1.0, ..base }),
        ];
        Ok(by_arm(run_arms(&arms, &seeds(1000)).map_err(|e| e.to_string())?, 2))
    };
    let results = match run() {
        Ok(r) => r,
        Err(e) => return Verdict::error(e),
    };
    let escaped = |runs: &[RunResult]| {
        runs.iter()
            .filter(|r| {
                let radius = norm(&r.final_sample);
                !(0.8..=1.2).contains(&radius)
            })
            .count() as f64
            / runs.len() as f64
    };
    let (esc_plain, esc_reg) = (escaped(&results[0]), escaped(&results[1]));
    let p_plain: Vec<f64> = results[0].iter().map(final_p_z).collect();
    let p_reg: Vec<f64> = results[1].iter().map(final_p_z).collect();
    let paired: Vec<f64> = p_reg.iter().zip(&p_plain).map(|(a, b)| a - b).collect();
    let (med_plain, med_reg) = (median(&p_plain), median(&p_reg));
    let hack = esc_plain >= 0.9;
    let fewer = esc_reg < esc_plain;
    let typical = med_reg > med_plain;
    Verdict::new(
        hack && fewer && typical,
        format!(
            "1000 seeds x 1000 Adam steps: escaped without reg {:.1}% (need >= 90%), with gamma=1 {:.1}% \
             (need < {:.1}%); median final P(z) {med_plain:.3e} -> {med_reg:.3e}, median paired change {:.3e}",
            100.0 * esc_plain,
            100.0 * esc_reg,
            100.0 * esc_plain,
            median(&paired)
        ),
    )
}

/// The iterate has stopped: the sample moved at most `tol` over the last `window` steps.
fn converged(r: &RunResult, window: usize, tol: f64) -> bool {
    let t = &r.trajectory;
    if !r.termination.is_completed() || t.len() <= window {
        return false;
    }
    let (a, b) = (&t[t.len() - 1].sample, &t[t.len() - 1 - window].sample);
    let moved: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&moved) <= tol
}

const QUAD_STEPS: usize = 6000;
const QUAD_SEEDS: u64 = 200;

pub fn c09_stationarity() -> Verdict {
    let run = || -> Result<(usize, usize, usize, usize), String> {
        let err = |e: dno_core::DnoError| e.to_string();
        let segment = Sampler::new(make_model("segment").map_err(err)?, NoiseSchedule::standard(50).map_err(err)?, 1.0)
            .map_err(err)?;
        let line = make_reward("line_height", false).map_err(err)?;
        let seg_runs = run_arms(&[arm("segment", segment.clone(), DnoConfig::new(line.clone()))], &seeds(200))
            .map_err(|e| e.to_string())?;
        let type3 = seg_runs
            .par_iter()
            .map(|r| {
                classify_stationarity(&segment, &line, &r.result.final_noise, DEFAULT_STATIONARITY_TOL).map(|c| c.class)
            })
            .collect::<dno_core::Result<Vec<_>>>()
            .map_err(err)?
            .into_iter()
            .filter(|c| *c == Stationarity::TypeIII)
            .count();

        let ring = ring_sampler(50, 1.0).map_err(err)?;
        let quad = make_reward("quad_ood", false).map_err(err)?;
        let quad_runs = run_arms(
            &[arm("quad_ood", ring.clone(), DnoConfig { steps: QUAD_STEPS, ..DnoConfig::new(quad.clone()) })],
            &seeds(QUAD_SEEDS),
        )
        .map_err(|e| e.to_string())?;
        let settled: Vec<&SeedRun> = quad_runs.iter().filter(|r| converged(&r.result, 100, 1e-8)).collect();
        let type1 = settled
            .par_iter()
            .map(|r| {
                classify_stationarity(&ring, &quad, &r.result.final_noise, DEFAULT_STATIONARITY_TOL).map(|c| c.class)
            })
            .collect::<dno_core::Result<Vec<_>>>()
            .map_err(err)?
            .into_iter()
            .filter(|c| *c == Stationarity::TypeI)
            .count();
        Ok((type3, seg_runs.len(), type1, settled.len()))
    };
    match run() {
        Ok((type3, seg_total, type1, settled)) => Verdict::new(
            type3 as f64 >= 0.95 * seg_total as f64 && settled as f64 >= 0.9 * QUAD_SEEDS as f64 && type1 == settled,
            format!(
                "segment + line height: {type3}/{seg_total} Type-III (need >= 95%); quad-OOD after {QUAD_STEPS} Adam steps: \
                 {settled}/{QUAD_SEEDS} converged (need >= 90%), {type1} of them Type-I (need all); tolerance {DEFAULT_STATIONARITY_TOL:e}"
            ),
        ),
        Err(e) => Verdict::error(e),
    }
}
