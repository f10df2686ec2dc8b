//! Zeroth-order and hybrid gradient estimator criteria.

use dno_core::optimizer::{composite_gradient, initial_noise};
use dno_core::rewards::{make_reward, RewardKind};
use dno_core::rng::{self, Purpose};
use dno_core::toy_models::ZeroEpsilon;
use dno_core::zo_grad::{hybrid1_grad, hybrid2_grad, zo_sgd_grad, ZoConfig};
use dno_core::{DnoConfig, GradientSource, NoiseSchedule, RewardSpec, RunResult, Sampler, SamplingMap};
use dno_lab::config::Arm;
use dno_lab::experiments::run_arms;
use rand::Rng;

use crate::stats::{cosine, mean, std_err};
use crate::{ring_sampler, Verdict};

/// Reward of case `i`: Example-1, a shifted quadratic, or a random linear map.
fn case_reward(i: u64) -> RewardSpec {
    let mut rng = rng::stream(7, Purpose::Synthetic, 1, i);
    let kind = match i % 3 {
        0 => RewardKind::Example1 { summed_penalty: false },
        1 => RewardKind::QuadOod { center: vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)] },
        _ => RewardKind::Linear { coefficients: rng::standard_normal_vec(&mut rng, 2) },
    };
    RewardSpec::new(kind)
}

struct Unbiasedness {
    outside: usize,
    coordinates: usize,
    worst_se: f64,
}

/// Per-coordinate check that the mean of `draws` single-sample ZO-SGD
/// estimates on a linear composite is within 3 SE of the exact gradient.
fn zo_unbiasedness(draws: u64) -> dno_core::Result<Unbiasedness> {
    let map = Sampler::new(ZeroEpsilon { dim: 2 }, NoiseSchedule::standard(50)?, 1.0)?;
    let reward = RewardSpec::new(RewardKind::Linear { coefficients: vec![0.7, -0.4] });
    let z = initial_noise(map.noise_dim(), 7);
    let exact = composite_gradient(&map, &reward, &z)?;
    let hidden = reward.hidden();
    let cfg = ZoConfig::new(1e-3, 1, 8);
    let n = z.len();
    let (mut sum, mut sum_sq) = (vec![0.0; n], vec![0.0; n]);
    for call in 0..draws {
        let g = zo_sgd_grad(&map, &hidden, &cfg, &z, call)?.gradient;
        for i in 0..n {
            sum[i] += g[i];
            sum_sq[i] += g[i] * g[i];
        }
    }
    let d = draws as f64;
    let mut outside = 0;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let m = sum[i] / d;
        let se = ((sum_sq[i] / d - m * m).max(0.0) / (d - 1.0)).sqrt();
        let z_score = (m - exact[i]).abs() / se;
        worst = worst.max(z_score);
        if z_score.is_nan() || z_score > 3.0 {
            outside += 1;
        }
    }
    Ok(Unbiasedness { outside, coordinates: n, worst_se: worst })
}

pub fn c07_estimator_quality() -> Verdict {
    let run = || -> dno_core::Result<(Vec<f64>, Vec<f64>, Unbiasedness)> {
        let map = ring_sampler(50, 1.0)?;
        let (mut h1, mut h2) = (Vec::new(), Vec::new());
        for case in 0..20u64 {
            let reward = case_reward(case);
            let z = initial_noise(map.noise_dim(), 500 + case);
            let exact = composite_gradient(&map, &reward, &z)?;
            let hidden = reward.hidden();
            let cfg = ZoConfig::new(1e-3, 1000, case);
            h1.push(cosine(&hybrid1_grad(&map, &hidden, &cfg, &z, 0)?.gradient, &exact));
            h2.push(cosine(&hybrid2_grad(&map, &hidden, &cfg, &z, 0)?.gradient, &exact));
        }
        Ok((h1, h2, zo_unbiasedness(10_000)?))
    };
    match run() {
        Ok((h1, h2, Unbiasedness { outside, coordinates: n, worst_se: worst })) => {
            let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
            let h1_ok = h1.iter().all(|c| *c > 0.9);
            let h2_ok = h2.iter().all(|c| *c > 0.9);
            let h2_below = h2.iter().filter(|c| **c <= 0.9).count();
            Verdict::new(
                h1_ok && h2_ok && outside == 0,
                format!(
                    "mu=1e-3, q=1e3, 20 ring cases: hybrid1 min cosine {:.4}, hybrid2 min cosine {:.4} \
                     ({h2_below} cases <= 0.9); zo_sgd 1e4 draws: {outside}/{n} coordinates beyond 3 SE (max {worst:.2} SE)",
                    min(&h1),
                    min(&h2)
                ),
            )
        }
        Err(e) => Verdict::error(e),
    }
}

pub fn c08_matched_budget() -> Verdict {
    // Per-step cost: ZO-SGD 17 sampler passes, Hybrid-1 one pass and one VJP,
    // Hybrid-2 16 passes and one VJP.
    let budgets =
        [(GradientSource::ZoSgd, 0.01, 16), (GradientSource::Hybrid1, 0.01, 16), (GradientSource::Hybrid2, 0.02, 15)];
    let run = || -> Result<Vec<Vec<f64>>, String> {
        let map = ring_sampler(50, 1.0).map_err(|e| e.to_string())?;
        let reward = make_reward("example1", true).map_err(|e| e.to_string())?;
        let arms: Vec<Arm> = budgets
            .iter()
            .map(|&(source, mu, q)| Arm {
                label: source.name().to_string(),
                sampler: map.clone(),
                config: DnoConfig {
                    steps: 200,
                    gradient_source: source,
                    zo: ZoConfig::new(mu, q, 0),
                    ..DnoConfig::new(reward.clone())
                },
            })
            .collect();
        let seeds: Vec<u64> = (0..200).collect();
        let runs = run_arms(&arms, &seeds).map_err(|e| e.to_string())?;
        Ok(runs.chunks(seeds.len()).map(|c| c.iter().map(|r| final_reward(&r.result)).collect()).collect())
    };
    let finals = match run() {
        Ok(f) => f,
        Err(e) => return Verdict::error(e),
    };
    let (zo, h1, h2) = (&finals[0], &finals[1], &finals[2]);
    let diff: Vec<f64> = h2.iter().zip(zo).map(|(a, b)| a - b).collect();
    let se = std_err(&diff);
    Verdict::new(
        mean(h2) >= mean(zo) + se,
        format!(
            "200 seeds x 200 steps at matched passes: zo_sgd {:.4} +- {:.4}, hybrid1 {:.4} +- {:.4}, hybrid2 {:.4} +- {:.4}; \
             hybrid2 - zo_sgd {:.4} (paired SE {se:.4}); hybrid2 >= hybrid1: {}",
            mean(zo),
            std_err(zo),
            mean(h1),
            std_err(h1),
            mean(h2),
            std_err(h2),
            mean(&diff),
            mean(h2) >= mean(h1)
        ),
    )
}

fn final_reward(r: &RunResult) -> f64 {
    r.trajectory.last().map_or(f64::NAN, |p| p.reward)
}
