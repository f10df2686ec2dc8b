//! Monte Carlo checks of the typicality statistics and the indicator `P(z)`.

use dno_core::probreg::{p1_bound, p2_bound, statistics, Factorization};
use dno_core::rng::{self, Purpose};
use dno_lab::experiments::{evaluate_pz, synthetic_vector, VectorKind};
use rayon::prelude::*;

use crate::stats::median;
use crate::Verdict;

const TRIALS: usize = 100_000;
const GRID: usize = 20;

/// Empirical `P(X ≥ t)` from sorted samples.
fn tail(sorted: &[f64], t: f64) -> f64 {
    (sorted.len() - sorted.partition_point(|x| *x < t)) as f64 / sorted.len() as f64
}

/// Smallest `t` (to bisection precision) where a decreasing bound reaches `level`.
fn bound_quantile(bound: impl Fn(f64) -> f64, level: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    while bound(hi) > level {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if bound(mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

struct TailCheck {
    label: String,
    violations: usize,
    worst_ratio: f64,
}

fn check_tails(label: String, mut samples: Vec<f64>, bound: impl Fn(f64) -> f64) -> TailCheck {
    samples.sort_by(f64::total_cmp);
    let top = bound_quantile(&bound, 1.0 / TRIALS as f64);
    let mut violations = 0;
    let mut worst_ratio: f64 = 0.0;
    for i in 1..=GRID {
        let t = top * i as f64 / GRID as f64;
        let (emp, b) = (tail(&samples, t), bound(t));
        if emp > b {
            violations += 1;
        }
        worst_ratio = worst_ratio.max(emp / b);
    }
    TailCheck { label, violations, worst_ratio }
}

pub fn c04_concentration_validity() -> Verdict {
    let k = 2;
    let mut checks = Vec::new();
    for m in [51, 512] {
        let fac = match Factorization::new(m * k, k) {
            Ok(f) => f,
            Err(e) => return Verdict::error(e),
        };
        let stats: Vec<(f64, f64)> = (0..TRIALS as u64)
            .into_par_iter()
            .map(|trial| {
                let mut rng = rng::stream(4, Purpose::Synthetic, m as u64, trial);
                let z = rng::standard_normal_vec(&mut rng, m * k);
                let s = statistics(&z, fac, None).expect("valid length");
                (s.m1, s.m2)
            })
            .collect();
        let (m1, m2): (Vec<f64>, Vec<f64>) = stats.into_iter().unzip();
        checks.push(check_tails(format!("M1,m={m}"), m1, |t| p1_bound(t, fac)));
        checks.push(check_tails(format!("M2,m={m}"), m2, |t| p2_bound(t, fac)));
    }
    let pass = checks.iter().all(|c| c.violations == 0);
    let detail = checks
        .iter()
        .map(|c| format!("{}: {} violations, max tail/bound {:.3}", c.label, c.violations, c.worst_ratio))
        .collect::<Vec<_>>()
        .join("; ");
    Verdict::new(pass, format!("{TRIALS} trials, {GRID}-point grid; {detail}"))
}

pub fn c05_pz_discrimination() -> Verdict {
    let (n, k, q, trials) = (16384, 2, 100, 100);
    let run = || -> Result<Vec<(VectorKind, Vec<f64>)>, dno_lab::CliError> {
        let mut out = Vec::new();
        for kind in [VectorKind::Gaussian, VectorKind::Zeros, VectorKind::Repeated] {
            let vectors = (0..trials)
                .map(|t| Ok((kind.name().to_string(), synthetic_vector(kind, n, 0, t)?)))
                .collect::<Result<Vec<_>, dno_lab::CliError>>()?;
            let p = evaluate_pz(&vectors, k, q, 0)?.iter().map(|r| r.log_p_z.exp()).collect();
            out.push((kind, p));
        }
        Ok(out)
    };
    let results = match run() {
        Ok(r) => r,
        Err(e) => return Verdict::error(e),
    };
    let fresh = &results[0].1;
    let zeros = &results[1].1;
    let repeated = &results[2].1;
    let fresh_ok = median(fresh) >= 0.1;
    let zeros_max = zeros.iter().copied().fold(0.0, f64::max);
    let zeros_ok = zeros_max < 1e-6;
    let repeated_below = repeated.iter().filter(|p| **p < 0.05).count();
    let repeated_ok = repeated_below == repeated.len();
    Verdict::new(
        fresh_ok && zeros_ok && repeated_ok,
        format!(
            "n={n}, q={q}: fresh median {:.3} (need >= 0.1); all-zero max {zeros_max:.3e} (need < 1e-6); \
             4x-repeated < 0.05 in {repeated_below}/{} trials, median {:.3}",
            median(fresh),
            repeated.len(),
            median(repeated)
        ),
    )
}
