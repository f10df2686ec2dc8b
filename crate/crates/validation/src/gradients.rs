//! Finite-difference gradient checks and the ODE/SDE noise equivalence.

use dno_core::probreg::{reg_grad, reg_value, Factorization, PermutationSet};
use dno_core::rewards::RewardKind;
use dno_core::rng::{self, Purpose};
use dno_core::{NoiseBundle, RewardSpec};
use rand::Rng;

use crate::{ring_sampler, Verdict};

const REL_TOL: f64 = 1e-4;
const ABS_TOL: f64 = 1e-6;
const FD_STEP: f64 = 1e-6;
const CASES: u64 = 20;
const ETAS: [f64; 2] = [0.0, 1.0];
const STEP_COUNTS: [usize; 2] = [5, 50];

/// Error over allowance for one coordinate; at most 1 means agreement.
fn excess(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / (REL_TOL * fd.abs().max(analytic.abs())).max(ABS_TOL)
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + FD_STEP;
            let fp = f(&p);
            p[i] = x[i] - FD_STEP;
            let fm = f(&p);
            p[i] = x[i];
            (fp - fm) / (2.0 * FD_STEP)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-family tally of cases and the worst coordinate.
struct Family {
    name: String,
    cases: usize,
    failed_cases: usize,
    worst: f64,
}

impl Family {
    fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), cases: 0, failed_cases: 0, worst: 0.0 }
    }

    fn record(&mut self, fd: &[f64], analytic: &[f64]) {
        let errors: Vec<f64> = fd.iter().zip(analytic).map(|(f, a)| excess(*f, *a)).collect();
        self.cases += 1;
        if errors.iter().any(|e| e.is_nan() || *e > 1.0) {
            self.failed_cases += 1;
        }
        let worst = errors.iter().copied().fold(0.0, |m: f64, e| if e.is_nan() { f64::INFINITY } else { m.max(e) });
        self.worst = self.worst.max(worst);
    }

    fn ok(&self) -> bool {
        self.cases >= CASES as usize && self.failed_cases == 0
    }
}

fn sampler_family(eta: f64, steps: usize) -> dno_core::Result<Family> {
    let s = ring_sampler(steps, eta)?;
    let mut fam = Family::new(format!("sampler_vjp(eta={eta},T={steps})"));
    for case in 0..CASES {
        let mut rng = rng::stream(1, Purpose::Synthetic, 100 + steps as u64, case * 2 + eta as u64);
        let z = NoiseBundle::standard_normal(2, steps, &mut rng);
        let cot = rng::standard_normal_vec(&mut rng, 2);
        let (_, tape) = s.run_sampler(&z)?;
        let analytic = s.sampler_vjp(&tape, &cot)?.into_vec();
        let fd = central_difference(
            |v| {
                let b = NoiseBundle::from_flat(2, steps, v.to_vec()).expect("layout");
                dot(&s.sample_bundle(&b).expect("sampler"), &cot)
            },
            z.as_slice(),
        );
        fam.record(&fd, &analytic);
    }
    Ok(fam)
}

fn score_family(steps: usize) -> dno_core::Result<Family> {
    let s = ring_sampler(steps, 1.0)?;
    let (model, schedule) = (s.model(), s.schedule());
    let mut fam = Family::new(format!("score_vjp(T={steps})"));
    for case in 0..CASES {
        let mut rng = rng::stream(2, Purpose::Synthetic, steps as u64, case);
        let t = rng.random_range(1..=steps);
        let scale = rng.random_range(0.5..1.5);
        let x: Vec<f64> = rng::standard_normal_vec(&mut rng, 2).iter().map(|v| v * scale).collect();
        let cot = rng::standard_normal_vec(&mut rng, 2);
        let analytic = model.score_vjp(schedule, &x, t, &cot)?;
        let fd = central_difference(|v| dot(&model.score(schedule, v, t).expect("score"), &cot), &x);
        fam.record(&fd, &analytic);
    }
    Ok(fam)
}

fn reg_family(steps: usize, k: usize) -> dno_core::Result<Family> {
    let n = 2 * (steps + 1);
    let fac = Factorization::new(n, k)?;
    let mut fam = Family::new(format!("reg_grad(n={n},k={k})"));
    for case in 0..CASES {
        let mut rng = rng::stream(3, Purpose::Synthetic, (n * 10 + k) as u64, case);
        let scale = rng.random_range(0.3..2.0);
        let z: Vec<f64> = rng::standard_normal_vec(&mut rng, n).iter().map(|v| v * scale).collect();
        let perms = PermutationSet::random(n, 8, case);
        let analytic = reg_grad(&z, fac, &perms)?;
        let fd = central_difference(|v| reg_value(v, fac, &perms).expect("reg"), &z);
        fam.record(&fd, &analytic);
    }
    Ok(fam)
}

fn reward_family(kind: RewardKind) -> dno_core::Result<Family> {
    let reward = RewardSpec::new(kind);
    let d = reward.arity();
    let mut fam = Family::new(reward.name());
    for case in 0..CASES {
        let mut rng = rng::stream(4, Purpose::Synthetic, d as u64, case);
        let x: Vec<f64> = rng::standard_normal_vec(&mut rng, d).iter().map(|v| 1.5 * v).collect();
        let analytic = reward.grad(&x)?;
        let fd = central_difference(|v| reward.eval(v).expect("reward"), &x);
        fam.record(&fd, &analytic);
    }
    Ok(fam)
}

fn all_families() -> dno_core::Result<Vec<Family>> {
    let mut out = Vec::new();
    for &steps in &STEP_COUNTS {
        for &eta in &ETAS {
            out.push(sampler_family(eta, steps)?);
        }
        out.push(score_family(steps)?);
        for k in [2, 3] {
            out.push(reg_family(steps, k)?);
        }
    }
    let rewards = [
        RewardKind::Example1 { summed_penalty: false },
        RewardKind::Example1 { summed_penalty: true },
        RewardKind::QuadOod { center: vec![1.4, 1.4] },
        RewardKind::Brightness { dim: 2 },
        RewardKind::Darkness { dim: 2 },
        RewardKind::LineHeight,
        RewardKind::Linear { coefficients: vec![0.7, -0.4] },
        RewardKind::Constant { value: 3.0, dim: 2 },
    ];
    for kind in rewards {
        out.push(reward_family(kind)?);
    }
    Ok(out)
}

pub fn c01_gradient_correctness() -> Verdict {
    let families = match all_families() {
        Ok(f) => f,
        Err(e) => return Verdict::error(e),
    };
    let pass = families.iter().all(Family::ok);
    let worst = families.iter().max_by(|a, b| a.worst.total_cmp(&b.worst)).expect("families");
    let failing: Vec<String> = families
        .iter()
        .filter(|f| !f.ok())
        .map(|f| format!("{} ({}/{} cases)", f.name, f.failed_cases, f.cases))
        .collect();
    let mut detail = format!(
        "{} families x {} cases; worst error/allowance {:.3} in {}",
        families.len(),
        CASES,
        worst.worst,
        worst.name
    );
    if !failing.is_empty() {
        detail.push_str(&format!("; failing: {}", failing.join(", ")));
    }
    Verdict::new(pass, detail)
}

pub fn c10_ode_sde_equivalence() -> Verdict {
    let run = || -> dno_core::Result<f64> {
        let sde = ring_sampler(50, 1.0)?;
        let ode = sde.with_eta(0.0)?;
        let mut worst: f64 = 0.0;
        for case in 0..100 {
            let mut rng = rng::stream(10, Purpose::Synthetic, 0, case);
            let x_t = rng::standard_normal_vec(&mut rng, 2);
            let noise = sde.ode_equivalent_noise(&x_t)?;
            let a = sde.sample_bundle(&noise)?;
            let b = ode.sample_bundle(&NoiseBundle::from_parts(&x_t, &vec![vec![0.0; 2]; 50])?)?;
            for (u, v) in a.iter().zip(&b) {
                worst = worst.max((u - v).abs());
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) => Verdict::new(worst <= 1e-9, format!("100 x_T; max |difference| {worst:.3e} (tolerance 1e-9)")),
        Err(e) => Verdict::error(e),
    }
}
