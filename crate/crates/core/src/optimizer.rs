//! The noise-optimization loop and the tools used to study it.
//!
//! [`dno_run`] maximises `r(M(z)) + γ·reg(z)` over the flat noise vector `z`
//! with Adam or plain gradient ascent. The reward gradient comes either from
//! the exact sampler pullback or from one of the estimators in
//! [`crate::zo_grad`].

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DnoError, Result};
use crate::probreg::{self, Factorization, PermutationSet};
use crate::rewards::RewardSpec;
use crate::rng::{self, Purpose};
use crate::sampler::SamplingMap;
use crate::zo_grad::{self, GradientEstimate, ZoConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepper {
    Adam,
    /// Plain gradient ascent `z ← z + ℓ·g`.
    Ga,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSource {
    Exact,
    ZoSgd,
    Hybrid1,
    Hybrid2,
}

impl GradientSource {
    pub fn name(self) -> &'static str {
        match self {
            GradientSource::Exact => "exact",
            GradientSource::ZoSgd => "zo_sgd",
            GradientSource::Hybrid1 => "hybrid1",
            GradientSource::Hybrid2 => "hybrid2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub params: AdamParams,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize, params: AdamParams) -> Self {
        Self { params, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam step in the ascent direction `gradient`.
pub fn adam_step(state: &mut AdamState, z: &mut [f64], gradient: &[f64], lr: f64) -> Result<()> {
    check_dim(state.m.len(), z.len())?;
    check_dim(z.len(), gradient.len())?;
    let AdamParams { beta1, beta2, eps } = state.params;
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..z.len() {
        let g = gradient[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        z[i] += lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DnoConfig {
    pub reward: RewardSpec,
    pub steps: usize,
    pub stepper: Stepper,
    pub learning_rate: f64,
    /// Regularization weight `γ`.
    pub gamma: f64,
    pub reg_enabled: bool,
    /// Subvector length of the noise factorization.
    pub k: usize,
    /// Fresh permutations drawn per step for the regularizer gradient.
    pub perm_batch: usize,
    /// Size of the fixed permutation set used to report `P(z)`.
    pub indicator_perms: usize,
    pub gradient_source: GradientSource,
    /// Estimator settings. The perturbation streams are keyed by `seed`, not `zo.seed`.
    pub zo: ZoConfig,
    pub adam: AdamParams,
    pub seed: u64,
}

impl DnoConfig {
    pub fn new(reward: RewardSpec) -> Self {
        Self {
            reward,
            steps: 100,
            stepper: Stepper::Adam,
            learning_rate: 0.01,
            gamma: 1.0,
            reg_enabled: false,
            k: 2,
            perm_batch: 100,
            indicator_perms: 100,
            gradient_source: GradientSource::Exact,
            zo: ZoConfig::new(0.01, 16, 0),
            adam: AdamParams::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(DnoError::Config(format!("learning rate must be finite and ≥ 0, got {}", self.learning_rate)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(DnoError::Config(format!("gamma must be finite and ≥ 0, got {}", self.gamma)));
        }
        if self.perm_batch == 0 || self.indicator_perms == 0 {
            return Err(DnoError::Config("permutation counts must be positive".into()));
        }
        if self.gradient_source != GradientSource::Exact {
            self.zo.validate()?;
        } else if self.reward.hidden {
            return Err(DnoError::Capability(format!(
                "exact gradients requested but reward `{}` hides its gradient",
                self.reward.name()
            )));
        }
        Ok(())
    }

    fn reg_active(&self) -> bool {
        self.reg_enabled && self.gamma > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub reward: f64,
    /// Regularizer value on the fixed reporting permutation set.
    pub reg_value: f64,
    pub p_z: f64,
    pub sample: Vec<f64>,
    /// Norm of the (possibly estimated) reward gradient `∇_z r(M(z))`.
    pub grad_norm: f64,
    /// Cumulative reward queries up to and including this point.
    pub reward_queries: usize,
    /// Cumulative sampler forward passes up to and including this point.
    pub sampler_passes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Termination {
    Completed,
    NonFinite { step: usize },
    NumericFailure { step: usize, message: String },
}

impl Termination {
    pub fn reason(&self) -> String {
        match self {
            Termination::Completed => "completed".into(),
            Termination::NonFinite { step } => format!("non_finite at step {step}"),
            Termination::NumericFailure { step, message } => format!("numeric_failure at step {step}: {message}"),
        }
    }

    pub fn is_completed(&self) -> bool {
        matches!(self, Termination::Completed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_noise: Vec<f64>,
    pub final_sample: Vec<f64>,
    pub termination: Termination,
}

/// Initial noise `z⁰ ~ N(0, I_n)` of run `seed`.
pub fn initial_noise(n: usize, seed: u64) -> Vec<f64> {
    rng::standard_normal_vec(&mut rng::stream(seed, Purpose::InitialNoise, 0, 0), n)
}

fn exact_estimate<S: SamplingMap>(map: &S, reward: &RewardSpec, z: &[f64]) -> Result<GradientEstimate> {
    let (x, tape) = map.sample_with_tape(z)?;
    let r = reward.eval(&x)?;
    let g = reward.grad(&x)?;
    let gradient = map.pullback(&tape, &g)?;
    Ok(GradientEstimate { gradient, sample: x, reward: r, reward_queries: 1, sampler_passes: 1, vjps: 1 })
}

fn reward_gradient<S: SamplingMap>(map: &S, config: &DnoConfig, z: &[f64], step: usize) -> Result<GradientEstimate> {
    let zo = ZoConfig { seed: config.seed, ..config.zo };
    let call = step as u64;
    match config.gradient_source {
        GradientSource::Exact => exact_estimate(map, &config.reward, z),
        GradientSource::ZoSgd => zo_grad::zo_sgd_grad(map, &config.reward, &zo, z, call),
        GradientSource::Hybrid1 => zo_grad::hybrid1_grad(map, &config.reward, &zo, z, call),
        GradientSource::Hybrid2 => zo_grad::hybrid2_grad(map, &config.reward, &zo, z, call),
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Runs noise optimization from `z⁰ ~ N(0, I)` drawn from `config.seed`.
///
/// The trajectory holds `steps + 1` points unless a numeric failure stops
/// the run early; the failure is then reported in `termination`.
pub fn dno_run<S: SamplingMap>(map: &S, config: &DnoConfig) -> Result<RunResult> {
    config.validate()?;
    check_dim(map.sample_dim(), config.reward.arity())?;
    let n = map.noise_dim();
    let fac = Factorization::new(n, config.k)?;
    let indicator = PermutationSet::random(n, config.indicator_perms, config.seed);

    let mut z = initial_noise(n, config.seed);
    let mut adam = AdamState::new(n, config.adam);
    let mut trajectory = Vec::with_capacity(config.steps + 1);
    let mut queries = 0;
    let mut passes = 0;
    let mut final_sample = Vec::new();
    let mut termination = Termination::Completed;

    for step in 0..=config.steps {
        let est = match reward_gradient(map, config, &z, step) {
            Ok(e) => e,
            Err(DnoError::NumericDomain(message)) => {
                log::warn!("run {} stopped at step {step}: {message}", config.seed);
                termination = Termination::NumericFailure { step, message };
                break;
            }
            Err(e) => return Err(e),
        };
        queries += est.reward_queries;
        passes += est.sampler_passes;
        let (log_p, reg_value) = probreg::log_indicator_and_reg(&z, fac, &indicator)?;
        let finite = est.reward.is_finite() && all_finite(&est.sample) && all_finite(&est.gradient);
        trajectory.push(TrajectoryPoint {
            step,
            reward: est.reward,
            reg_value,
            p_z: log_p.exp(),
            sample: est.sample.clone(),
            grad_norm: crate::norm(&est.gradient),
            reward_queries: queries,
            sampler_passes: passes,
        });
        final_sample = est.sample;
        if !finite {
            termination = Termination::NonFinite { step };
            break;
        }
        if step == config.steps {
            break;
        }

        let mut g = est.gradient;
        if config.reg_active() {
            let batch = PermutationSet::batch(n, config.perm_batch, config.seed, step as u64);
            let rg = probreg::reg_grad(&z, fac, &batch)?;
            g.iter_mut().zip(&rg).for_each(|(a, b)| *a += config.gamma * b);
        }
        match config.stepper {
            Stepper::Ga => z.iter_mut().zip(&g).for_each(|(zi, gi)| *zi += config.learning_rate * gi),
            Stepper::Adam => adam_step(&mut adam, &mut z, &g, config.learning_rate)?,
        }
    }

    Ok(RunResult { trajectory, final_noise: z, final_sample, termination })
}

/// Exact `∇_z r(M(z))`.
pub fn composite_gradient<S: SamplingMap>(map: &S, reward: &RewardSpec, z: &[f64]) -> Result<Vec<f64>> {
    Ok(exact_estimate(map, reward, z)?.gradient)
}

const POWER_ITERATIONS: usize = 8;
const PROBE_STEP: f64 = 1e-4;

/// Empirical smoothness constant of `r ∘ M`.
///
/// Probe `i` sits at `z ~ N(0, I)` drawn from its own stream. The probe
/// displacement `δ` is steered towards the direction of largest gradient
/// change by finite-difference power iteration, and the probe reports
/// `‖∇(z+δ) − ∇(z)‖/‖δ‖`. The estimate is the maximum over probes, so a
/// larger probe count with the same seed never lowers it.
pub fn estimate_lipschitz<S: SamplingMap>(map: &S, reward: &RewardSpec, probes: usize, seed: u64) -> Result<f64> {
    let n = map.noise_dim();
    let mut best: f64 = 0.0;
    for i in 0..probes {
        let z = rng::standard_normal_vec(&mut rng::stream(seed, Purpose::Probe, i as u64, 0), n);
        let mut dir = rng::standard_normal_vec(&mut rng::stream(seed, Purpose::Probe, i as u64, 1), n);
        let g0 = composite_gradient(map, reward, &z)?;
        let mut ratio = 0.0;
        for _ in 0..POWER_ITERATIONS {
            let len = crate::norm(&dir);
            if len == 0.0 {
                break;
            }
            dir.iter_mut().for_each(|d| *d /= len);
            let zp: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + PROBE_STEP * d).collect();
            let gp = composite_gradient(map, reward, &zp)?;
            let diff: Vec<f64> = gp.iter().zip(&g0).map(|(a, b)| a - b).collect();
            ratio = crate::norm(&diff) / PROBE_STEP;
            dir = diff;
        }
        best = best.max(ratio);
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarnessOptions {
    pub seeds: usize,
    pub base_seed: u64,
    pub probes: usize,
    /// Allowed per-step reward decrease.
    pub tolerance: f64,
    pub max_retries: usize,
    /// Starting step size; `1/L̂` when absent.
    pub learning_rate: Option<f64>,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self { seeds: 1000, base_seed: 0, probes: 1000, tolerance: 1e-9, max_retries: 5, learning_rate: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityReport {
    pub lipschitz: f64,
    pub learning_rate: f64,
    /// Number of times the step size was halved.
    pub retries: usize,
    /// `deltas[s][t] = r_{t+1} − r_t` for seed index `s`.
    pub deltas: Vec<Vec<f64>>,
    pub mean_curve: Vec<f64>,
    pub violating_seeds: Vec<u64>,
    pub tolerance: f64,
}

impl MonotonicityReport {
    pub fn monotone_fraction(&self) -> f64 {
        if self.deltas.is_empty() {
            return 1.0;
        }
        1.0 - self.violating_seeds.len() as f64 / self.deltas.len() as f64
    }

    pub fn mean_curve_monotone(&self) -> bool {
        self.mean_curve.windows(2).all(|w| w[1] - w[0] >= -self.tolerance)
    }
}

/// Runs plain gradient ascent with exact gradients over many seeds at
/// `ℓ = 1/L̂` and checks per-step reward monotonicity. On any violation `ℓ`
/// is halved and the whole batch rerun, at most `max_retries` times.
pub fn monotonicity_harness<S: SamplingMap>(
    map: &S,
    config: &DnoConfig,
    opts: &HarnessOptions,
) -> Result<MonotonicityReport> {
    if config.stepper != Stepper::Ga || config.gradient_source != GradientSource::Exact || config.reg_active() {
        return Err(DnoError::Contract(
            "monotonicity harness needs gradient ascent, exact gradients and no regularization".into(),
        ));
    }
    let lipschitz = estimate_lipschitz(map, &config.reward, opts.probes, opts.base_seed)?;
    let mut lr = match opts.learning_rate {
        Some(lr) => lr,
        None if lipschitz > 0.0 => 1.0 / lipschitz,
        None => config.learning_rate,
    };
    let mut retries = 0;
    loop {
        let mut deltas = Vec::with_capacity(opts.seeds);
        let mut violating = Vec::new();
        let mut sums = vec![0.0; config.steps + 1];
        for s in 0..opts.seeds {
            let seed = opts.base_seed + s as u64;
            let run = dno_run(map, &DnoConfig { seed, learning_rate: lr, ..config.clone() })?;
            let rewards: Vec<f64> = run.trajectory.iter().map(|p| p.reward).collect();
            for (acc, r) in sums.iter_mut().zip(&rewards) {
                *acc += r;
            }
            let d: Vec<f64> = rewards.windows(2).map(|w| w[1] - w[0]).collect();
            if !run.termination.is_completed() || d.iter().any(|x| *x < -opts.tolerance) {
                violating.push(seed);
            }
            deltas.push(d);
        }
        let mean_curve = sums.iter().map(|s| s / opts.seeds.max(1) as f64).collect();
        if violating.is_empty() || retries == opts.max_retries {
            return Ok(MonotonicityReport {
                lipschitz,
                learning_rate: lr,
                retries,
                deltas,
                mean_curve,
                violating_seeds: violating,
                tolerance: opts.tolerance,
            });
        }
        log::info!("{} seeds lost monotonicity at ℓ = {lr:e}; halving", violating.len());
        lr *= 0.5;
        retries += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stationarity {
    /// Reward gradient vanishes at the sample.
    TypeI,
    /// Sampler Jacobian vanishes.
    TypeII,
    /// Reward gradient orthogonal to the sampler Jacobian.
    TypeIII,
    NotStationary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationarityReport {
    pub class: Stationarity,
    pub sample: Vec<f64>,
    /// `‖∇r(x₀)‖`.
    pub g1_norm: f64,
    /// Frobenius norm of `∂x₀/∂z`.
    pub g2_norm: f64,
    /// `‖∇r(x₀)ᵀ ∂x₀/∂z‖`.
    pub g1g2_norm: f64,
}

pub const DEFAULT_STATIONARITY_TOL: f64 = 1e-4;

pub fn classify_stationarity<S: SamplingMap>(
    map: &S,
    reward: &RewardSpec,
    z: &[f64],
    tolerance: f64,
) -> Result<StationarityReport> {
    let (x, tape) = map.sample_with_tape(z)?;
    let g1 = reward.grad(&x)?;
    let mut g2_sq = 0.0;
    for i in 0..x.len() {
        let mut basis = vec![0.0; x.len()];
        basis[i] = 1.0;
        let row = map.pullback(&tape, &basis)?;
        g2_sq += crate::dot(&row, &row);
    }
    let g1_norm = crate::norm(&g1);
    let g2_norm = g2_sq.sqrt();
    let g1g2_norm = crate::norm(&map.pullback(&tape, &g1)?);
    let class = if g1_norm <= tolerance {
        Stationarity::TypeI
    } else if g2_norm <= tolerance {
        Stationarity::TypeII
    } else if g1g2_norm <= tolerance * g1_norm * g2_norm {
        Stationarity::TypeIII
    } else {
        Stationarity::NotStationary
    };
    Ok(StationarityReport { class, sample: x, g1_norm, g2_norm, g1g2_norm })
}
