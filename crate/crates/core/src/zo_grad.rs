//! Gradient estimators for rewards whose gradient is unavailable.
//!
//! - [`zo_sgd_grad`] perturbs the noise and treats `r ∘ M` as a black box.
//! - [`hybrid1_grad`] perturbs the sample, estimates `∇r(x)` by finite
//!   differences and pulls it back through the exact sampler VJP.
//! - [`hybrid2_grad`] perturbs the noise, so every queried point is a real
//!   sample, and pulls the reward-weighted sample displacement back through
//!   the VJP.
//!
//! Perturbation `i` of call `c` draws from its own stream
//! `(seed, Estimator, c, i)`, which makes estimates independent of evaluation
//! order.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DnoError, Result};
use crate::rewards::RewardSpec;
use crate::rng::{self, Purpose};
use crate::sampler::SamplingMap;

/// Anything that can score a sample.
pub trait RewardOracle: Sync {
    fn value(&self, x: &[f64]) -> Result<f64>;
}

impl RewardOracle for RewardSpec {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.eval(x)
    }
}

impl<F> RewardOracle for F
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    fn value(&self, x: &[f64]) -> Result<f64> {
        self(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct ZoConfig {
    /// Perturbation scale.
    pub mu: f64,
    /// Number of perturbations per estimate.
    pub samples: usize,
    /// Divide reward differences by `mu` (ZO-SGD and Hybrid-1 only).
    #[serde(default = "default_true")]
    pub normalize_by_mu: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl ZoConfig {
    pub fn new(mu: f64, samples: usize, seed: u64) -> Self {
        Self { mu, samples, normalize_by_mu: true, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(DnoError::Config(format!("perturbation scale must be positive, got {}", self.mu)));
        }
        if self.samples == 0 {
            return Err(DnoError::Config("estimator needs at least one perturbation".into()));
        }
        Ok(())
    }

    fn difference_scale(&self) -> f64 {
        if self.normalize_by_mu {
            1.0 / self.mu
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    /// Estimated `∇_z r(M(z))`, flattened like `z`.
    pub gradient: Vec<f64>,
    /// Unperturbed sample `M(z)`.
    pub sample: Vec<f64>,
    /// `r(M(z))`.
    pub reward: f64,
    pub reward_queries: usize,
    pub sampler_passes: usize,
    pub vjps: usize,
}

fn perturbation(cfg: &ZoConfig, call: u64, index: usize, len: usize) -> Vec<f64> {
    let mut rng = rng::stream(cfg.seed, Purpose::Estimator, call, index as u64);
    rng::standard_normal_vec(&mut rng, len)
}

fn shifted(z: &[f64], mu: f64, xi: &[f64]) -> Vec<f64> {
    z.iter().zip(xi).map(|(a, b)| a + mu * b).collect()
}

fn axpy(acc: &mut [f64], alpha: f64, x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += alpha * b);
}

/// ZO-SGD: `(1/q)Σ (r(M(z+μξ_i)) − r(M(z)))/μ · ξ_i`, `ξ_i ~ N(0, I_n)`.
pub fn zo_sgd_grad<S, R>(map: &S, reward: &R, cfg: &ZoConfig, z: &[f64], call: u64) -> Result<GradientEstimate>
where
    S: SamplingMap,
    R: RewardOracle + ?Sized,
{
    cfg.validate()?;
    check_dim(map.noise_dim(), z.len())?;
    let x = map.sample(z)?;
    let r0 = reward.value(&x)?;
    let mut gradient = vec![0.0; z.len()];
    for i in 0..cfg.samples {
        let xi = perturbation(cfg, call, i, z.len());
        let ri = reward.value(&map.sample(&shifted(z, cfg.mu, &xi))?)?;
        axpy(&mut gradient, (ri - r0) * cfg.difference_scale(), &xi);
    }
    let inv_q = 1.0 / cfg.samples as f64;
    gradient.iter_mut().for_each(|g| *g *= inv_q);
    Ok(GradientEstimate {
        gradient,
        sample: x,
        reward: r0,
        reward_queries: cfg.samples + 1,
        sampler_passes: cfg.samples + 1,
        vjps: 0,
    })
}

/// Hybrid-1: finite-difference reward gradient in sample space, `ξ_i ~ N(0, I_d)`,
/// pulled back through the exact VJP.
pub fn hybrid1_grad<S, R>(map: &S, reward: &R, cfg: &ZoConfig, z: &[f64], call: u64) -> Result<GradientEstimate>
where
    S: SamplingMap,
    R: RewardOracle + ?Sized,
{
    cfg.validate()?;
    check_dim(map.noise_dim(), z.len())?;
    let (x, tape) = map.sample_with_tape(z)?;
    let r0 = reward.value(&x)?;
    let mut h1 = vec![0.0; x.len()];
    for i in 0..cfg.samples {
        let xi = perturbation(cfg, call, i, x.len());
        let ri = reward.value(&shifted(&x, cfg.mu, &xi))?;
        axpy(&mut h1, (ri - r0) * cfg.difference_scale(), &xi);
    }
    let inv_q = 1.0 / cfg.samples as f64;
    h1.iter_mut().for_each(|g| *g *= inv_q);
    let gradient = map.pullback(&tape, &h1)?;
    Ok(GradientEstimate {
        gradient,
        sample: x,
        reward: r0,
        reward_queries: cfg.samples + 1,
        sampler_passes: 1,
        vjps: 1,
    })
}

/// Hybrid-2: `Ĥ2 = (1/q)Σ (r(x_i) − r(x))(x_i − x)` with `x_i = M(z + μξ_i)`,
/// `ξ_i ~ N(0, I_n)`, pulled back through the exact VJP. Never divided by `μ`.
pub fn hybrid2_grad<S, R>(map: &S, reward: &R, cfg: &ZoConfig, z: &[f64], call: u64) -> Result<GradientEstimate>
where
    S: SamplingMap,
    R: RewardOracle + ?Sized,
{
    cfg.validate()?;
    check_dim(map.noise_dim(), z.len())?;
    let (x, tape) = map.sample_with_tape(z)?;
    let r0 = reward.value(&x)?;
    let mut h2 = vec![0.0; x.len()];
    for i in 0..cfg.samples {
        let xi = perturbation(cfg, call, i, z.len());
        let xs = map.sample(&shifted(z, cfg.mu, &xi))?;
        let ri = reward.value(&xs)?;
        for ((h, a), b) in h2.iter_mut().zip(&xs).zip(&x) {
            *h += (ri - r0) * (a - b);
        }
    }
    let inv_q = 1.0 / cfg.samples as f64;
    h2.iter_mut().for_each(|g| *g *= inv_q);
    let gradient = map.pullback(&tape, &h2)?;
    Ok(GradientEstimate {
        gradient,
        sample: x,
        reward: r0,
        reward_queries: cfg.samples + 1,
        sampler_passes: cfg.samples + 1,
        vjps: 1,
    })
}

/// Every point at which an estimator would query the reward, for support audits.
pub fn hybrid2_query_points<S: SamplingMap>(map: &S, cfg: &ZoConfig, z: &[f64], call: u64) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let mut points = vec![map.sample(z)?];
    for i in 0..cfg.samples {
        let xi = perturbation(cfg, call, i, z.len());
        points.push(map.sample(&shifted(z, cfg.mu, &xi))?);
    }
    Ok(points)
}

/// Sample-space query points of Hybrid-1 (`x` and `x + μξ_i`).
pub fn hybrid1_query_points<S: SamplingMap>(map: &S, cfg: &ZoConfig, z: &[f64], call: u64) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let x = map.sample(z)?;
    let mut points = vec![x.clone()];
    for i in 0..cfg.samples {
        let xi = perturbation(cfg, call, i, x.len());
        points.push(shifted(&x, cfg.mu, &xi));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewards::{make_reward, RewardKind};
    use crate::sampler::Sampler;
    use crate::toy_models::{MixtureModel, NoiseSchedule, ZeroEpsilon};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// `M(z) = z`.
    struct Identity(usize);

    impl SamplingMap for Identity {
        type Tape = ();

        fn noise_dim(&self) -> usize {
            self.0
        }

        fn sample_dim(&self) -> usize {
            self.0
        }

        fn sample(&self, z: &[f64]) -> Result<Vec<f64>> {
            Ok(z.to_vec())
        }

        fn sample_with_tape(&self, z: &[f64]) -> Result<(Vec<f64>, ())> {
            Ok((z.to_vec(), ()))
        }

        fn pullback(&self, _: &(), cotangent: &[f64]) -> Result<Vec<f64>> {
            Ok(cotangent.to_vec())
        }
    }

    /// Wraps a map and counts forward passes and pullbacks.
    struct Counting<S> {
        inner: S,
        passes: AtomicUsize,
        vjps: AtomicUsize,
    }

    impl<S> Counting<S> {
        fn new(inner: S) -> Self {
            Self { inner, passes: AtomicUsize::new(0), vjps: AtomicUsize::new(0) }
        }
    }

    impl<S: SamplingMap> SamplingMap for Counting<S> {
        type Tape = S::Tape;

        fn noise_dim(&self) -> usize {
            self.inner.noise_dim()
        }

        fn sample_dim(&self) -> usize {
            self.inner.sample_dim()
        }

        fn sample(&self, z: &[f64]) -> Result<Vec<f64>> {
            self.passes.fetch_add(1, Ordering::Relaxed);
            self.inner.sample(z)
        }

        fn sample_with_tape(&self, z: &[f64]) -> Result<(Vec<f64>, S::Tape)> {
            self.passes.fetch_add(1, Ordering::Relaxed);
            self.inner.sample_with_tape(z)
        }

        fn pullback(&self, tape: &S::Tape, cotangent: &[f64]) -> Result<Vec<f64>> {
            self.vjps.fetch_add(1, Ordering::Relaxed);
            self.inner.pullback(tape, cotangent)
        }
    }

    fn linear_stub() -> Sampler<ZeroEpsilon> {
        Sampler::new(ZeroEpsilon { dim: 2 }, NoiseSchedule::standard(10).unwrap(), 0.0).unwrap()
    }

    fn ring_sampler(eta: f64) -> Sampler {
        Sampler::new(MixtureModel::ring(16, 1.0, 0.01).unwrap(), NoiseSchedule::standard(10).unwrap(), eta).unwrap()
    }

    fn exact_gradient<S: SamplingMap>(map: &S, reward: &RewardSpec, z: &[f64]) -> Vec<f64> {
        let (x, tape) = map.sample_with_tape(z).unwrap();
        map.pullback(&tape, &reward.grad(&x).unwrap()).unwrap()
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        crate::dot(a, b) / (crate::norm(a) * crate::norm(b))
    }

    fn gaussian(n: usize, seed: u64) -> Vec<f64> {
        rng::standard_normal_vec(&mut ChaCha8Rng::seed_from_u64(seed), n)
    }

    #[test]
    fn config_validation() {
        assert!(ZoConfig::new(0.0, 4, 0).validate().is_err());
        assert!(ZoConfig::new(0.01, 0, 0).validate().is_err());
        assert!(ZoConfig::new(0.01, 1, 0).validate().is_ok());
    }

    #[test]
    fn constant_reward_gives_exactly_zero() {
        let map = ring_sampler(1.0);
        let reward = RewardSpec::new(RewardKind::Constant { value: 3.0, dim: 2 }).hidden();
        let z = gaussian(map.noise_dim(), 1);
        let cfg = ZoConfig::new(0.05, 8, 2);
        for est in [zo_sgd_grad, hybrid1_grad, hybrid2_grad] {
            let e = est(&map, &reward, &cfg, &z, 0).unwrap();
            assert!(e.gradient.iter().all(|g| *g == 0.0));
        }
    }

    #[test]
    fn query_accounting_matches_instrumented_counters() {
        let q = 7;
        let cfg = ZoConfig::new(0.01, q, 3);
        let z = gaussian(22, 4);
        let base = make_reward("example1", true).unwrap();
        type Estimator = fn(&Counting<Sampler>, &dyn RewardOracle, &ZoConfig, &[f64], u64) -> Result<GradientEstimate>;
        let estimators: [(Estimator, usize, usize); 3] = [
            (|m, r, c, z, k| zo_sgd_grad(m, r, c, z, k), q + 1, 0),
            (|m, r, c, z, k| hybrid1_grad(m, r, c, z, k), 1, 1),
            (|m, r, c, z, k| hybrid2_grad(m, r, c, z, k), q + 1, 1),
        ];
        for (est, passes, vjps) in estimators {
            let map = Counting::new(ring_sampler(1.0));
            let queries = AtomicUsize::new(0);
            let counted = |x: &[f64]| {
                queries.fetch_add(1, Ordering::Relaxed);
                base.eval(x)
            };
            let e = est(&map, &counted, &cfg, &z, 0).unwrap();
            assert_eq!(e.reward_queries, queries.load(Ordering::Relaxed));
            assert_eq!(e.reward_queries, q + 1);
            assert_eq!(e.sampler_passes, map.passes.load(Ordering::Relaxed));
            assert_eq!(e.sampler_passes, passes);
            assert_eq!(e.vjps, map.vjps.load(Ordering::Relaxed));
            assert_eq!(e.vjps, vjps);
        }
    }

    #[test]
    fn estimates_are_reproducible_per_call_index() {
        let map = ring_sampler(1.0);
        let reward = make_reward("example1", true).unwrap();
        let z = gaussian(22, 5);
        let cfg = ZoConfig::new(0.01, 4, 6);
        let a = hybrid2_grad(&map, &reward, &cfg, &z, 3).unwrap();
        let b = hybrid2_grad(&map, &reward, &cfg, &z, 3).unwrap();
        let c = hybrid2_grad(&map, &reward, &cfg, &z, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.gradient, c.gradient);
    }

    #[test]
    fn zo_sgd_is_unbiased_on_linear_composites() {
        let map = linear_stub();
        let reward = RewardSpec::new(RewardKind::Linear { coefficients: vec![0.7, -0.4] });
        let z = gaussian(map.noise_dim(), 7);
        let exact = exact_gradient(&map, &reward, &z);
        let hidden = reward.clone().hidden();
        let draws = 10_000;
        let n = z.len();
        let mut sum = vec![0.0; n];
        let mut sum_sq = vec![0.0; n];
        for call in 0..draws {
            let e = zo_sgd_grad(&map, &hidden, &ZoConfig::new(0.01, 1, 8), &z, call).unwrap();
            for i in 0..n {
                sum[i] += e.gradient[i];
                sum_sq[i] += e.gradient[i] * e.gradient[i];
            }
        }
        let d = draws as f64;
        for i in 0..n {
            let mean = sum[i] / d;
            let var = (sum_sq[i] / d - mean * mean).max(0.0);
            let se = (var / d).sqrt();
            assert!((mean - exact[i]).abs() <= 3.0 * se + 1e-9 * exact[i].abs(), "coord {i}: {mean} vs {}", exact[i]);
        }
    }

    #[test]
    fn zo_sgd_is_invariant_to_mu_on_linear_composites() {
        let map = linear_stub();
        let reward = RewardSpec::new(RewardKind::Linear { coefficients: vec![0.7, -0.4] }).hidden();
        let z = gaussian(map.noise_dim(), 9);
        let a = zo_sgd_grad(&map, &reward, &ZoConfig::new(0.01, 5, 1), &z, 0).unwrap();
        let b = zo_sgd_grad(&map, &reward, &ZoConfig::new(0.04, 5, 1), &z, 0).unwrap();
        for (x, y) in a.gradient.iter().zip(&b.gradient) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
        }
    }

    #[test]
    fn hybrid1_linear_reward_recovers_pullback() {
        let map = ring_sampler(1.0);
        let a = vec![0.3, -1.2];
        let reward = RewardSpec::new(RewardKind::Linear { coefficients: a.clone() });
        let z = gaussian(map.noise_dim(), 10);
        let e = hybrid1_grad(&map, &reward.clone().hidden(), &ZoConfig::new(0.01, 20_000, 11), &z, 0).unwrap();
        let exact = exact_gradient(&map, &reward, &z);
        assert!(cosine(&e.gradient, &exact) > 0.99);
    }

    #[test]
    fn hybrid1_quadratic_reward_matches_exact_direction() {
        let reward = make_reward("quad_ood", false).unwrap();
        let hidden = reward.clone().hidden();
        let cfg = ZoConfig::new(1e-4, 10_000, 12);
        for case in 0..20 {
            let map = ring_sampler((case % 2) as f64);
            let z = gaussian(map.noise_dim(), 100 + case);
            let e = hybrid1_grad(&map, &hidden, &cfg, &z, case).unwrap();
            assert!(cosine(&e.gradient, &exact_gradient(&map, &reward, &z)) > 0.95);
        }
    }

    #[test]
    fn hybrid2_on_identity_map_is_proportional_to_gradient() {
        let map = Identity(6);
        let reward = RewardSpec::new(RewardKind::Linear { coefficients: vec![1.0, -2.0, 0.5, 0.0, 3.0, -1.0] });
        let z = gaussian(6, 13);
        let e = hybrid2_grad(&map, &reward.clone().hidden(), &ZoConfig::new(1e-3, 1000, 14), &z, 0).unwrap();
        assert!(cosine(&e.gradient, &reward.grad(&z).unwrap()) > 0.99);
    }

    #[test]
    fn hybrid2_queries_stay_near_the_ring() {
        let map = Sampler::new(MixtureModel::ring(16, 1.0, 0.01).unwrap(), NoiseSchedule::standard(50).unwrap(), 1.0)
            .unwrap();
        let cfg = ZoConfig::new(0.02, 4, 15);
        for case in 0..50 {
            let z = gaussian(map.noise_dim(), 200 + case);
            for p in hybrid2_query_points(&map, &cfg, &z, case).unwrap() {
                let r = crate::norm(&p);
                assert!((0.5..=1.5).contains(&r), "radius {r}");
            }
        }
    }
}
