//! Analytic-score diffusion models.
//!
//! A [`MixtureModel`] is a mixture of isotropic Gaussians. Under a
//! variance-preserving forward process the noisy marginal at cumulative
//! signal level `ᾱ` is again a mixture, with component means `√ᾱ·μ_j` and
//! variances `ᾱ·σ_j² + (1 − ᾱ)`, so scores and score Jacobians are exact.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DnoError, Result};
use crate::rng::{self, Purpose};

const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Isotropic variance. Zero is allowed and makes the component a point mass.
    pub variance: f64,
}

/// Parameters of one component of the noisy marginal `p_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureModel {
    components: Vec<MixtureComponent>,
    dim: usize,
}

/// Linear-β variance-preserving schedule subsampled to `T` DDIM steps.
///
/// `alpha_bar[t]` is the cumulative signal level at DDIM step `t`, with
/// `alpha_bar[0] = 1` (clean data).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
    base_length: usize,
    beta_min: f64,
    beta_max: f64,
    timesteps: Vec<usize>,
}

impl NoiseSchedule {
    pub const DEFAULT_BASE_LENGTH: usize = 1000;
    pub const DEFAULT_BETA_MIN: f64 = 1e-4;
    pub const DEFAULT_BETA_MAX: f64 = 0.02;

    pub fn build(steps: usize, base_length: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(DnoError::Config("schedule needs at least one step".into()));
        }
        if base_length < steps {
            return Err(DnoError::Config(format!(
                "base schedule length {base_length} is shorter than step count {steps}"
            )));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(DnoError::Config(format!("need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")));
        }

        let mut base = Vec::with_capacity(base_length + 1);
        base.push(1.0);
        let mut acc = 1.0;
        for j in 0..base_length {
            let beta = if base_length == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * j as f64 / (base_length - 1) as f64
            };
            acc *= 1.0 - beta;
            base.push(acc);
        }

        let timesteps: Vec<usize> = (1..=steps).map(|t| t * base_length / steps).collect();
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        alpha_bar.extend(timesteps.iter().map(|&i| base[i]));

        Ok(Self { alpha_bar, base_length, beta_min, beta_max, timesteps })
    }

    /// Default toy schedule: `steps` DDIM steps over 1000 linear-β base steps.
    pub fn standard(steps: usize) -> Result<Self> {
        Self::build(steps, Self::DEFAULT_BASE_LENGTH, Self::DEFAULT_BETA_MIN, Self::DEFAULT_BETA_MAX)
    }

    pub fn steps(&self) -> usize {
        self.timesteps.len()
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar.get(t).copied().ok_or(DnoError::Index { index: t, min: 0, max: self.steps() })
    }

    /// All cumulative levels `ᾱ_0..ᾱ_T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Base-schedule index selected for each DDIM step `1..=T`.
    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn base_length(&self) -> usize {
        self.base_length
    }

    pub fn beta_range(&self) -> (f64, f64) {
        (self.beta_min, self.beta_max)
    }
}

/// Anything that can play the role of the learned ε-network at a given
/// cumulative signal level.
pub trait EpsilonModel: Send + Sync {
    fn dim(&self) -> usize;

    fn epsilon(&self, alpha_bar: f64, x: &[f64]) -> Vec<f64>;

    /// `J_εᵀ · cotangent` where `J_ε` is the Jacobian of [`Self::epsilon`] in `x`.
    fn epsilon_vjp(&self, alpha_bar: f64, x: &[f64], cotangent: &[f64]) -> Vec<f64>;
}

/// Stub whose ε-prediction is identically zero. Turns DDIM into pure rescaling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ZeroEpsilon {
    pub dim: usize,
}

impl EpsilonModel for ZeroEpsilon {
    fn dim(&self) -> usize {
        self.dim
    }

    fn epsilon(&self, _alpha_bar: f64, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    fn epsilon_vjp(&self, _alpha_bar: f64, _x: &[f64], _cotangent: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }
}

/// Per-component quantities at one point: responsibilities `γ_j`,
/// scaled residuals `u_j = −(x − m_j)/v_j` and variances `v_j`.
struct Posterior {
    gamma: Vec<f64>,
    u: Vec<Vec<f64>>,
    var: Vec<f64>,
    log_pdf: f64,
}

impl MixtureModel {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first =
            components.first().ok_or_else(|| DnoError::Config("mixture needs at least one component".into()))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(DnoError::Config("mixture dimension must be positive".into()));
        }
        let mut total = 0.0;
        for (j, c) in components.iter().enumerate() {
            if c.mean.len() != dim {
                return Err(DnoError::Config(format!("component {j} has dimension {}, expected {dim}", c.mean.len())));
            }
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(DnoError::Config(format!("component {j} weight {} not in (0, 1]", c.weight)));
            }
            if !(c.variance >= 0.0 && c.variance.is_finite()) {
                return Err(DnoError::Config(format!("component {j} variance {} is invalid", c.variance)));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return Err(DnoError::Config(format!("component {j} mean is not finite")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(DnoError::Config(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { components, dim })
    }

    /// `count` equally weighted components on a circle, the first at angle 0.
    pub fn ring(count: usize, radius: f64, variance: f64) -> Result<Self> {
        if count == 0 {
            return Err(DnoError::Config("ring needs at least one component".into()));
        }
        let w = 1.0 / count as f64;
        let components = (0..count)
            .map(|j| {
                let angle = 2.0 * std::f64::consts::PI * j as f64 / count as f64;
                MixtureComponent { weight: w, mean: vec![radius * angle.cos(), radius * angle.sin()], variance }
            })
            .collect();
        Self::new(components)
    }

    /// `count` equally weighted components evenly spaced from `start` to `end`.
    pub fn segment(count: usize, start: [f64; 2], end: [f64; 2], variance: f64) -> Result<Self> {
        if count == 0 {
            return Err(DnoError::Config("segment needs at least one component".into()));
        }
        let w = 1.0 / count as f64;
        let components = (0..count)
            .map(|j| {
                let s = if count == 1 { 0.5 } else { j as f64 / (count - 1) as f64 };
                let mean = vec![start[0] + s * (end[0] - start[0]), start[1] + s * (end[1] - start[1])];
                MixtureComponent { weight: w, mean, variance }
            })
            .collect();
        Self::new(components)
    }

    pub fn cluster(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::new(vec![MixtureComponent { weight: 1.0, mean, variance }])
    }

    /// `N(0, I_dim)`, which every VP marginal leaves invariant.
    pub fn standard_normal(dim: usize) -> Result<Self> {
        Self::cluster(vec![0.0; dim], 1.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn marginal_params(&self, schedule: &NoiseSchedule, t: usize) -> Result<Vec<MarginalComponent>> {
        let ab = schedule.alpha_bar(t)?;
        Ok(self.marginal_at(ab))
    }

    pub fn marginal_at(&self, alpha_bar: f64) -> Vec<MarginalComponent> {
        let scale = alpha_bar.sqrt();
        self.components
            .iter()
            .map(|c| MarginalComponent {
                weight: c.weight,
                mean: c.mean.iter().map(|m| scale * m).collect(),
                variance: alpha_bar * c.variance + (1.0 - alpha_bar),
            })
            .collect()
    }

    fn posterior(&self, alpha_bar: f64, x: &[f64]) -> Posterior {
        let scale = alpha_bar.sqrt();
        let d = self.dim as f64;
        let n = self.components.len();
        let mut log_terms = Vec::with_capacity(n);
        let mut u = Vec::with_capacity(n);
        let mut var = Vec::with_capacity(n);
        for c in &self.components {
            let v = alpha_bar * c.variance + (1.0 - alpha_bar);
            let resid: Vec<f64> = x.iter().zip(&c.mean).map(|(xi, m)| -(xi - scale * m) / v).collect();
            // ‖x − m‖²/v = v·‖u‖²
            let quad = v * crate::dot(&resid, &resid);
            log_terms.push(c.weight.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * quad);
            u.push(resid);
            var.push(v);
        }
        let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = log_terms.iter().map(|l| (l - max).exp()).sum();
        let log_pdf = max + sum.ln();
        let gamma = log_terms.iter().map(|l| (l - log_pdf).exp()).collect();
        Posterior { gamma, u, var, log_pdf }
    }

    pub fn log_pdf_at(&self, alpha_bar: f64, x: &[f64]) -> f64 {
        self.posterior(alpha_bar, x).log_pdf
    }

    pub fn log_pdf(&self, schedule: &NoiseSchedule, x: &[f64], t: usize) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.log_pdf_at(schedule.alpha_bar(t)?, x))
    }

    /// `∇_x log p(x)` for the marginal at signal level `alpha_bar`.
    pub fn score_at(&self, alpha_bar: f64, x: &[f64]) -> Vec<f64> {
        let post = self.posterior(alpha_bar, x);
        let mut s = vec![0.0; self.dim];
        for (g, u) in post.gamma.iter().zip(&post.u) {
            for (si, ui) in s.iter_mut().zip(u) {
                *si += g * ui;
            }
        }
        s
    }

    pub fn score(&self, schedule: &NoiseSchedule, x: &[f64], t: usize) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok(self.score_at(schedule.alpha_bar(t)?, x))
    }

    /// Hessian of `log p` applied to `v`:
    /// `H = Σ_j γ_j (−I/v_j + u_j u_jᵀ) − s sᵀ` with `s = Σ_j γ_j u_j`.
    pub fn score_vjp_at(&self, alpha_bar: f64, x: &[f64], cotangent: &[f64]) -> Vec<f64> {
        let post = self.posterior(alpha_bar, x);
        let mut s = vec![0.0; self.dim];
        let mut out = vec![0.0; self.dim];
        for ((g, u), v) in post.gamma.iter().zip(&post.u).zip(&post.var) {
            let uc = crate::dot(u, cotangent);
            for i in 0..self.dim {
                s[i] += g * u[i];
                out[i] += g * (u[i] * uc - cotangent[i] / v);
            }
        }
        let sc = crate::dot(&s, cotangent);
        for (o, si) in out.iter_mut().zip(&s) {
            *o -= si * sc;
        }
        out
    }

    pub fn score_vjp(&self, schedule: &NoiseSchedule, x: &[f64], t: usize, cotangent: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, cotangent.len())?;
        Ok(self.score_vjp_at(schedule.alpha_bar(t)?, x, cotangent))
    }

    /// ε-parameterisation `−√(1 − ᾱ_t)·score`. Defined for `1 ≤ t ≤ T` only.
    pub fn epsilon_pred(&self, schedule: &NoiseSchedule, x: &[f64], t: usize) -> Result<Vec<f64>> {
        if t == 0 || t > schedule.steps() {
            return Err(DnoError::Index { index: t, min: 1, max: schedule.steps() });
        }
        let score = self.score(schedule, x, t)?;
        let c = (1.0 - schedule.alpha_bar(t)?).sqrt();
        Ok(score.into_iter().map(|s| -c * s).collect())
    }

    /// i.i.d. draws from the clean mixture.
    pub fn sample_data(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng::stream(seed, Purpose::Data, 0, 0);
        let cumulative: Vec<f64> = self
            .components
            .iter()
            .scan(0.0, |acc, c| {
                *acc += c.weight;
                Some(*acc)
            })
            .collect();
        (0..count)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * cumulative[cumulative.len() - 1];
                let j = cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1);
                let c = &self.components[j];
                let sd = c.variance.sqrt();
                let noise = rng::standard_normal_vec(&mut rng, self.dim);
                c.mean.iter().zip(noise).map(|(m, e)| m + sd * e).collect()
            })
            .collect()
    }
}

impl EpsilonModel for MixtureModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn epsilon(&self, alpha_bar: f64, x: &[f64]) -> Vec<f64> {
        let c = (1.0 - alpha_bar).sqrt();
        self.score_at(alpha_bar, x).into_iter().map(|s| -c * s).collect()
    }

    fn epsilon_vjp(&self, alpha_bar: f64, x: &[f64], cotangent: &[f64]) -> Vec<f64> {
        // The score Jacobian is a symmetric Hessian, so VJP = JVP.
        let c = (1.0 - alpha_bar).sqrt();
        self.score_vjp_at(alpha_bar, x, cotangent).into_iter().map(|h| -c * h).collect()
    }
}

fn default_ring_components() -> usize {
    16
}
fn default_segment_components() -> usize {
    21
}
fn default_radius() -> f64 {
    1.0
}
fn default_ring_variance() -> f64 {
    0.01
}
fn default_segment_start() -> [f64; 2] {
    [-1.0, 0.0]
}
fn default_segment_end() -> [f64; 2] {
    [1.0, 0.0]
}
fn default_cluster_mean() -> Vec<f64> {
    vec![0.0, 0.0]
}
fn default_cluster_variance() -> f64 {
    1.0
}

/// Named model presets addressable from experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelPreset {
    Ring {
        #[serde(default = "default_ring_components")]
        components: usize,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_ring_variance")]
        variance: f64,
    },
    /// Data supported on a line segment. The default width is zero: with any
    /// positive width the sampling map keeps a non-zero normal derivative and
    /// points on the segment are no longer orthogonal-stationary.
    Segment {
        #[serde(default = "default_segment_components")]
        components: usize,
        #[serde(default = "default_segment_start")]
        start: [f64; 2],
        #[serde(default = "default_segment_end")]
        end: [f64; 2],
        #[serde(default)]
        variance: f64,
    },
    Cluster {
        #[serde(default = "default_cluster_mean")]
        mean: Vec<f64>,
        #[serde(default = "default_cluster_variance")]
        variance: f64,
    },
    Custom {
        components: Vec<MixtureComponent>,
    },
}

impl ModelPreset {
    /// Preset with default parameters for `ring`, `segment` or `cluster`.
    pub fn by_name(kind: &str) -> Result<Self> {
        match kind {
            "ring" => Ok(Self::Ring {
                components: default_ring_components(),
                radius: default_radius(),
                variance: default_ring_variance(),
            }),
            "segment" => Ok(Self::Segment {
                components: default_segment_components(),
                start: default_segment_start(),
                end: default_segment_end(),
                variance: 0.0,
            }),
            "cluster" => Ok(Self::Cluster { mean: default_cluster_mean(), variance: default_cluster_variance() }),
            other => Err(DnoError::Config(format!("unknown model kind `{other}`"))),
        }
    }

    pub fn build(&self) -> Result<MixtureModel> {
        match self {
            Self::Ring { components, radius, variance } => MixtureModel::ring(*components, *radius, *variance),
            Self::Segment { components, start, end, variance } => {
                MixtureModel::segment(*components, *start, *end, *variance)
            }
            Self::Cluster { mean, variance } => MixtureModel::cluster(mean.clone(), *variance),
            Self::Custom { components } => MixtureModel::new(components.clone()),
        }
    }
}

/// Builds a preset by name with default parameters.
pub fn make_model(kind: &str) -> Result<MixtureModel> {
    ModelPreset::by_name(kind)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mixture(rng: &mut ChaCha8Rng, count: usize) -> MixtureModel {
        let raw: Vec<f64> = (0..count).map(|_| rng.random::<f64>() + 0.1).collect();
        let total: f64 = raw.iter().sum();
        let components = raw
            .iter()
            .map(|w| MixtureComponent {
                weight: w / total,
                mean: vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                variance: rng.random_range(0.01..0.5),
            })
            .collect();
        MixtureModel { components, dim: 2 }
    }

    #[test]
    fn schedule_final_level_matches_direct_product() {
        let s = NoiseSchedule::standard(50).unwrap();
        // Frozen from an independent cumulative product of the 1000 factors.
        let expected = 4.035829765375676e-05;
        assert!((s.alpha_bar(50).unwrap() - expected).abs() < 1e-15);
        assert_eq!(s.timesteps()[49], 1000);
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::build(1, 1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[1.0, 0.5]);
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(matches!(NoiseSchedule::build(0, 10, 1e-4, 0.02), Err(DnoError::Config(_))));
        assert!(matches!(NoiseSchedule::build(20, 10, 1e-4, 0.02), Err(DnoError::Config(_))));
        assert!(matches!(NoiseSchedule::build(5, 10, 0.0, 0.02), Err(DnoError::Config(_))));
        assert!(matches!(NoiseSchedule::build(5, 10, 0.03, 0.02), Err(DnoError::Config(_))));
        assert!(matches!(NoiseSchedule::build(5, 10, 1e-4, 1.0), Err(DnoError::Config(_))));
    }

    #[test]
    fn marginal_params_examples() {
        let s = NoiseSchedule::standard(10).unwrap();
        let ring = MixtureModel::ring(16, 1.0, 0.01).unwrap();
        let m0 = ring.marginal_params(&s, 0).unwrap();
        for (mc, c) in m0.iter().zip(ring.components()) {
            assert_eq!(mc.mean, c.mean);
            assert_eq!(mc.variance, c.variance);
            assert_eq!(mc.weight, c.weight);
        }

        let unit = MixtureModel::standard_normal(2).unwrap();
        for t in 0..=10 {
            let v = unit.marginal_params(&s, t).unwrap()[0].variance;
            assert!((v - 1.0).abs() < 1e-15);
        }

        let m = MixtureModel::cluster(vec![2.0, 0.0], 0.01).unwrap();
        let mc = &m.marginal_at(0.25)[0];
        assert_eq!(mc.mean, vec![1.0, 0.0]);
        assert!((mc.variance - 0.7525).abs() < 1e-15);

        assert!(matches!(ring.marginal_params(&s, 11), Err(DnoError::Index { .. })));
    }

    #[test]
    fn standard_normal_score_is_minus_x() {
        let s = NoiseSchedule::standard(20).unwrap();
        let m = MixtureModel::standard_normal(2).unwrap();
        let x = [0.3, -1.7];
        for t in 0..=20 {
            let sc = m.score(&s, &x, t).unwrap();
            assert!((sc[0] + 0.3).abs() < 1e-14 && (sc[1] - 1.7).abs() < 1e-14);
            let h = m.score_vjp(&s, &x, t, &[0.5, 2.0]).unwrap();
            assert!((h[0] + 0.5).abs() < 1e-14 && (h[1] + 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetric_pair_has_zero_score_on_axis() {
        let m = MixtureModel::new(vec![
            MixtureComponent { weight: 0.5, mean: vec![1.0, 0.0], variance: 0.1 },
            MixtureComponent { weight: 0.5, mean: vec![-1.0, 0.0], variance: 0.1 },
        ])
        .unwrap();
        let s = m.score_at(0.7, &[0.0, 0.4]);
        assert!(s[0].abs() < 1e-14);
    }

    #[test]
    fn score_matches_log_pdf_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let m = random_mixture(&mut rng, 4);
            let ab: f64 = rng.random_range(0.05..1.0);
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let s = m.score_at(ab, &x);
            let h = 1e-5;
            for i in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fd = (m.log_pdf_at(ab, &xp) - m.log_pdf_at(ab, &xm)) / (2.0 * h);
                let err = (fd - s[i]).abs();
                assert!(err <= 1e-6 * s[i].abs().max(1.0), "fd {fd} vs {}", s[i]);
            }
        }
    }

    #[test]
    fn score_vjp_matches_directional_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let m = random_mixture(&mut rng, 3);
            let ab: f64 = rng.random_range(0.05..1.0);
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let hv = m.score_vjp_at(ab, &x, &v);
            let h = 1e-6;
            let xp = [x[0] + h * v[0], x[1] + h * v[1]];
            let xm = [x[0] - h * v[0], x[1] - h * v[1]];
            let sp = m.score_at(ab, &xp);
            let sm = m.score_at(ab, &xm);
            let scale = crate::norm(&hv).max(1.0);
            for i in 0..2 {
                let fd = (sp[i] - sm[i]) / (2.0 * h);
                assert!((fd - hv[i]).abs() <= 1e-5 * scale, "fd {fd} vs {}", hv[i]);
            }
            assert_eq!(m.score_vjp_at(ab, &x, &[0.0, 0.0]), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn score_is_finite_far_from_support() {
        let m = MixtureModel::ring(16, 1.0, 0.01).unwrap();
        let s = m.score_at(1.0, &[40.0, -25.0]);
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn epsilon_pred_examples() {
        let s = NoiseSchedule::standard(10).unwrap();
        let unit = MixtureModel::standard_normal(2).unwrap();
        let x = [0.4, -0.9];
        let e = unit.epsilon_pred(&s, &x, 3).unwrap();
        let c = (1.0 - s.alpha_bar(3).unwrap()).sqrt();
        assert!((e[0] - c * 0.4).abs() < 1e-15 && (e[1] + c * 0.9).abs() < 1e-15);
        assert!(matches!(unit.epsilon_pred(&s, &x, 0), Err(DnoError::Index { .. })));
        assert!(unit.epsilon(1.0, &x).iter().all(|v| *v == 0.0));

        let ring = MixtureModel::ring(16, 1.0, 0.01).unwrap();
        let e = ring.epsilon_pred(&s, &x, 7).unwrap();
        let sc = ring.score(&s, &x, 7).unwrap();
        let c = (1.0 - s.alpha_bar(7).unwrap()).sqrt();
        assert_eq!(e, sc.iter().map(|v| -c * v).collect::<Vec<_>>());
    }

    #[test]
    fn presets() {
        let ring = make_model("ring").unwrap();
        assert_eq!(ring.components().len(), 16);
        let c0 = &ring.components()[0].mean;
        let c4 = &ring.components()[4].mean;
        assert!((c0[0] - 1.0).abs() < 1e-15 && c0[1].abs() < 1e-15);
        assert!(c4[0].abs() < 1e-15 && (c4[1] - 1.0).abs() < 1e-15);

        let seg = make_model("segment").unwrap();
        assert_eq!(seg.components().len(), 21);
        assert!(seg.components().iter().all(|c| c.mean[1] == 0.0));

        for kind in ["ring", "segment", "cluster"] {
            let m = make_model(kind).unwrap();
            let total: f64 = m.components().iter().map(|c| c.weight).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!(matches!(make_model("torus"), Err(DnoError::Config(_))));
    }

    #[test]
    fn rejects_invalid_components() {
        let bad_sum = vec![
            MixtureComponent { weight: 0.5, mean: vec![0.0], variance: 1.0 },
            MixtureComponent { weight: 0.4, mean: vec![1.0], variance: 1.0 },
        ];
        assert!(MixtureModel::new(bad_sum).is_err());
        assert!(MixtureModel::new(vec![]).is_err());
        assert!(MixtureModel::cluster(vec![0.0], -1.0).is_err());
        let mixed_dim = vec![
            MixtureComponent { weight: 0.5, mean: vec![0.0], variance: 1.0 },
            MixtureComponent { weight: 0.5, mean: vec![1.0, 2.0], variance: 1.0 },
        ];
        assert!(MixtureModel::new(mixed_dim).is_err());
    }

    #[test]
    fn sample_data_contracts() {
        let point = MixtureModel::cluster(vec![0.7, -0.2], 0.0).unwrap();
        assert!(point.sample_data(25, 3).iter().all(|x| x == &vec![0.7, -0.2]));

        let ring = make_model("ring").unwrap();
        assert_eq!(ring.sample_data(100, 11), ring.sample_data(100, 11));

        let n = 100_000;
        let xs = ring.sample_data(n, 5);
        for i in 0..2 {
            let vals: Vec<f64> = xs.iter().map(|x| x[i]).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
        }
    }
}
