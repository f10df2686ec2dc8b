//! DDIM sampling map and its exact vector-Jacobian product.
//!
//! One step maps `x_t` to
//!
//! ```text
//! x_{t-1} = a_t·x_t + b_t·ε(x_t, t) + σ_t·z_t
//! a_t = √(ᾱ_{t-1}/ᾱ_t)
//! b_t = −(√(ᾱ_{t-1}(1−ᾱ_t)/ᾱ_t) − √(1−ᾱ_{t-1}−σ_t²))
//! σ_t = η·√((1−ᾱ_{t-1})/(1−ᾱ_t))·√(1−ᾱ_t/ᾱ_{t-1})
//! ```
//!
//! A full pass records every state on a [`ForwardTape`]; the backward
//! recursion over the tape gives `∂x_0/∂zᵀ·v` for every injected noise.

use rand::Rng;

use crate::error::{check_dim, DnoError, Result};
use crate::rng;
use crate::toy_models::{EpsilonModel, MixtureModel, NoiseSchedule};

/// Negative square-root arguments down to this magnitude are rounding noise.
const SQRT_CLAMP_TOL: f64 = 1e-12;

/// All injected noises of one sampling pass.
///
/// Flat layout is `[x_T, z_T, z_{T-1}, …, z_1]`, each block of length `d`,
/// for a total of `n = (T + 1)·d` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBundle {
    dim: usize,
    steps: usize,
    data: Vec<f64>,
}

impl NoiseBundle {
    pub fn from_flat(dim: usize, steps: usize, data: Vec<f64>) -> Result<Self> {
        check_dim((steps + 1) * dim, data.len())?;
        Ok(Self { dim, steps, data })
    }

    pub fn zeros(dim: usize, steps: usize) -> Self {
        Self { dim, steps, data: vec![0.0; (steps + 1) * dim] }
    }

    pub fn standard_normal<R: Rng + ?Sized>(dim: usize, steps: usize, rng: &mut R) -> Self {
        Self { dim, steps, data: rng::standard_normal_vec(rng, (steps + 1) * dim) }
    }

    /// Builds a bundle from `x_T` and the step noises ordered `z_T, …, z_1`.
    pub fn from_parts(x_t: &[f64], step_noises: &[Vec<f64>]) -> Result<Self> {
        let dim = x_t.len();
        let mut data = Vec::with_capacity((step_noises.len() + 1) * dim);
        data.extend_from_slice(x_t);
        for z in step_noises {
            check_dim(dim, z.len())?;
            data.extend_from_slice(z);
        }
        Ok(Self { dim, steps: step_noises.len(), data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Initial noise `x_T`.
    pub fn initial(&self) -> &[f64] {
        &self.data[..self.dim]
    }

    fn offset(&self, t: usize) -> usize {
        self.dim * (1 + self.steps - t)
    }

    /// Noise `z_t` injected at DDIM step `t`, for `1 ≤ t ≤ T`.
    pub fn step_noise(&self, t: usize) -> &[f64] {
        assert!(t >= 1 && t <= self.steps, "step {t} outside 1..={}", self.steps);
        let o = self.offset(t);
        &self.data[o..o + self.dim]
    }

    pub fn step_noise_mut(&mut self, t: usize) -> &mut [f64] {
        assert!(t >= 1 && t <= self.steps, "step {t} outside 1..={}", self.steps);
        let o = self.offset(t);
        &mut self.data[o..o + self.dim]
    }

    pub fn initial_mut(&mut self) -> &mut [f64] {
        &mut self.data[..self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Scalars of one DDIM step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepCoefficients {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
}

/// Intermediate states of one sampler pass.
#[derive(Clone, Debug)]
pub struct ForwardTape {
    eta: f64,
    dim: usize,
    /// `states[t]` is `x_t`, `t = 0..=T`.
    states: Vec<Vec<f64>>,
    /// `eps[t - 1]` is `ε(x_t, t)`.
    eps: Vec<Vec<f64>>,
    /// `coefficients[t - 1]` belongs to step `t`.
    coefficients: Vec<StepCoefficients>,
    noise: NoiseBundle,
}

impl ForwardTape {
    pub fn steps(&self) -> usize {
        self.coefficients.len()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t]
    }

    pub fn epsilon(&self, t: usize) -> &[f64] {
        &self.eps[t - 1]
    }

    pub fn coefficients(&self, t: usize) -> StepCoefficients {
        self.coefficients[t - 1]
    }

    pub fn noise(&self) -> &NoiseBundle {
        &self.noise
    }

    /// Recomputes `x_0` from the recorded coefficients and ε-predictions.
    pub fn replay(&self) -> Vec<f64> {
        let mut x = self.noise.initial().to_vec();
        for t in (1..=self.steps()).rev() {
            let c = self.coefficients(t);
            x = combine(c, &x, &self.eps[t - 1], self.noise.step_noise(t));
        }
        x
    }
}

fn combine(c: StepCoefficients, x: &[f64], eps: &[f64], z: &[f64]) -> Vec<f64> {
    x.iter().zip(eps).zip(z).map(|((xi, ei), zi)| c.a * xi + c.b * ei + c.sigma * zi).collect()
}

/// A differentiable map from a flat noise vector to a sample.
///
/// The DDIM [`Sampler`] is the production implementation; tests plug in
/// simpler maps to check estimators against closed forms.
pub trait SamplingMap: Sync {
    type Tape: Send;

    fn noise_dim(&self) -> usize;

    fn sample_dim(&self) -> usize;

    fn sample(&self, z: &[f64]) -> Result<Vec<f64>>;

    fn sample_with_tape(&self, z: &[f64]) -> Result<(Vec<f64>, Self::Tape)>;

    /// `(∂ sample/∂z)ᵀ · cotangent`, flattened like `z`.
    fn pullback(&self, tape: &Self::Tape, cotangent: &[f64]) -> Result<Vec<f64>>;
}

/// DDIM sampler over an ε-model and schedule.
#[derive(Clone, Debug)]
pub struct Sampler<M = MixtureModel> {
    model: M,
    schedule: NoiseSchedule,
    eta: f64,
}

impl<M: EpsilonModel> Sampler<M> {
    pub fn new(model: M, schedule: NoiseSchedule, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(DnoError::Config(format!("eta {eta} outside [0, 1]")));
        }
        Ok(Self { model, schedule, eta })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }

    /// Same model and schedule with a different η.
    pub fn with_eta(&self, eta: f64) -> Result<Self>
    where
        M: Clone,
    {
        Self::new(self.model.clone(), self.schedule.clone(), eta)
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(DnoError::Index { index: t, min: 1, max: self.steps() });
        }
        Ok(())
    }

    pub fn sigma_t(&self, t: usize) -> Result<f64> {
        self.sigma_with_eta(t, self.eta)
    }

    pub fn sigma_with_eta(&self, t: usize, eta: f64) -> Result<f64> {
        self.check_step(t)?;
        let ab = self.schedule.alpha_bars();
        let (cur, prev) = (ab[t], ab[t - 1]);
        Ok(eta * ((1.0 - prev) / (1.0 - cur)).sqrt() * (1.0 - cur / prev).sqrt())
    }

    /// `√(1 − ᾱ_{t-1} − σ²)`, clamping rounding-level negatives to zero.
    fn residual_scale(&self, t: usize, sigma: f64) -> Result<f64> {
        let prev = self.schedule.alpha_bars()[t - 1];
        let arg = 1.0 - prev - sigma * sigma;
        if arg >= 0.0 {
            Ok(arg.sqrt())
        } else if arg >= -SQRT_CLAMP_TOL {
            log::warn!("step {t}: clamping 1 - alpha_bar_prev - sigma^2 = {arg:e} to zero");
            Ok(0.0)
        } else {
            Err(DnoError::NumericDomain(format!("step {t}: 1 - alpha_bar_prev - sigma^2 = {arg:e} < 0")))
        }
    }

    pub fn coefficients(&self, t: usize) -> Result<StepCoefficients> {
        let sigma = self.sigma_t(t)?;
        let ab = self.schedule.alpha_bars();
        let (cur, prev) = (ab[t], ab[t - 1]);
        let a = (prev / cur).sqrt();
        let b = -((prev * (1.0 - cur) / cur).sqrt() - self.residual_scale(t, sigma)?);
        Ok(StepCoefficients { a, b, sigma })
    }

    pub fn ddim_step(&self, x_t: &[f64], t: usize, z_t: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x_t.len())?;
        check_dim(self.dim(), z_t.len())?;
        let c = self.coefficients(t)?;
        let eps = self.model.epsilon(self.schedule.alpha_bars()[t], x_t);
        Ok(combine(c, x_t, &eps, z_t))
    }

    fn check_bundle(&self, noise: &NoiseBundle) -> Result<()> {
        if noise.dim() != self.dim() || noise.steps() != self.steps() {
            return Err(DnoError::Contract(format!(
                "noise bundle is {}x{}, sampler expects dim {} with {} steps",
                noise.dim(),
                noise.steps(),
                self.dim(),
                self.steps()
            )));
        }
        Ok(())
    }

    /// Runs `t = T..1` and returns `x_0` with the recorded tape.
    pub fn run_sampler(&self, noise: &NoiseBundle) -> Result<(Vec<f64>, ForwardTape)> {
        self.check_bundle(noise)?;
        let steps = self.steps();
        let mut states = vec![Vec::new(); steps + 1];
        let mut eps = vec![Vec::new(); steps];
        let mut coefficients = Vec::with_capacity(steps);
        let coefs: Vec<StepCoefficients> = (1..=steps).map(|t| self.coefficients(t)).collect::<Result<_>>()?;

        let mut x = noise.initial().to_vec();
        for t in (1..=steps).rev() {
            let c = coefs[t - 1];
            let e = self.model.epsilon(self.schedule.alpha_bars()[t], &x);
            let next = combine(c, &x, &e, noise.step_noise(t));
            states[t] = std::mem::replace(&mut x, next);
            eps[t - 1] = e;
        }
        states[0] = x.clone();
        coefficients.extend(coefs);
        let tape = ForwardTape { eta: self.eta, dim: self.dim(), states, eps, coefficients, noise: noise.clone() };
        Ok((x, tape))
    }

    /// `x_0` only, without recording a tape.
    pub fn sample_bundle(&self, noise: &NoiseBundle) -> Result<Vec<f64>> {
        self.check_bundle(noise)?;
        let mut x = noise.initial().to_vec();
        for t in (1..=self.steps()).rev() {
            let c = self.coefficients(t)?;
            let e = self.model.epsilon(self.schedule.alpha_bars()[t], &x);
            x = combine(c, &x, &e, noise.step_noise(t));
        }
        Ok(x)
    }

    /// Step noises that make the η=1 sampler retrace the η=0 trajectory from `x_T`.
    ///
    /// `z_t = (√(1−ᾱ_{t-1}) − √(1−ᾱ_{t-1}−σ_t²))/σ_t · ε(x_t, t)` with σ_t at η=1.
    /// Where σ_t = 0 (the final step, since ᾱ_0 = 1) the noise has no effect on
    /// the sample and the ratio's continuous extension, 0, is emitted.
    pub fn ode_equivalent_noise(&self, x_t: &[f64]) -> Result<NoiseBundle>
    where
        M: Clone,
    {
        check_dim(self.dim(), x_t.len())?;
        let ode = self.with_eta(0.0)?;
        let steps = self.steps();
        let mut noises = vec![vec![0.0; self.dim()]; steps];
        let mut x = x_t.to_vec();
        for t in (1..=steps).rev() {
            let sigma = self.sigma_with_eta(t, 1.0)?;
            let prev = self.schedule.alpha_bars()[t - 1];
            let e = self.model.epsilon(self.schedule.alpha_bars()[t], &x);
            if sigma > 0.0 {
                let arg = 1.0 - prev - sigma * sigma;
                if arg < -SQRT_CLAMP_TOL {
                    return Err(DnoError::NumericDomain(format!("step {t}: negative residual variance {arg:e}")));
                }
                let ratio = ((1.0 - prev).sqrt() - arg.max(0.0).sqrt()) / sigma;
                noises[steps - t] = e.iter().map(|v| ratio * v).collect();
            }
            let c = ode.coefficients(t)?;
            x = x.iter().zip(&e).map(|(xi, ei)| c.a * xi + c.b * ei).collect();
        }
        NoiseBundle::from_parts(x_t, &noises)
    }

    /// Backward pass: `(∂x_0/∂noise)ᵀ · cotangent`.
    pub fn sampler_vjp(&self, tape: &ForwardTape, cotangent: &[f64]) -> Result<NoiseBundle> {
        if tape.eta != self.eta || tape.dim != self.dim() || tape.steps() != self.steps() {
            return Err(DnoError::Contract("tape was not recorded by this sampler configuration".into()));
        }
        check_dim(self.dim(), cotangent.len())?;
        let steps = self.steps();
        let mut grad = NoiseBundle::zeros(self.dim(), steps);
        // v holds ∂L/∂x_{t-1} entering step t.
        let mut v = cotangent.to_vec();
        for t in 1..=steps {
            let c = tape.coefficients(t);
            for (g, vi) in grad.step_noise_mut(t).iter_mut().zip(&v) {
                *g = c.sigma * vi;
            }
            let jv = self.model.epsilon_vjp(self.schedule.alpha_bars()[t], tape.state(t), &v);
            v = v.iter().zip(&jv).map(|(vi, ji)| c.a * vi + c.b * ji).collect();
        }
        grad.initial_mut().copy_from_slice(&v);
        Ok(grad)
    }
}

impl<M: EpsilonModel> SamplingMap for Sampler<M> {
    type Tape = ForwardTape;

    fn noise_dim(&self) -> usize {
        (self.steps() + 1) * self.dim()
    }

    fn sample_dim(&self) -> usize {
        self.dim()
    }

    fn sample(&self, z: &[f64]) -> Result<Vec<f64>> {
        let bundle = NoiseBundle::from_flat(self.dim(), self.steps(), z.to_vec())?;
        self.sample_bundle(&bundle)
    }

    fn sample_with_tape(&self, z: &[f64]) -> Result<(Vec<f64>, ForwardTape)> {
        let bundle = NoiseBundle::from_flat(self.dim(), self.steps(), z.to_vec())?;
        self.run_sampler(&bundle)
    }

    fn pullback(&self, tape: &ForwardTape, cotangent: &[f64]) -> Result<Vec<f64>> {
        Ok(self.sampler_vjp(tape, cotangent)?.into_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy_models::{make_model, ZeroEpsilon};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ring_sampler(steps: usize, eta: f64) -> Sampler {
        Sampler::new(make_model("ring").unwrap(), NoiseSchedule::standard(steps).unwrap(), eta).unwrap()
    }

    #[test]
    fn sigma_examples() {
        let s = ring_sampler(10, 0.0);
        for t in 1..=10 {
            assert_eq!(s.sigma_t(t).unwrap(), 0.0);
        }
        let one = Sampler::new(ZeroEpsilon { dim: 2 }, NoiseSchedule::build(1, 1, 0.5, 0.5).unwrap(), 1.0).unwrap();
        assert_eq!(one.sigma_t(1).unwrap(), 0.0);

        let full = ring_sampler(10, 1.0);
        let half = ring_sampler(10, 0.5);
        for t in 1..=10 {
            assert_eq!(half.sigma_t(t).unwrap(), 0.5 * full.sigma_t(t).unwrap());
            assert!(full.sigma_t(t).unwrap() >= 0.0);
        }
        assert!(matches!(full.sigma_t(0), Err(DnoError::Index { .. })));
        assert!(matches!(full.sigma_t(11), Err(DnoError::Index { .. })));
    }

    #[test]
    fn rejects_eta_outside_unit_interval() {
        let sched = NoiseSchedule::standard(5).unwrap();
        assert!(Sampler::new(ZeroEpsilon { dim: 2 }, sched.clone(), 1.5).is_err());
        assert!(Sampler::new(ZeroEpsilon { dim: 2 }, sched, -0.1).is_err());
    }

    #[test]
    fn zero_epsilon_ode_step_is_rescaling() {
        let s = Sampler::new(ZeroEpsilon { dim: 2 }, NoiseSchedule::standard(10).unwrap(), 0.0).unwrap();
        let ab = s.schedule().alpha_bars();
        let x = [0.7, -1.2];
        for t in 1..=10 {
            let out = s.ddim_step(&x, t, &[5.0, 5.0]).unwrap();
            let k = (ab[t - 1] / ab[t]).sqrt();
            assert_eq!(out, vec![k * 0.7, k * -1.2]);
        }
    }

    #[test]
    fn ode_step_ignores_step_noise() {
        let s = ring_sampler(10, 0.0);
        let x = [0.3, 0.5];
        assert_eq!(s.ddim_step(&x, 4, &[0.0, 0.0]).unwrap(), s.ddim_step(&x, 4, &[3.0, -2.0]).unwrap());
    }

    /// Scalar transcription of the update, written independently of `combine`.
    fn reference_step(ab: &[f64], eta: f64, x: f64, eps: f64, z: f64, t: usize) -> f64 {
        let at = ab[t];
        let ap = ab[t - 1];
        let sigma = eta * ((1.0 - ap) / (1.0 - at)).sqrt() * (1.0 - at / ap).sqrt();
        let inner = (1.0 - ap - sigma.powi(2)).max(0.0);
        (ap / at).sqrt() * x - ((ap * (1.0 - at) / at).sqrt() - inner.sqrt()) * eps + sigma * z
    }

    #[test]
    fn step_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &eta in &[0.0, 0.3, 1.0] {
            let s = ring_sampler(20, eta);
            let ab = s.schedule().alpha_bars().to_vec();
            for _ in 0..50 {
                let t = rng.random_range(1..=20);
                let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                let z = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                let eps = s.model().epsilon_pred(s.schedule(), &x, t).unwrap();
                let out = s.ddim_step(&x, t, &z).unwrap();
                for i in 0..2 {
                    let r = reference_step(&ab, eta, x[i], eps[i], z[i], t);
                    assert!((out[i] - r).abs() <= 1e-12 * r.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn ode_output_ignores_step_noises() {
        let s = ring_sampler(20, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = NoiseBundle::standard_normal(2, 20, &mut rng);
        let mut b = NoiseBundle::standard_normal(2, 20, &mut rng);
        b.initial_mut().copy_from_slice(a.initial());
        assert_eq!(s.run_sampler(&a).unwrap().0, s.run_sampler(&b).unwrap().0);
    }

    #[test]
    fn tape_replay_is_bit_exact_and_pure() {
        let s = ring_sampler(50, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = NoiseBundle::standard_normal(2, 50, &mut rng);
        let (x0, tape) = s.run_sampler(&z).unwrap();
        assert_eq!(tape.replay(), x0);
        assert_eq!(tape.state(0), x0.as_slice());
        assert_eq!(s.run_sampler(&z).unwrap().0, x0);
        assert_eq!(s.sample_bundle(&z).unwrap(), x0);
    }

    #[test]
    fn bundle_layout() {
        let data: Vec<f64> = (0..8).map(f64::from).collect();
        let b = NoiseBundle::from_flat(2, 3, data).unwrap();
        assert_eq!(b.initial(), &[0.0, 1.0]);
        assert_eq!(b.step_noise(3), &[2.0, 3.0]);
        assert_eq!(b.step_noise(1), &[6.0, 7.0]);
        let rebuilt = NoiseBundle::from_parts(
            b.initial(),
            &[b.step_noise(3).to_vec(), b.step_noise(2).to_vec(), b.step_noise(1).to_vec()],
        )
        .unwrap();
        assert_eq!(rebuilt, b);
        assert!(NoiseBundle::from_flat(2, 3, vec![0.0; 7]).is_err());
    }

    #[test]
    fn mismatched_bundle_is_rejected() {
        let s = ring_sampler(10, 1.0);
        assert!(matches!(s.run_sampler(&NoiseBundle::zeros(2, 9)), Err(DnoError::Contract(_))));
    }

    #[test]
    fn ode_equivalent_noise_reproduces_ode_sample() {
        let sde = ring_sampler(50, 1.0);
        let ode = ring_sampler(50, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let xt = rng::standard_normal_vec(&mut rng, 2);
            let bundle = sde.ode_equivalent_noise(&xt).unwrap();
            assert_eq!(bundle, sde.ode_equivalent_noise(&xt).unwrap());
            let a = sde.run_sampler(&bundle).unwrap().0;
            let b = ode.run_sampler(&NoiseBundle::from_parts(&xt, &vec![vec![0.0; 2]; 50]).unwrap()).unwrap().0;
            for i in 0..2 {
                assert!((a[i] - b[i]).abs() < 1e-9, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn ode_equivalent_noise_vanishes_for_zero_epsilon() {
        let s = Sampler::new(ZeroEpsilon { dim: 2 }, NoiseSchedule::standard(10).unwrap(), 1.0).unwrap();
        let b = s.ode_equivalent_noise(&[0.4, 0.1]).unwrap();
        assert!((1..=10).all(|t| b.step_noise(t).iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn vjp_examples() {
        let s = ring_sampler(10, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = NoiseBundle::standard_normal(2, 10, &mut rng);
        let (_, tape) = s.run_sampler(&z).unwrap();
        let g = s.sampler_vjp(&tape, &[0.0, 0.0]).unwrap();
        assert!(g.as_slice().iter().all(|v| *v == 0.0));

        let stub = Sampler::new(ZeroEpsilon { dim: 2 }, NoiseSchedule::standard(10).unwrap(), 0.0).unwrap();
        let (_, tape) = stub.run_sampler(&z).unwrap();
        let g = stub.sampler_vjp(&tape, &[1.0, -2.0]).unwrap();
        let c = 1.0 / stub.schedule().alpha_bar(10).unwrap().sqrt();
        assert!((g.initial()[0] - c).abs() < 1e-9 * c);
        assert!((g.initial()[1] + 2.0 * c).abs() < 1e-9 * c);

        let other = ring_sampler(10, 1.0);
        assert!(matches!(other.sampler_vjp(&tape, &[1.0, 0.0]), Err(DnoError::Contract(_))));
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for &eta in &[0.0, 1.0] {
            let s = ring_sampler(10, eta);
            for _ in 0..5 {
                let z = NoiseBundle::standard_normal(2, 10, &mut rng);
                let cot = rng::standard_normal_vec(&mut rng, 2);
                let (_, tape) = s.run_sampler(&z).unwrap();
                let g = s.sampler_vjp(&tape, &cot).unwrap();
                let h = 1e-6;
                for i in 0..z.len() {
                    let mut zp = z.clone();
                    let mut zm = z.clone();
                    zp.as_mut_slice()[i] += h;
                    zm.as_mut_slice()[i] -= h;
                    let fp = crate::dot(&s.sample_bundle(&zp).unwrap(), &cot);
                    let fm = crate::dot(&s.sample_bundle(&zm).unwrap(), &cot);
                    let fd = (fp - fm) / (2.0 * h);
                    let an = g.as_slice()[i];
                    assert!((fd - an).abs() <= 1e-4 * an.abs() + 1e-6, "coord {i}: fd {fd} vs {an}");
                }
            }
        }
    }
}
