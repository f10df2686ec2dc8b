//! Direct noise optimization (DNO) on analytic-score toy diffusion models.
//!
//! The crate is organised bottom-up:
//!
//! - [`toy_models`]: Gaussian-mixture data distributions with closed-form
//!   noisy marginals, scores and score Hessian-vector products.
//! - [`sampler`]: the DDIM sampling map from injected noises to a sample,
//!   with a forward tape and exact vector-Jacobian products.
//! - [`rewards`]: toy reward functions, optionally with their gradients hidden.
//! - [`probreg`]: concentration statistics of the noise vector, the
//!   permutation-ensemble indicator `P(z)` and the log-probability regularizer.
//! - [`zo_grad`]: zeroth-order and hybrid gradient estimators.
//! - [`optimizer`]: the noise-optimization loop, Adam, smoothness estimation,
//!   the monotonicity harness and the stationarity classifier.

pub mod error;
pub mod optimizer;
pub mod probreg;
pub mod rewards;
pub mod rng;
pub mod sampler;
pub mod toy_models;
pub mod zo_grad;

pub use error::{DnoError, Result};
pub use optimizer::{dno_run, DnoConfig, GradientSource, RunResult, Stepper, TrajectoryPoint};
pub use rewards::RewardSpec;
pub use sampler::{NoiseBundle, Sampler, SamplingMap};
pub use toy_models::{MixtureModel, NoiseSchedule};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
