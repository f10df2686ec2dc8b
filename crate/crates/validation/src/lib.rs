//! Acceptance checks for the direct noise optimization toolkit.
//!
//! Each criterion runs a fixed, seeded protocol and returns a [`Verdict`]
//! with the measured quantities. `tests/acceptance.rs` runs all of them and
//! prints one PASS/FAIL line per criterion.

pub mod concentration;
pub mod estimators;
pub mod gradients;
pub mod optimization;
pub mod reproducibility;
pub mod stats;

use dno_core::toy_models::make_model;
use dno_core::{NoiseSchedule, Sampler};

/// Outcome of one criterion.
#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }

    /// A protocol that could not be carried out.
    pub fn error(e: impl std::fmt::Display) -> Self {
        Self { pass: false, detail: format!("error: {e}") }
    }
}

pub struct Criterion {
    pub id: &'static str,
    pub title: &'static str,
    pub run: fn() -> Verdict,
}

/// All criteria in order.
pub fn criteria() -> Vec<Criterion> {
    vec![
        Criterion { id: "c01", title: "gradient correctness", run: gradients::c01_gradient_correctness },
        Criterion { id: "c02", title: "monotone ascent at l <= 1/L", run: optimization::c02_monotone_ascent },
        Criterion { id: "c03", title: "stochastic sampler >= deterministic", run: optimization::c03_sde_vs_ode },
        Criterion { id: "c04", title: "concentration bounds hold", run: concentration::c04_concentration_validity },
        Criterion { id: "c05", title: "P(z) discrimination", run: concentration::c05_pz_discrimination },
        Criterion { id: "c06", title: "OOD reward hacking and mitigation", run: optimization::c06_reward_hacking },
        Criterion { id: "c07", title: "estimator quality", run: estimators::c07_estimator_quality },
        Criterion { id: "c08", title: "matched-budget estimator ordering", run: estimators::c08_matched_budget },
        Criterion { id: "c09", title: "stationarity taxonomy", run: optimization::c09_stationarity },
        Criterion { id: "c10", title: "ODE/SDE noise equivalence", run: gradients::c10_ode_sde_equivalence },
        Criterion { id: "c11", title: "byte-identical reruns", run: reproducibility::c11_reproducibility },
    ]
}

/// Default ring model (16 components, radius 1, variance 0.01) under the
/// standard schedule with `steps` sampling steps.
pub fn ring_sampler(steps: usize, eta: f64) -> dno_core::Result<Sampler> {
    Sampler::new(make_model("ring")?, NoiseSchedule::standard(steps)?, eta)
}
