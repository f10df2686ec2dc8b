//! JSON experiment configuration.
//!
//! One file fully determines a run. Every block except `reward` has
//! defaults, and unknown fields are rejected.
//!
//! ```json
//! {
//!   "name": "fig2",
//!   "experiment": "dno",
//!   "model": { "kind": "ring" },
//!   "sampler": { "steps": 50, "eta": 1.0 },
//!   "reward": { "name": "example1" },
//!   "optimizer": { "stepper": "ga", "learning_rate": 0.01, "steps": 100 },
//!   "seeds": { "count": 64, "base": 0 }
//! }
//! ```

use std::path::{Path, PathBuf};

use dno_core::optimizer::{AdamParams, DnoConfig, GradientSource, Stepper, DEFAULT_STATIONARITY_TOL};
use dno_core::probreg::Factorization;
use dno_core::toy_models::ModelPreset;
use dno_core::zo_grad::ZoConfig;
use dno_core::{MixtureModel, NoiseSchedule, RewardSpec, Sampler, SamplingMap};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// A single optimization arm.
    Dno,
    /// The same runs with η = 0 and η = 1.
    OdeVsSde,
    /// The same runs without and with probability regularization.
    RewardHacking,
    /// ZO-SGD, Hybrid-1 and Hybrid-2 on a gradient-hidden reward.
    Estimators,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Dno => "dno",
            ExperimentKind::OdeVsSde => "ode_vs_sde",
            ExperimentKind::RewardHacking => "reward_hacking",
            ExperimentKind::Estimators => "estimators",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerBlock {
    #[serde(default = "default_sampler_steps")]
    pub steps: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_sampler_steps() -> usize {
    50
}

fn default_eta() -> f64 {
    1.0
}

impl Default for SamplerBlock {
    fn default() -> Self {
        Self { steps: default_sampler_steps(), eta: default_eta() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerBlock {
    #[serde(default = "default_stepper")]
    pub stepper: Stepper,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_opt_steps")]
    pub steps: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub reg_enabled: bool,
    #[serde(default)]
    pub adam: AdamParams,
}

fn default_stepper() -> Stepper {
    Stepper::Adam
}

fn default_lr() -> f64 {
    0.01
}

fn default_opt_steps() -> usize {
    100
}

fn default_gamma() -> f64 {
    1.0
}

impl Default for OptimizerBlock {
    fn default() -> Self {
        Self {
            stepper: default_stepper(),
            learning_rate: default_lr(),
            steps: default_opt_steps(),
            gamma: default_gamma(),
            reg_enabled: false,
            adam: AdamParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbregBlock {
    #[serde(default = "default_k")]
    pub k: usize,
    /// Permutations in the fixed set used to report `P(z)`.
    #[serde(default = "default_perms")]
    pub q: usize,
    /// Fresh permutations per step for the regularizer gradient.
    #[serde(default = "default_perms")]
    pub b: usize,
}

fn default_k() -> usize {
    2
}

fn default_perms() -> usize {
    100
}

impl Default for ProbregBlock {
    fn default() -> Self {
        Self { k: default_k(), q: default_perms(), b: default_perms() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub mu: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    #[serde(default = "default_zo_budget")]
    pub zo_sgd: Budget,
    #[serde(default = "default_hybrid1_budget")]
    pub hybrid1: Budget,
    #[serde(default = "default_hybrid2_budget")]
    pub hybrid2: Budget,
}

fn default_zo_budget() -> Budget {
    Budget { mu: 0.01, samples: 16 }
}

fn default_hybrid1_budget() -> Budget {
    Budget { mu: 0.01, samples: 16 }
}

fn default_hybrid2_budget() -> Budget {
    Budget { mu: 0.02, samples: 8 }
}

impl Default for Budgets {
    fn default() -> Self {
        Self { zo_sgd: default_zo_budget(), hybrid1: default_hybrid1_budget(), hybrid2: default_hybrid2_budget() }
    }
}

impl Budgets {
    pub fn get(&self, source: GradientSource) -> Option<Budget> {
        match source {
            GradientSource::Exact => None,
            GradientSource::ZoSgd => Some(self.zo_sgd),
            GradientSource::Hybrid1 => Some(self.hybrid1),
            GradientSource::Hybrid2 => Some(self.hybrid2),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoBlock {
    /// Gradient source of the `dno`, `reward_hacking`, `ode_vs_sde` and sweep arms.
    #[serde(default = "default_estimator")]
    pub estimator: GradientSource,
    /// Overrides the budget of `estimator`.
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default = "default_true")]
    pub normalize_by_mu: bool,
    /// Per-estimator `(mu, samples)` used by the `estimators` experiment.
    #[serde(default)]
    pub budgets: Budgets,
}

fn default_estimator() -> GradientSource {
    GradientSource::Exact
}

fn default_true() -> bool {
    true
}

impl Default for ZoBlock {
    fn default() -> Self {
        Self {
            estimator: default_estimator(),
            mu: None,
            samples: None,
            normalize_by_mu: true,
            budgets: Budgets::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedBlock {
    #[serde(default = "default_seed_count")]
    pub count: usize,
    #[serde(default)]
    pub base: u64,
}

fn default_seed_count() -> usize {
    16
}

impl Default for SeedBlock {
    fn default() -> Self {
        Self { count: default_seed_count(), base: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default = "default_sweep_k")]
    pub k: Vec<usize>,
    #[serde(default = "default_sweep_b")]
    pub b: Vec<usize>,
    #[serde(default = "default_sweep_gamma")]
    pub gamma: Vec<f64>,
}

fn default_sweep_k() -> Vec<usize> {
    vec![1, 2, 3, 6]
}

fn default_sweep_b() -> Vec<usize> {
    vec![100]
}

fn default_sweep_gamma() -> Vec<f64> {
    vec![1.0]
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self { k: default_sweep_k(), b: default_sweep_b(), gamma: default_sweep_gamma() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarityBlock {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    DEFAULT_STATIONARITY_TOL
}

impl Default for StationarityBlock {
    fn default() -> Self {
        Self { tolerance: default_tolerance() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

fn default_model() -> ModelPreset {
    ModelPreset::by_name("ring").expect("ring preset")
}

fn default_experiment() -> ExperimentKind {
    ExperimentKind::Dno
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output sub-directory name; defaults to the experiment kind.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_experiment")]
    pub experiment: ExperimentKind,
    #[serde(default = "default_model")]
    pub model: ModelPreset,
    #[serde(default)]
    pub sampler: SamplerBlock,
    pub reward: RewardSpec,
    #[serde(default)]
    pub optimizer: OptimizerBlock,
    #[serde(default)]
    pub probreg: ProbregBlock,
    #[serde(default)]
    pub zo: ZoBlock,
    #[serde(default)]
    pub seeds: SeedBlock,
    #[serde(default)]
    pub sweep: SweepBlock,
    #[serde(default)]
    pub stationarity: StationarityBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// A fully validated optimization arm.
#[derive(Clone, Debug)]
pub struct Arm {
    pub label: String,
    pub sampler: Sampler,
    pub config: DnoConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.experiment.name().to_string())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds.count as u64).map(|i| self.seeds.base + i).collect()
    }

    pub fn build_model(&self) -> Result<MixtureModel, CliError> {
        Ok(self.model.build()?)
    }

    pub fn build_sampler(&self, eta: f64) -> Result<Sampler, CliError> {
        let schedule = NoiseSchedule::standard(self.sampler.steps)?;
        Ok(Sampler::new(self.build_model()?, schedule, eta)?)
    }

    /// Optimizer settings shared by every arm, with the configured gradient source.
    pub fn base_dno(&self) -> Result<DnoConfig, CliError> {
        let mut reward = self.reward.clone();
        let mut zo = ZoConfig::new(0.01, 1, 0);
        zo.normalize_by_mu = self.zo.normalize_by_mu;
        if let Some(budget) = self.zo.budgets.get(self.zo.estimator) {
            zo.mu = self.zo.mu.unwrap_or(budget.mu);
            zo.samples = self.zo.samples.unwrap_or(budget.samples);
            reward.hidden = true;
        }
        Ok(DnoConfig {
            reward,
            steps: self.optimizer.steps,
            stepper: self.optimizer.stepper,
            learning_rate: self.optimizer.learning_rate,
            gamma: self.optimizer.gamma,
            reg_enabled: self.optimizer.reg_enabled,
            k: self.probreg.k,
            perm_batch: self.probreg.b,
            indicator_perms: self.probreg.q,
            gradient_source: self.zo.estimator,
            zo,
            adam: self.optimizer.adam,
            seed: self.seeds.base,
        })
    }

    fn check_arm(&self, arm: &Arm) -> Result<(), CliError> {
        arm.config.validate()?;
        let n = arm.sampler.noise_dim();
        Factorization::new(n, arm.config.k)?;
        if arm.config.reward.arity() != arm.sampler.sample_dim() {
            return Err(CliError::Config(format!(
                "reward `{}` expects dimension {} but the model has dimension {}",
                arm.config.reward.name(),
                arm.config.reward.arity(),
                arm.sampler.sample_dim()
            )));
        }
        Ok(())
    }

    fn validate_common(&self) -> Result<(), CliError> {
        if self.seeds.count == 0 {
            return Err(CliError::Config("seeds.count must be at least 1".into()));
        }
        if let Some(name) = &self.name {
            if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
                return Err(CliError::Config(format!("invalid experiment name `{name}`")));
            }
        }
        Ok(())
    }

    /// The arms of a `run` experiment, validated.
    pub fn arms(&self) -> Result<Vec<Arm>, CliError> {
        self.validate_common()?;
        let base = self.base_dno()?;
        let arms = match self.experiment {
            ExperimentKind::Dno => {
                vec![Arm { label: "dno".into(), sampler: self.build_sampler(self.sampler.eta)?, config: base }]
            }
            ExperimentKind::OdeVsSde => vec![
                Arm { label: "eta=0".into(), sampler: self.build_sampler(0.0)?, config: base.clone() },
                Arm { label: "eta=1".into(), sampler: self.build_sampler(1.0)?, config: base },
            ],
            ExperimentKind::RewardHacking => {
                let sampler = self.build_sampler(self.sampler.eta)?;
                vec![
                    Arm {
                        label: "no_reg".into(),
                        sampler: sampler.clone(),
                        config: DnoConfig { reg_enabled: false, ..base.clone() },
                    },
                    Arm { label: "reg".into(), sampler, config: DnoConfig { reg_enabled: true, ..base } },
                ]
            }
            ExperimentKind::Estimators => {
                let sampler = self.build_sampler(self.sampler.eta)?;
                [GradientSource::ZoSgd, GradientSource::Hybrid1, GradientSource::Hybrid2]
                    .into_iter()
                    .map(|source| {
                        let budget = self.zo.budgets.get(source).expect("estimator budget");
                        let zo = ZoConfig {
                            mu: budget.mu,
                            samples: budget.samples,
                            normalize_by_mu: self.zo.normalize_by_mu,
                            seed: 0,
                        };
                        let reward = base.reward.clone().hidden();
                        Arm {
                            label: source.name().into(),
                            sampler: sampler.clone(),
                            config: DnoConfig { reward, gradient_source: source, zo, ..base.clone() },
                        }
                    })
                    .collect()
            }
        };
        for arm in &arms {
            self.check_arm(arm)?;
        }
        Ok(arms)
    }

    /// One regularized arm per `(k, b, γ)` grid point, validated.
    pub fn sweep_arms(&self) -> Result<Vec<Arm>, CliError> {
        self.validate_common()?;
        if self.sweep.k.is_empty() || self.sweep.b.is_empty() || self.sweep.gamma.is_empty() {
            return Err(CliError::Config("sweep lists must be non-empty".into()));
        }
        let sampler = self.build_sampler(self.sampler.eta)?;
        let base = self.base_dno()?;
        let mut arms = Vec::new();
        for &k in &self.sweep.k {
            for &b in &self.sweep.b {
                for &gamma in &self.sweep.gamma {
                    let arm = Arm {
                        label: format!("k={k};b={b};gamma={gamma}"),
                        sampler: sampler.clone(),
                        config: DnoConfig { k, perm_batch: b, gamma, reg_enabled: true, ..base.clone() },
                    };
                    self.check_arm(&arm)?;
                    arms.push(arm);
                }
            }
        }
        Ok(arms)
    }

    /// The single arm classified by the `stationarity` command, validated.
    pub fn stationarity_arm(&self) -> Result<Arm, CliError> {
        self.validate_common()?;
        if self.reward.hidden || self.zo.estimator != GradientSource::Exact {
            return Err(CliError::Config("stationarity classification needs a differentiable reward".into()));
        }
        if self.stationarity.tolerance.is_nan() || self.stationarity.tolerance <= 0.0 {
            return Err(CliError::Config("stationarity.tolerance must be positive".into()));
        }
        let arm = Arm { label: "dno".into(), sampler: self.build_sampler(self.sampler.eta)?, config: self.base_dno()? };
        self.check_arm(&arm)?;
        Ok(arm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"reward": {"name": "example1"}}"#).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Dno);
        assert_eq!(cfg.sampler.steps, 50);
        assert_eq!(cfg.optimizer.learning_rate, 0.01);
        assert_eq!(cfg.probreg.b, 100);
        assert_eq!(cfg.zo.budgets.hybrid2, Budget { mu: 0.02, samples: 8 });
        assert_eq!(cfg.name(), "dno");
        let arms = cfg.arms().unwrap();
        assert_eq!(arms.len(), 1);
        assert_eq!(arms[0].sampler.noise_dim(), 102);
    }

    #[test]
    fn missing_or_unknown_reward_is_a_config_error() {
        assert!(matches!(ExperimentConfig::from_json(r#"{"experiment": "dno"}"#), Err(CliError::Config(_))));
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"reward": {"name": "aesthetic"}}"#),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"reward": {"name": "example1"}, "typo": 1}"#),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn model_presets_parse() {
        let cfg = ExperimentConfig::from_json(
            r#"{"reward": {"name": "line_height"}, "model": {"kind": "segment", "variance": 0.0025}}"#,
        )
        .unwrap();
        assert_eq!(cfg.build_model().unwrap().components().len(), 21);
        let bad = ExperimentConfig::from_json(r#"{"reward": {"name": "example1"}, "model": {"kind": "torus"}}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn semantic_validation() {
        let bad_k = ExperimentConfig::from_json(r#"{"reward": {"name": "example1"}, "probreg": {"k": 4}}"#).unwrap();
        assert!(matches!(bad_k.arms(), Err(CliError::Config(_))));
        let bad_dim = ExperimentConfig::from_json(r#"{"reward": {"name": "brightness", "dim": 3}}"#).unwrap();
        assert!(matches!(bad_dim.arms(), Err(CliError::Config(_))));
        let hidden_exact = ExperimentConfig::from_json(r#"{"reward": {"name": "example1", "hidden": true}}"#).unwrap();
        assert!(matches!(hidden_exact.arms(), Err(CliError::Config(_))));
        let zero_seeds =
            ExperimentConfig::from_json(r#"{"reward": {"name": "example1"}, "seeds": {"count": 0}}"#).unwrap();
        assert!(zero_seeds.arms().is_err());
    }

    #[test]
    fn estimator_arms_hide_the_reward() {
        let cfg =
            ExperimentConfig::from_json(r#"{"experiment": "estimators", "reward": {"name": "example1"}}"#).unwrap();
        let arms = cfg.arms().unwrap();
        let labels: Vec<_> = arms.iter().map(|a| a.label.as_str()).collect();
        assert_eq!(labels, ["zo_sgd", "hybrid1", "hybrid2"]);
        assert!(arms.iter().all(|a| a.config.reward.hidden));
        assert_eq!(arms[2].config.zo.samples, 8);
    }

    #[test]
    fn sweep_rejects_non_divisor_k() {
        let cfg = ExperimentConfig::from_json(r#"{"reward": {"name": "quad_ood"}, "sweep": {"k": [2, 10]}}"#).unwrap();
        assert!(matches!(cfg.sweep_arms(), Err(CliError::Config(_))));
        let ok = ExperimentConfig::from_json(r#"{"reward": {"name": "quad_ood"}}"#).unwrap();
        assert_eq!(ok.sweep_arms().unwrap().len(), 4);
    }
}
