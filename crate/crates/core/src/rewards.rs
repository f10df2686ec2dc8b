//! Toy reward functions.
//!
//! Every built-in is defined on all of `R^d` and has an analytic gradient. A
//! spec can be marked `hidden`, in which case [`RewardSpec::grad`] refuses to
//! answer and callers must fall back to the estimators in [`crate::zo_grad`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DnoError, Result};

fn default_center() -> Vec<f64> {
    vec![1.4, 1.4]
}

fn default_dim() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum RewardKind {
    /// `sin(4πx₁) + sin(4πx₂) − ((x₁−1)² − x₂²)/5`, a non-convex landscape with
    /// many local maxima. `summed_penalty` switches the penalty to
    /// `((x₁−1)² + x₂²)/5`.
    Example1 {
        #[serde(default)]
        summed_penalty: bool,
    },
    /// `−‖x − center‖²`, maximised away from the ring data.
    QuadOod {
        #[serde(default = "default_center")]
        center: Vec<f64>,
    },
    /// Mean of the coordinates.
    Brightness {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// Negative mean of the coordinates.
    Darkness {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// `r(x, y) = y`.
    LineHeight,
    Linear {
        coefficients: Vec<f64>,
    },
    Constant {
        #[serde(default)]
        value: f64,
        #[serde(default = "default_dim")]
        dim: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    #[serde(flatten)]
    pub kind: RewardKind,
    /// Hide the gradient to simulate a black-box reward.
    #[serde(default)]
    pub hidden: bool,
}

impl RewardSpec {
    pub fn new(kind: RewardKind) -> Self {
        Self { kind, hidden: false }
    }

    /// Same reward with its gradient hidden. Values are unchanged.
    pub fn hidden(mut self) -> Self {
        self.hidden = true;
        self
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            RewardKind::Example1 { .. } => "example1",
            RewardKind::QuadOod { .. } => "quad_ood",
            RewardKind::Brightness { .. } => "brightness",
            RewardKind::Darkness { .. } => "darkness",
            RewardKind::LineHeight => "line_height",
            RewardKind::Linear { .. } => "linear",
            RewardKind::Constant { .. } => "constant",
        }
    }

    pub fn arity(&self) -> usize {
        match &self.kind {
            RewardKind::Example1 { .. } | RewardKind::LineHeight => 2,
            RewardKind::QuadOod { center } => center.len(),
            RewardKind::Brightness { dim } | RewardKind::Darkness { dim } | RewardKind::Constant { dim, .. } => *dim,
            RewardKind::Linear { coefficients } => coefficients.len(),
        }
    }

    pub fn is_differentiable(&self) -> bool {
        !self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.arity() == 0 {
            return Err(DnoError::Config(format!("reward `{}` has zero arity", self.name())));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.arity(), x.len())?;
        let v = match &self.kind {
            RewardKind::Example1 { summed_penalty } => {
                let sign = if *summed_penalty { 1.0 } else { -1.0 };
                (4.0 * PI * x[0]).sin() + (4.0 * PI * x[1]).sin() - ((x[0] - 1.0).powi(2) + sign * x[1].powi(2)) / 5.0
            }
            RewardKind::QuadOod { center } => -x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>(),
            RewardKind::Brightness { dim } => x.iter().sum::<f64>() / *dim as f64,
            RewardKind::Darkness { dim } => -(x.iter().sum::<f64>() / *dim as f64),
            RewardKind::LineHeight => x[1],
            RewardKind::Linear { coefficients } => crate::dot(coefficients, x),
            RewardKind::Constant { value, .. } => *value,
        };
        Ok(v)
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.hidden {
            return Err(DnoError::Capability(format!("gradient of reward `{}` is hidden", self.name())));
        }
        check_dim(self.arity(), x.len())?;
        let g = match &self.kind {
            RewardKind::Example1 { summed_penalty } => {
                let sign = if *summed_penalty { 1.0 } else { -1.0 };
                vec![
                    4.0 * PI * (4.0 * PI * x[0]).cos() - 2.0 * (x[0] - 1.0) / 5.0,
                    4.0 * PI * (4.0 * PI * x[1]).cos() - sign * 2.0 * x[1] / 5.0,
                ]
            }
            RewardKind::QuadOod { center } => x.iter().zip(center).map(|(a, c)| -2.0 * (a - c)).collect(),
            RewardKind::Brightness { dim } => vec![1.0 / *dim as f64; *dim],
            RewardKind::Darkness { dim } => vec![-1.0 / *dim as f64; *dim],
            RewardKind::LineHeight => vec![0.0, 1.0],
            RewardKind::Linear { coefficients } => coefficients.clone(),
            RewardKind::Constant { dim, .. } => vec![0.0; *dim],
        };
        Ok(g)
    }
}

/// Built-in reward by name with default parameters.
pub fn make_reward(name: &str, hidden: bool) -> Result<RewardSpec> {
    let kind = match name {
        "example1" => RewardKind::Example1 { summed_penalty: false },
        "quad_ood" => RewardKind::QuadOod { center: default_center() },
        "brightness" => RewardKind::Brightness { dim: default_dim() },
        "darkness" => RewardKind::Darkness { dim: default_dim() },
        "line_height" => RewardKind::LineHeight,
        "constant" => RewardKind::Constant { value: 0.0, dim: default_dim() },
        other => return Err(DnoError::Config(format!("unknown reward `{other}`"))),
    };
    Ok(RewardSpec { kind, hidden })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_differentiable() -> Vec<RewardSpec> {
        vec![
            RewardSpec::new(RewardKind::Example1 { summed_penalty: false }),
            RewardSpec::new(RewardKind::Example1 { summed_penalty: true }),
            RewardSpec::new(RewardKind::QuadOod { center: vec![1.4, 1.4] }),
            RewardSpec::new(RewardKind::Brightness { dim: 2 }),
            RewardSpec::new(RewardKind::Darkness { dim: 2 }),
            RewardSpec::new(RewardKind::LineHeight),
            RewardSpec::new(RewardKind::Linear { coefficients: vec![0.3, -1.1] }),
            RewardSpec::new(RewardKind::Constant { value: 2.5, dim: 2 }),
        ]
    }

    #[test]
    fn value_examples() {
        let quad = make_reward("quad_ood", false).unwrap();
        assert_eq!(quad.eval(&[1.4, 1.4]).unwrap(), 0.0);
        assert_eq!(quad.grad(&[1.4, 1.4]).unwrap(), vec![0.0, 0.0]);

        let ex1 = make_reward("example1", false).unwrap();
        assert!((ex1.eval(&[0.25, 0.25]).unwrap() + 0.1).abs() < 1e-12);

        let bright = make_reward("brightness", false).unwrap();
        assert_eq!(bright.arity(), 2);
        assert_eq!(bright.eval(&[1.0, 3.0]).unwrap(), 2.0);
        let dark = make_reward("darkness", false).unwrap();
        assert_eq!(dark.eval(&[1.0, 3.0]).unwrap(), -2.0);

        let line = make_reward("line_height", false).unwrap();
        assert_eq!(line.grad(&[0.3, -7.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn dimension_mismatch_is_a_contract_violation() {
        let quad = make_reward("quad_ood", false).unwrap();
        assert!(matches!(quad.eval(&[1.0]), Err(DnoError::Dimension { .. })));
    }

    #[test]
    fn hidden_rewards_refuse_gradients_but_keep_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for spec in all_differentiable() {
            let h = spec.clone().hidden();
            assert!(!h.is_differentiable());
            assert!(matches!(h.grad(&[0.1, 0.2]), Err(DnoError::Capability(_))));
            for _ in 0..20 {
                let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                assert_eq!(h.eval(&x).unwrap().to_bits(), spec.eval(&x).unwrap().to_bits());
            }
        }
        assert!(make_reward("example1", true).unwrap().grad(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for spec in all_differentiable() {
            for _ in 0..100 {
                let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                let g = spec.grad(&x).unwrap();
                let h = 1e-6;
                for i in 0..2 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (spec.eval(&xp).unwrap() - spec.eval(&xm).unwrap()) / (2.0 * h);
                    assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "{}: {fd} vs {}", spec.name(), g[i]);
                }
            }
        }
    }

    #[test]
    fn unknown_reward_name() {
        assert!(matches!(make_reward("aesthetic", false), Err(DnoError::Config(_))));
    }
}
