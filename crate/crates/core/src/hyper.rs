use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What happens to a skill whose utility falls below the prune threshold
/// after enough observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Disposition {
    #[default]
    Freeze,
    Delete,
}

/// Adam settings for the value network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Every scalar knob of the retrieval and learning pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Semantic recall depth for cases.
    pub k0: usize,
    /// Cases injected per round.
    pub k: usize,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub t_decay: u64,
    /// Softmax temperature of the case policy.
    pub tau_c: f64,
    /// Per-slot probability of a uniform exploratory pick.
    pub epsilon: f64,
    /// Entropy regularization weight.
    pub beta: f64,
    /// Size of the low-fused pool negatives are drawn from.
    pub n_bottom: usize,
    /// Negatives drawn per successful episode.
    pub n_neg: usize,
    /// Skill utility learning rate.
    pub eta: f64,
    pub u_min: f64,
    pub u_prune: f64,
    pub n_min: u64,
    pub lambda_sem: f64,
    pub lambda_u: f64,
    /// Semantic recall depth for skills.
    pub k_skill_recall: usize,
    /// Skills returned after fusion.
    pub k_skill: usize,
    /// Discount factor. Rewards are terminal, so it is never applied.
    pub gamma: f64,
    pub disposition: Disposition,
    pub initial_utility: f64,
    pub optimizer: OptimizerConfig,
    pub dim: usize,
    pub hidden: Vec<usize>,
    pub p_drop: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            k0: 20,
            k: 5,
            alpha_start: 0.9,
            alpha_end: 0.35,
            t_decay: 400,
            tau_c: 0.8,
            epsilon: 0.05,
            beta: 0.03,
            n_bottom: 20,
            n_neg: 5,
            eta: 0.1,
            u_min: 0.5,
            u_prune: 0.5,
            n_min: 5,
            lambda_sem: 0.7,
            lambda_u: 0.3,
            k_skill_recall: 15,
            k_skill: 3,
            gamma: 1.0,
            disposition: Disposition::Freeze,
            initial_utility: 0.5,
            optimizer: OptimizerConfig::default(),
            dim: 64,
            hidden: vec![512, 128],
            p_drop: 0.1,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name}={v} must lie in [0, 1]")))
            }
        };
        if self.k == 0 || self.k0 < self.k {
            return Err(Error::invalid(format!(
                "need k0 >= k >= 1, got k0={} k={}",
                self.k0, self.k
            )));
        }
        if self.k_skill == 0 || self.k_skill_recall < self.k_skill {
            return Err(Error::invalid("need k_skill_recall >= k_skill >= 1"));
        }
        if !(self.tau_c > 0.0) {
            return Err(Error::invalid("tau_c must be positive"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::invalid("eta must lie in (0, 1]"));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::invalid("beta must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return Err(Error::invalid("p_drop must lie in [0, 1)"));
        }
        if self.dim < 2 {
            return Err(Error::invalid("embedding dimension must be at least 2"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer sizes must be positive"));
        }
        for (name, v) in [
            ("alpha_start", self.alpha_start),
            ("alpha_end", self.alpha_end),
            ("epsilon", self.epsilon),
            ("u_min", self.u_min),
            ("u_prune", self.u_prune),
            ("lambda_sem", self.lambda_sem),
            ("lambda_u", self.lambda_u),
            ("gamma", self.gamma),
            ("initial_utility", self.initial_utility),
        ] {
            unit(name, v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        HyperParams::default().validate().unwrap();
    }

    #[test]
    fn rejects_k_above_k0() {
        let hp = HyperParams {
            k0: 3,
            k: 5,
            ..HyperParams::default()
        };
        assert!(hp.validate().is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let hp: HyperParams = serde_json::from_str(r#"{"k": 3, "disposition": "delete"}"#).unwrap();
        assert_eq!(hp.k, 3);
        assert_eq!(hp.k0, 20);
        assert_eq!(hp.disposition, Disposition::Delete);
    }
}
