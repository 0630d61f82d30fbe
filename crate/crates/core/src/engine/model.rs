use serde::{Deserialize, Serialize};

use crate::elicitation::{EffectModel, HeterogeneityPrior};
use crate::error::{Error, Result};

fn default_vague_sd() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub effect: EffectModel,
    /// Required for random effects, ignored for fixed effect.
    #[serde(default)]
    pub prior: Option<HeterogeneityPrior>,
    #[serde(default = "default_vague_sd")]
    pub baseline_prior_sd: f64,
    #[serde(default = "default_vague_sd")]
    pub effect_prior_sd: f64,
    /// Holds the analysis-scale `tau` at a fixed value instead of sampling it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_tau: Option<f64>,
}

impl ModelConfig {
    pub fn fixed_effect() -> Self {
        Self {
            effect: EffectModel::FixedEffect,
            prior: None,
            baseline_prior_sd: default_vague_sd(),
            effect_prior_sd: default_vague_sd(),
            fixed_tau: None,
        }
    }

    pub fn random_effects(prior: HeterogeneityPrior) -> Self {
        Self {
            effect: EffectModel::RandomEffects,
            prior: Some(prior),
            ..Self::fixed_effect()
        }
    }

    /// Random effects with `tau` pinned; `prior` only supplies the scale.
    pub fn random_effects_fixed_tau(tau: f64) -> Self {
        Self {
            effect: EffectModel::RandomEffects,
            fixed_tau: Some(tau),
            ..Self::fixed_effect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("baseline_prior_sd", self.baseline_prior_sd),
            ("effect_prior_sd", self.effect_prior_sd),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.effect == EffectModel::RandomEffects {
            match (self.prior, self.fixed_tau) {
                (_, Some(t)) if !(t.is_finite() && t >= 0.0) => {
                    return Err(Error::Config(format!("fixed tau must be >= 0, got {t}")))
                }
                (None, None) => {
                    return Err(Error::Config("random effects model requires a heterogeneity prior".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn default_burn_in() -> usize {
    60_000
}
fn default_keep() -> usize {
    40_000
}
fn default_one() -> usize {
    1
}
fn default_chains() -> usize {
    2
}
fn default_adapt_target() -> f64 {
    0.44
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Number of kept draws per chain.
    #[serde(default = "default_keep")]
    pub keep: usize,
    #[serde(default = "default_one")]
    pub thin: usize,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_adapt_target")]
    pub adapt_target: f64,
    /// First RNG stream id; chain `c` uses `stream_base + c`.
    #[serde(default)]
    pub stream_base: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            burn_in: default_burn_in(),
            keep: default_keep(),
            thin: 1,
            chains: default_chains(),
            seed: 0,
            adapt_target: default_adapt_target(),
            stream_base: 0,
        }
    }
}

impl McmcConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in == 0 || self.keep == 0 || self.thin == 0 || self.chains == 0 {
            return Err(Error::Config("burn_in, keep, thin and chains must all be >= 1".into()));
        }
        if !(self.adapt_target > 0.0 && self.adapt_target < 1.0) {
            return Err(Error::Config(format!(
                "adapt_target must lie in (0, 1), got {}",
                self.adapt_target
            )));
        }
        Ok(())
    }
}
