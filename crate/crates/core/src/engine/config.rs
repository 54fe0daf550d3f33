//! Declarative game configuration, read from TOML.

use std::sync::Arc;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::analysts::AnalystSpec;
use crate::codes::{reed_muller, search_code, LinearCode};
use crate::curators::CuratorSpec;
use crate::models::Model;
use crate::seeds::fnv1a;
use crate::value::{rational_serde, ratio, Rational};

use super::EngineError;

fn default_max_tries() -> u64 {
    1 << 16
}

/// Where a code model's generator comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CodeSource {
    ReedMuller { vars: usize, degree: usize },
    Search {
        length: usize,
        dimension: usize,
        distance: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_max_tries")]
        max_tries: u64,
    },
    /// Generator rows as bit strings.
    Rows { rows: Vec<String> },
}

impl CodeSource {
    pub fn build(&self) -> Result<LinearCode, EngineError> {
        let code = match self {
            CodeSource::ReedMuller { vars, degree } => reed_muller(*vars, *degree)?,
            CodeSource::Search { length, dimension, distance, seed, max_tries } => {
                search_code(*length, *dimension, *distance, *seed, *max_tries)?
            }
            CodeSource::Rows { rows } => LinearCode::from_text(&rows.join("\n"))?,
        };
        Ok(code)
    }
}

/// Model descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    BiasedCoin {
        #[serde(with = "rational_serde")]
        bias: Rational,
    },
    Uniform { outcomes: u32 },
    Independent { points: u64 },
    Linear { vars: u32 },
    Polynomial { vars: u32, degree: u32 },
    Code(CodeSource),
    Gaussian {
        dim: usize,
        #[serde(default = "default_variance")]
        variance: f64,
    },
    Product { left: Box<ModelSpec>, right: Box<ModelSpec> },
    Power { base: Box<ModelSpec>, copies: usize },
    /// `copies` defaults to the query budget minus one.
    TensorPower {
        base: Box<ModelSpec>,
        #[serde(default)]
        copies: Option<usize>,
    },
}

fn default_variance() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn build(&self, budget: usize) -> Result<Model, EngineError> {
        Ok(match self {
            ModelSpec::BiasedCoin { bias } => Model::biased_coin(bias.clone())?,
            ModelSpec::Uniform { outcomes } => Model::uniform(*outcomes)?,
            ModelSpec::Independent { points } => Model::independent(*points)?,
            ModelSpec::Linear { vars } => Model::linear(*vars)?,
            ModelSpec::Polynomial { vars, degree } => Model::polynomial(*vars, *degree)?,
            ModelSpec::Code(source) => Model::code(source.build()?),
            ModelSpec::Gaussian { dim, variance } => Model::gaussian(*dim, *variance)?,
            ModelSpec::Product { left, right } => Model::product(left.build(budget)?, right.build(budget)?),
            ModelSpec::Power { base, copies } => Model::power(base.build(budget)?, *copies)?,
            ModelSpec::TensorPower { base, copies } => {
                let copies = copies.unwrap_or(budget.saturating_sub(1)).max(1);
                Model::tensor_power(base.build(budget)?, copies)?
            }
        })
    }
}

/// Restriction of trials to a posterior event; draws are repeated until it holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Condition {
    /// Exactly two hypotheses of classification leaf `leaf` remain eligible.
    TwoEligible {
        #[serde(default)]
        leaf: usize,
        #[serde(default = "default_attempts")]
        max_attempts: usize,
    },
}

fn default_attempts() -> usize {
    100_000
}

fn default_delta() -> Rational {
    ratio(1, 20)
}

fn default_trials() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelSpec,
    pub curator: CuratorSpec,
    pub analyst: AnalystSpec,
    /// Samples held by the curator.
    pub n: usize,
    #[serde(with = "rational_serde")]
    pub epsilon: Rational,
    #[serde(default = "default_delta", with = "rational_serde")]
    pub delta: Rational,
    /// Query budget; defaults to what the analyst needs.
    #[serde(default)]
    pub queries: Option<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub condition: Option<Condition>,
    /// Where to write trial records.
    #[serde(default)]
    pub output: Option<String>,
    /// Keep per-query records in transcripts.
    #[serde(default)]
    pub record_queries: bool,
}

impl GameConfig {
    pub fn from_toml(text: &str) -> Result<Self, EngineError> {
        toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, EngineError> {
        toml::to_string(self).map_err(|e| EngineError::Config(e.to_string()))
    }

    /// FNV-1a digest of the canonical JSON form.
    pub fn digest(&self) -> u64 {
        fnv1a(serde_json::to_string(self).unwrap_or_default().as_bytes())
    }

    pub fn validate_scalars(&self) -> Result<(), EngineError> {
        let open_unit = |r: &Rational| r > &Rational::zero() && r < &Rational::one();
        if !open_unit(&self.epsilon) {
            return Err(EngineError::Config("epsilon must lie in (0, 1)".into()));
        }
        if !open_unit(&self.delta) {
            return Err(EngineError::Config("delta must lie in (0, 1)".into()));
        }
        if self.queries == Some(0) {
            return Err(EngineError::Config("the query budget must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(EngineError::Config("trials must be at least 1".into()));
        }
        Ok(())
    }
}

/// Builds the model for a config, resolving a budget-sized tensor power from the analyst.
pub fn resolve(cfg: &GameConfig) -> Result<(Arc<Model>, usize), EngineError> {
    cfg.validate_scalars()?;
    // Budget-dependent models are sized from the explicit budget, or from the analyst's
    // requirement on a minimal model when no budget is given.
    let budget = match cfg.queries {
        Some(q) => q,
        None => {
            let probe = cfg.model.build(2)?;
            let needed = cfg.analyst.required_queries(&probe, cfg.n).unwrap_or(1).max(1);
            let sized = cfg.model.build(needed)?;
            cfg.analyst.required_queries(&sized, cfg.n)?.max(1)
        }
    };
    let model = Arc::new(cfg.model.build(budget)?);
    let needed = cfg.analyst.required_queries(&model, cfg.n)?;
    if needed > budget {
        return Err(EngineError::Config(format!(
            "{} needs {needed} queries but the budget is {budget}",
            cfg.analyst.name()
        )));
    }
    Ok((model, budget))
}
