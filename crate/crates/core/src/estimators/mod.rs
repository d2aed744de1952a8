//! Length-of-stay and cost-of-treatment models: univariate baselines, lognormal
//! mixtures, attribute-conditioned regression and a single regression tree.

pub mod conditional;
pub mod features;
pub mod ks;
pub mod mixture;
pub mod tree;
pub mod univariate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::PatientProfile;
use crate::linalg::LinalgError;
use crate::rng::SimRng;

pub use conditional::{fit_conditional, ConditionalModel};
pub use features::{Feature, FeatureSpec};
pub use ks::ks_statistic;
pub use mixture::{fit_mixture_em, MixtureFit};
pub use tree::{fit_tree, RegressionTree};
pub use univariate::{fit_gamma_mom, fit_lognormal, fit_weibull, UnivariateFit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("need at least {need} samples, got {n}")]
    TooFewSamples { n: usize, need: usize },
    #[error("sample contains a non-positive value")]
    NonPositiveSample,
    #[error("sample variance is zero")]
    ZeroVariance,
    #[error("Weibull shape iteration did not converge (best shape {best_shape})")]
    NewtonDivergence { best_shape: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("profile {0} has a categorical level unseen in training")]
    UnencodableProfile(String),
    #[error("empty sample")]
    EmptySample,
    #[error("{n} rows cannot identify {width} encoded columns")]
    InsufficientData { n: usize, width: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// What a model predicts. Costs may be zero, so they are modelled as
/// `ln(cost + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Los,
    Cot,
}

impl TargetKind {
    pub fn to_log(self, v: f64) -> Result<f64, EstimatorError> {
        match self {
            TargetKind::Los if v > 0.0 && v.is_finite() => Ok(v.ln()),
            TargetKind::Cot if v >= 0.0 && v.is_finite() => Ok((v + 1.0).ln()),
            _ => Err(EstimatorError::NonPositiveSample),
        }
    }

    pub fn from_log(self, z: f64) -> f64 {
        match self {
            TargetKind::Los => z.exp(),
            TargetKind::Cot => (z.exp() - 1.0).max(0.0),
        }
    }

    /// Maps raw targets into the space the distribution fits operate on
    /// (strictly positive values).
    pub fn to_positive(self, v: f64) -> f64 {
        match self {
            TargetKind::Los => v,
            TargetKind::Cot => v + 1.0,
        }
    }

    pub fn from_positive(self, v: f64) -> f64 {
        match self {
            TargetKind::Los => v,
            TargetKind::Cot => (v - 1.0).max(0.0),
        }
    }
}

/// Which model family to fit for a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Lognormal,
    Gamma,
    Weibull,
    Mixture { k: usize, seed: u64 },
    Conditional { features: Vec<Feature> },
    Tree { max_depth: usize, min_leaf: usize },
}

impl EstimatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorSpec::Lognormal => "lognormal",
            EstimatorSpec::Gamma => "gamma",
            EstimatorSpec::Weibull => "weibull",
            EstimatorSpec::Mixture { .. } => "mixture",
            EstimatorSpec::Conditional { .. } => "conditional",
            EstimatorSpec::Tree { .. } => "tree",
        }
    }

    pub fn fit(
        &self,
        profiles: &[PatientProfile],
        targets: &[f64],
        target: TargetKind,
    ) -> Result<Estimator, EstimatorError> {
        let positive = || -> Vec<f64> { targets.iter().map(|&v| target.to_positive(v)).collect() };
        Ok(match self {
            EstimatorSpec::Lognormal => Estimator::Univariate {
                fit: fit_lognormal(&positive())?,
                target,
            },
            EstimatorSpec::Gamma => Estimator::Univariate {
                fit: fit_gamma_mom(&positive())?,
                target,
            },
            EstimatorSpec::Weibull => Estimator::Univariate {
                fit: fit_weibull(&positive())?,
                target,
            },
            EstimatorSpec::Mixture { k, seed } => Estimator::Mixture {
                fit: fit_mixture_em(&positive(), *k, *seed)?,
                target,
            },
            EstimatorSpec::Conditional { features } => {
                Estimator::Conditional(fit_conditional(profiles, targets, features, target)?)
            }
            EstimatorSpec::Tree {
                max_depth,
                min_leaf,
            } => Estimator::Tree(fit_tree(profiles, targets, target, *max_depth, *min_leaf)?),
        })
    }
}

/// Any fitted LoS or CoT model, as consumed by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Estimator {
    Univariate { fit: UnivariateFit, target: TargetKind },
    Mixture { fit: MixtureFit, target: TargetKind },
    Conditional(ConditionalModel),
    Tree(RegressionTree),
}

impl Estimator {
    pub fn target(&self) -> TargetKind {
        match self {
            Estimator::Univariate { target, .. } | Estimator::Mixture { target, .. } => *target,
            Estimator::Conditional(m) => m.target_kind,
            Estimator::Tree(t) => t.target_kind,
        }
    }

    /// One draw. LoS draws are strictly positive, cost draws non-negative.
    pub fn sample(&self, profile: &PatientProfile, rng: &mut SimRng) -> f64 {
        let v = match self {
            Estimator::Univariate { fit, target } => target.from_positive(fit.sample(rng)),
            Estimator::Mixture { fit, target } => target.from_positive(fit.sample(rng)),
            Estimator::Conditional(m) => m.sample(profile, rng),
            Estimator::Tree(t) => t.sample(profile, rng),
        };
        match self.target() {
            TargetKind::Los => v.max(f64::MIN_POSITIVE),
            TargetKind::Cot => v.max(0.0),
        }
    }

    pub fn predict_mean(&self, profile: &PatientProfile) -> f64 {
        match self {
            Estimator::Univariate { fit, target } => target.from_positive(fit.mean()),
            Estimator::Mixture { fit, target } => target.from_positive(fit.mean()),
            Estimator::Conditional(m) => m.predict_mean(profile),
            Estimator::Tree(t) => t.predict(profile),
        }
    }
}
