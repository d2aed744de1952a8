//! Univariate LoS/CoT baselines: lognormal (MLE), gamma (method of moments)
//! and Weibull (MLE by Newton iteration on the shape equation).

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::EstimatorError;
use crate::rng::SimRng;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Sigma below which a lognormal fit is flagged degenerate.
pub const DEGENERATE_SIGMA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum UnivariateFit {
    Lognormal {
        mu: f64,
        sigma: f64,
        n: usize,
        loglik: f64,
        degenerate: bool,
    },
    Gamma {
        shape: f64,
        scale: f64,
        n: usize,
        loglik: f64,
    },
    Weibull {
        shape: f64,
        scale: f64,
        n: usize,
        loglik: f64,
        /// False when Newton hit the iteration cap or stalled; the best
        /// iterate is kept.
        converged: bool,
    },
}

fn check_positive(x: &[f64], need: usize) -> Result<(), EstimatorError> {
    if x.len() < need {
        return Err(EstimatorError::TooFewSamples { n: x.len(), need });
    }
    if x.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(EstimatorError::NonPositiveSample);
    }
    Ok(())
}

/// Total log-likelihood of `x` under Lognormal(mu, sigma). Sigma is floored
/// at `DEGENERATE_SIGMA` so the value stays finite.
pub fn lognormal_loglik(x: &[f64], mu: f64, sigma: f64) -> f64 {
    let s = sigma.max(DEGENERATE_SIGMA);
    x.iter()
        .map(|v| {
            let z = (v.ln() - mu) / s;
            -v.ln() - s.ln() - LN_SQRT_2PI - 0.5 * z * z
        })
        .sum()
}

pub fn fit_lognormal(x: &[f64]) -> Result<UnivariateFit, EstimatorError> {
    check_positive(x, 2)?;
    let n = x.len() as f64;
    let mu = x.iter().map(|v| v.ln()).sum::<f64>() / n;
    let sigma = (x.iter().map(|v| (v.ln() - mu).powi(2)).sum::<f64>() / n).sqrt();
    Ok(UnivariateFit::Lognormal {
        mu,
        sigma,
        n: x.len(),
        loglik: lognormal_loglik(x, mu, sigma),
        degenerate: sigma < DEGENERATE_SIGMA,
    })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

pub fn gamma_loglik(x: &[f64], shape: f64, scale: f64) -> f64 {
    let norm = libm::lgamma(shape) + shape * scale.ln();
    x.iter()
        .map(|v| (shape - 1.0) * v.ln() - v / scale - norm)
        .sum()
}

/// Gamma by moments: `shape = mean^2 / var`, `scale = var / mean`, with the
/// population variance.
pub fn fit_gamma_mom(x: &[f64]) -> Result<UnivariateFit, EstimatorError> {
    check_positive(x, 2)?;
    let (mean, var) = mean_var(x);
    if !(var > 0.0) {
        return Err(EstimatorError::ZeroVariance);
    }
    let shape = mean * mean / var;
    let scale = var / mean;
    Ok(UnivariateFit::Gamma {
        shape,
        scale,
        n: x.len(),
        loglik: gamma_loglik(x, shape, scale),
    })
}

pub fn weibull_loglik(x: &[f64], shape: f64, scale: f64) -> f64 {
    x.iter()
        .map(|v| {
            shape.ln() - shape * scale.ln() + (shape - 1.0) * v.ln() - (v / scale).powf(shape)
        })
        .sum()
}

pub const WEIBULL_START: f64 = 1.2;
pub const WEIBULL_MAX_ITER: usize = 200;

/// Weibull MLE. Newton runs on the profile shape equation
/// `sum(x^k ln x) / sum(x^k) - 1/k - mean(ln x) = 0` from `k = 1.2`, written
/// in centered logs so that `x^k` never overflows.
pub fn fit_weibull(x: &[f64]) -> Result<UnivariateFit, EstimatorError> {
    check_positive(x, 2)?;
    let (_, var) = mean_var(x);
    if !(var > 0.0) {
        return Err(EstimatorError::ZeroVariance);
    }
    let logs: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / logs.len() as f64;
    let u: Vec<f64> = logs.iter().map(|l| l - mean_log).collect();
    let u_max = u.iter().cloned().fold(f64::MIN, f64::max);

    // returns (f, f', ln mean(exp(k u)))
    let eval = |k: f64| {
        let (mut b, mut a, mut c) = (0.0, 0.0, 0.0);
        for &ui in &u {
            let w = (k * (ui - u_max)).exp();
            b += w;
            a += w * ui;
            c += w * ui * ui;
        }
        let f = a / b - 1.0 / k;
        let df = (c * b - a * a) / (b * b) + 1.0 / (k * k);
        let log_mean = k * u_max + (b / u.len() as f64).ln();
        (f, df, log_mean)
    };

    let mut k = WEIBULL_START;
    let mut best = (f64::INFINITY, k);
    let mut converged = false;
    for _ in 0..WEIBULL_MAX_ITER {
        let (f, df, _) = eval(k);
        if f.abs() < best.0 {
            best = (f.abs(), k);
        }
        if !(df > 0.0) || !f.is_finite() {
            break;
        }
        let mut next = k - f / df;
        if !(next > 0.0) {
            next = k / 2.0;
        }
        if (next - k).abs() <= 1e-12 * k {
            k = next;
            converged = true;
            break;
        }
        k = next;
    }
    let (f_final, _, _) = eval(k);
    if f_final.abs() <= best.0 {
        best = (f_final.abs(), k);
    }
    let shape = best.1;
    let (_, _, log_mean) = eval(shape);
    let scale = (mean_log + log_mean / shape).exp();
    Ok(UnivariateFit::Weibull {
        shape,
        scale,
        n: x.len(),
        loglik: weibull_loglik(x, shape, scale),
        converged: converged || best.0 < 1e-9,
    })
}

impl UnivariateFit {
    pub fn loglik(&self) -> f64 {
        match self {
            UnivariateFit::Lognormal { loglik, .. }
            | UnivariateFit::Gamma { loglik, .. }
            | UnivariateFit::Weibull { loglik, .. } => *loglik,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            UnivariateFit::Lognormal { .. } => "lognormal",
            UnivariateFit::Gamma { .. } => "gamma",
            UnivariateFit::Weibull { .. } => "weibull",
        }
    }

    /// Errors with `NewtonDivergence` for a non-converged Weibull fit.
    pub fn require_converged(self) -> Result<Self, EstimatorError> {
        match self {
            UnivariateFit::Weibull {
                converged: false,
                shape,
                ..
            } => Err(EstimatorError::NewtonDivergence { best_shape: shape }),
            other => Ok(other),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            UnivariateFit::Lognormal { mu, sigma, .. } => (mu + sigma * sigma / 2.0).exp(),
            UnivariateFit::Gamma { shape, scale, .. } => shape * scale,
            UnivariateFit::Weibull { shape, scale, .. } => scale * libm::tgamma(1.0 + 1.0 / shape),
        }
    }

    /// Mean and standard deviation of ln X.
    pub fn ln_moments(&self) -> Option<(f64, f64)> {
        match self {
            UnivariateFit::Lognormal { mu, sigma, .. } => Some((*mu, *sigma)),
            _ => None,
        }
    }

    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        let draw = match self {
            UnivariateFit::Lognormal { mu, sigma, .. } => {
                let z: f64 = StandardNormal.sample(rng);
                (mu + sigma * z).exp()
            }
            UnivariateFit::Gamma { shape, scale, .. } => Gamma::new(*shape, *scale)
                .expect("validated gamma parameters")
                .sample(rng),
            UnivariateFit::Weibull { shape, scale, .. } => {
                // inverse CDF; 1 - U avoids ln(0)
                let u: f64 = rng.gen();
                scale * (-(1.0 - u).ln()).powf(1.0 / shape)
            }
        };
        draw.max(f64::MIN_POSITIVE)
    }
}
