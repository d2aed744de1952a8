//! Lognormal mixtures fitted by EM on ln x.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::EstimatorError;
use crate::rng::{self, SimRng};

/// Lower bound on component sigma; stops a component collapsing onto a
/// single point.
pub const SIGMA_FLOOR: f64 = 1e-4;
pub const EM_TOLERANCE: f64 = 1e-8;
pub const EM_MAX_ITER: usize = 500;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub components: Vec<MixtureComponent>,
    /// Log-likelihood (in x space) after initialization and after every
    /// M-step.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub n: usize,
}

impl MixtureFit {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn mean(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * (c.mu + c.sigma * c.sigma / 2.0).exp())
            .sum()
    }

    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        let mut u = rng.gen::<f64>();
        let mut chosen = &self.components[self.components.len() - 1];
        for c in &self.components {
            if u < c.weight {
                chosen = c;
                break;
            }
            u -= c.weight;
        }
        let z: f64 = StandardNormal.sample(rng);
        (chosen.mu + chosen.sigma * z).exp().max(f64::MIN_POSITIVE)
    }

    /// Splits component `idx` into two identical halves. The mixture density
    /// is unchanged, so EM started here cannot end below this fit.
    pub fn split_component(&self, idx: usize) -> Vec<MixtureComponent> {
        let mut out = self.components.clone();
        out[idx].weight /= 2.0;
        let twin = out[idx].clone();
        out.insert(idx + 1, twin);
        out
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn component_log_density(y: f64, c: &MixtureComponent) -> f64 {
    let z = (y - c.mu) / c.sigma;
    c.weight.ln() - c.sigma.ln() - LN_SQRT_2PI - 0.5 * z * z
}

/// k-means++ seeding of `k` centers on the 1-D sample `y`.
fn kmeanspp_1d(y: &[f64], k: usize, rng: &mut SimRng) -> Vec<f64> {
    let mut centers = vec![y[rng.gen_range(0..y.len())]];
    let mut d2: Vec<f64> = y.iter().map(|v| (v - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = y.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.gen_range(0..y.len())
        };
        let c = y[idx];
        centers.push(c);
        for (d, v) in d2.iter_mut().zip(y) {
            *d = d.min((v - c).powi(2));
        }
    }
    centers.sort_by(f64::total_cmp);
    centers
}

/// EM for a `k`-component Gaussian mixture on ln x, seeded by k-means++.
pub fn fit_mixture_em(x: &[f64], k: usize, seed: u64) -> Result<MixtureFit, EstimatorError> {
    check_sample(x, k)?;
    let y: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(SIGMA_FLOOR);
    let centers = kmeanspp_1d(&y, k, &mut rng::stream(seed));
    let init = centers
        .into_iter()
        .map(|mu| MixtureComponent {
            weight: 1.0 / k as f64,
            mu,
            sigma: sd,
        })
        .collect();
    Ok(run_em(x, &y, init))
}

/// EM from caller-supplied starting components.
pub fn fit_mixture_em_from(
    x: &[f64],
    init: Vec<MixtureComponent>,
) -> Result<MixtureFit, EstimatorError> {
    check_sample(x, init.len())?;
    let total: f64 = init.iter().map(|c| c.weight).sum();
    if init.iter().any(|c| !(c.weight > 0.0) || !(c.sigma > 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(EstimatorError::InvalidParameter(
            "initial components need positive weights summing to 1 and positive sigmas".into(),
        ));
    }
    let y: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    Ok(run_em(x, &y, init))
}

fn check_sample(x: &[f64], k: usize) -> Result<(), EstimatorError> {
    if k == 0 {
        return Err(EstimatorError::InvalidParameter("k must be >= 1".into()));
    }
    if x.len() < 5 * k {
        return Err(EstimatorError::TooFewSamples {
            n: x.len(),
            need: 5 * k,
        });
    }
    if x.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(EstimatorError::NonPositiveSample);
    }
    Ok(())
}

fn run_em(x: &[f64], y: &[f64], mut comps: Vec<MixtureComponent>) -> MixtureFit {
    let k = comps.len();
    let n = y.len();
    let jacobian: f64 = x.iter().map(|v| v.ln()).sum();
    let mut resp = vec![0.0; n * k];
    let mut logs = vec![0.0; k];

    // E-step: fills `resp`, returns the x-space log-likelihood
    let e_step = |comps: &[MixtureComponent], resp: &mut [f64], logs: &mut [f64]| {
        let mut ll = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            for (j, c) in comps.iter().enumerate() {
                logs[j] = component_log_density(yi, c);
            }
            let lse = log_sum_exp(logs);
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (logs[j] - lse).exp();
            }
        }
        ll - jacobian
    };

    let mut trace = vec![e_step(&comps, &mut resp, &mut logs)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < EM_MAX_ITER {
        iterations += 1;
        for (j, c) in comps.iter_mut().enumerate() {
            let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if nk <= 0.0 {
                continue;
            }
            let mu = (0..n).map(|i| resp[i * k + j] * y[i]).sum::<f64>() / nk;
            let var = (0..n)
                .map(|i| resp[i * k + j] * (y[i] - mu).powi(2))
                .sum::<f64>()
                / nk;
            c.weight = nk / n as f64;
            c.mu = mu;
            c.sigma = var.sqrt().max(SIGMA_FLOOR);
        }
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        for c in &mut comps {
            c.weight /= total;
        }
        let ll = e_step(&comps, &mut resp, &mut logs);
        let gain = ll - trace[trace.len() - 1];
        trace.push(ll);
        if gain.abs() < EM_TOLERANCE {
            converged = true;
            break;
        }
    }
    comps.sort_by(|a, b| a.mu.total_cmp(&b.mu));
    MixtureFit {
        components: comps,
        loglik_trace: trace,
        iterations,
        converged,
        n,
    }
}
