//! Independent replications and their cross-replication summary.

use serde::{Deserialize, Serialize};

use super::stats::{bucket_means, SimResult};
use super::{run_with_rng, EngineError, SimConfig};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepartmentSummary {
    pub name: String,
    pub bucket_mean: Vec<f64>,
    /// Sample standard deviation across replications (0 when R = 1).
    pub bucket_sd: Vec<f64>,
    pub mean_census: f64,
    pub mean_utilization: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replications: usize,
    pub bucket_hours: f64,
    pub departments: Vec<DepartmentSummary>,
    pub total_bucket_mean: Vec<f64>,
    pub total_bucket_sd: Vec<f64>,
    pub mean_admissions: f64,
}

fn mean_sd(columns: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let r = columns.len();
    let n = columns.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; n];
    let mut sd = vec![0.0; n];
    for b in 0..n {
        let m = columns.iter().map(|c| c[b]).sum::<f64>() / r as f64;
        mean[b] = m;
        if r > 1 {
            let v = columns.iter().map(|c| (c[b] - m).powi(2)).sum::<f64>() / (r - 1) as f64;
            sd[b] = v.sqrt();
        }
    }
    (mean, sd)
}

pub fn summarize(results: &[SimResult], bucket_hours: f64) -> ReplicationSummary {
    let r = results.len() as f64;
    let first = &results[0];
    let departments = (0..first.departments.len())
        .map(|d| {
            let cols: Vec<Vec<f64>> = results
                .iter()
                .map(|res| bucket_means(&res.departments[d].census, res.warm_up, res.horizon, bucket_hours))
                .collect();
            let (bucket_mean, bucket_sd) = mean_sd(&cols);
            DepartmentSummary {
                name: first.departments[d].name.clone(),
                bucket_mean,
                bucket_sd,
                mean_census: results.iter().map(|x| x.departments[d].mean_census).sum::<f64>() / r,
                mean_utilization: first.departments[d].capacity.map(|_| {
                    results
                        .iter()
                        .map(|x| x.departments[d].utilization.unwrap_or(0.0))
                        .sum::<f64>()
                        / r
                }),
            }
        })
        .collect();
    let totals: Vec<Vec<f64>> = results.iter().map(|x| x.total_bucket_means(bucket_hours)).collect();
    let (total_bucket_mean, total_bucket_sd) = mean_sd(&totals);
    ReplicationSummary {
        replications: results.len(),
        bucket_hours,
        departments,
        total_bucket_mean,
        total_bucket_sd,
        mean_admissions: results.iter().map(|x| x.aggregate.admissions as f64).sum::<f64>() / r,
    }
}

/// Runs `config.replications` replications, replication `r` on sub-stream
/// `(seed, r)`, spread over up to `jobs` threads. Results are in replication
/// order regardless of `jobs`.
pub fn replicate(
    config: &SimConfig,
    jobs: usize,
) -> Result<(Vec<SimResult>, ReplicationSummary), EngineError> {
    config.validate()?;
    let n = config.replications;
    let jobs = jobs.clamp(1, n);
    let mut slots: Vec<Option<Result<SimResult, EngineError>>> = vec![None; n];
    std::thread::scope(|scope| {
        for (worker, chunk) in slots.chunks_mut(n.div_ceil(jobs)).enumerate() {
            let base = worker * n.div_ceil(jobs);
            scope.spawn(move || {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    let r = (base + i) as u64;
                    *slot = Some(run_with_rng(config, rng::substream(config.seed, r)));
                }
            });
        }
    });
    let results = slots
        .into_iter()
        .map(|s| s.expect("every replication ran"))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&results, config.summary_bucket.hours());
    Ok((results, summary))
}
