//! Stochastic stack (A) versus learned stack (B) on a synthetic hospital.
//!
//! The oracle log is split at `T`; both stacks are fitted on patients admitted
//! before `T` and simulate `[T, horizon]`, which is scored against the
//! patients actually admitted in that window.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::hash::Hasher;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{self, BucketWidth, DepartmentSpec, EventLogEntry, PatientProfile, Trajectory};
use crate::engine::{self, stats, ArrivalDriver, ProfileSource, SimConfig, SimResult};
use crate::estimators::{self, Estimator, EstimatorSpec, Feature, TargetKind};
use crate::inflow::{self, InflowSpec, MetricReport};
use crate::pathways::{self, PathwayModel};
use crate::synthehr::{self, GeneratorConfig};


#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<crate::Error>,
    },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("census windows do not overlap")]
    WindowMismatch,
    #[error("i/o: {0}")]
    Io(String),
}

fn stage<E: Into<crate::Error>>(stage: &'static str) -> impl FnOnce(E) -> HarnessError {
    move |e| HarnessError::Stage {
        stage,
        source: Box::new(e.into()),
    }
}

/// How stack B picks the number of pathway clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathwaySelection {
    Fixed { k: usize },
    /// Best mean silhouette over `1..=max_k`.
    Sweep { max_k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackBChoices {
    pub forecaster: InflowSpec,
    pub los: EstimatorSpec,
    pub cot: EstimatorSpec,
    pub pathways: PathwaySelection,
}

impl Default for StackBChoices {
    fn default() -> Self {
        StackBChoices {
            forecaster: InflowSpec::LagRegression {
                lags: vec![1, 2, 24, 168],
                calendar: inflow::CalendarSpec {
                    hour_of_day: true,
                    day_of_week: true,
                    month_of_year: false,
                },
            },
            los: EstimatorSpec::Conditional {
                features: Feature::ALL.to_vec(),
            },
            cot: EstimatorSpec::Conditional {
                features: Feature::ALL.to_vec(),
            },
            pathways: PathwaySelection::Sweep { max_k: 5 },
        }
    }
}

fn default_bucket() -> BucketWidth {
    BucketWidth::Hour
}

fn default_census_bucket() -> BucketWidth {
    BucketWidth::Day
}

fn default_replications() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub generator: GeneratorConfig,
    pub split_fraction: f64,
    #[serde(default = "default_bucket")]
    pub bucket_width: BucketWidth,
    #[serde(default)]
    pub stack_b: StackBChoices,
    /// Extra inflow models scored in the backtest table only.
    #[serde(default)]
    pub extra_forecasters: Vec<InflowSpec>,
    /// Bed limits by department; unlisted departments are unbounded.
    #[serde(default)]
    pub capacities: BTreeMap<String, u32>,
    /// Hours after the split excluded from scoring.
    #[serde(default)]
    pub warm_up: f64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_census_bucket")]
    pub census_bucket: BucketWidth,
    /// Seed of the simulation and clustering streams.
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let s: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| HarnessError::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidScenario(m));
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!("split_fraction {} outside (0,1)", self.split_fraction));
        }
        if self.replications == 0 {
            return bad("replications must be >= 1".into());
        }
        if !(self.warm_up >= 0.0) {
            return bad(format!("warm_up {}", self.warm_up));
        }
        self.generator
            .validate()
            .map_err(|e| HarnessError::InvalidScenario(e.to_string()))?;
        let split = self.split_time();
        if split + self.warm_up >= self.generator.horizon {
            return bad("warm-up leaves no scored window".into());
        }
        for d in self.capacities.keys() {
            if !self.generator.departments.iter().any(|s| &s.name == d) {
                return bad(format!("capacity for unknown department {d}"));
            }
        }
        Ok(())
    }

    fn n_buckets(&self) -> usize {
        (self.generator.horizon / self.bucket_width.hours()).floor() as usize
    }

    /// Split time `T`, aligned to a bucket boundary.
    pub fn split_time(&self) -> f64 {
        inflow::split_point(self.n_buckets(), self.split_fraction) as f64 * self.bucket_width.hours()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflowScore {
    pub model: String,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackMetrics {
    pub inflow_model: String,
    pub inflow: MetricReport,
    /// MAE of the replication-mean hospital census against the truth.
    pub census_mae_total: f64,
    pub census_mae: BTreeMap<String, f64>,
    /// Simulated versus held-out completed stays, all departments pooled.
    pub los_ks: f64,
    pub cot_relative_error: f64,
    /// Visit-weighted row TV between the simulated and held-out matrices.
    pub pathway_tv: f64,
    pub walk_caps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub inflow_mape: bool,
    pub census_mae: bool,
    pub los_ks: bool,
    pub cot_relative_error: bool,
    pub pathway_tv: bool,
}

impl Verdicts {
    pub fn from_metrics(a: &StackMetrics, b: &StackMetrics) -> Self {
        Verdicts {
            inflow_mape: b.inflow.mape_percent < a.inflow.mape_percent,
            census_mae: b.census_mae_total < a.census_mae_total,
            los_ks: b.los_ks < a.los_ks,
            cot_relative_error: b.cot_relative_error < a.cot_relative_error,
            pathway_tv: b.pathway_tv < a.pathway_tv,
        }
    }
}

/// FNV-1a digests of each fitted sub-model's JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprints {
    pub inflow: String,
    pub los: BTreeMap<String, String>,
    pub cot: String,
    pub pathways: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayChoice {
    pub k: usize,
    /// `(k, mean silhouette)` for every candidate.
    pub silhouettes: Vec<(usize, f64)>,
    /// Training accuracy of attribute assignment and of always guessing the
    /// largest cluster, for the silhouette-best k.
    pub assignment_accuracy: f64,
    pub majority_baseline: f64,
}

/// Stack B's forecaster against the Poisson baseline on the last stretch of
/// the training data, as long as the held-out window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflowChoice {
    pub candidate: String,
    pub validation_buckets: usize,
    pub candidate_mape: f64,
    pub baseline_mape: f64,
    /// The candidate is kept only when it beats the baseline by the margin.
    pub use_candidate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario: String,
    pub split_time: f64,
    pub horizon: f64,
    pub scored_from: f64,
    pub replications: usize,
    pub train_admissions: usize,
    pub test_admissions: usize,
    pub inflow_backtest: Vec<InflowScore>,
    pub stack_a: StackMetrics,
    pub stack_b: StackMetrics,
    pub b_beats_a: Verdicts,
    /// `census_mae_total` of B over A.
    pub census_mae_ratio: f64,
    pub inflow_choice: InflowChoice,
    pub pathway_choice: PathwayChoice,
    pub fingerprint_a: Fingerprints,
    pub fingerprint_b: Fingerprints,
}

pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let mut h = fnv::FnvHasher::default();
    h.write(serde_json::to_string(value).expect("serializable").as_bytes());
    format!("{:016x}", h.finish())
}

/// A fitted stack ready to simulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stack {
    pub inflow_model: String,
    pub forecast: Vec<f64>,
    pub inflow: inflow::InflowModel,
    pub los: BTreeMap<String, Estimator>,
    pub cot: Estimator,
    pub pathways: PathwayModel,
}

impl Stack {
    fn fingerprints(&self) -> Fingerprints {
        Fingerprints {
            inflow: fingerprint(&self.inflow),
            los: self
                .los
                .iter()
                .map(|(d, m)| (d.clone(), fingerprint(m)))
                .collect(),
            cot: fingerprint(&self.cot),
            pathways: fingerprint(&self.pathways),
        }
    }
}

/// Training and held-out views of one oracle log.
pub struct Split {
    pub t: f64,
    pub horizon: f64,
    pub departments: Vec<String>,
    pub series: domain::ArrivalSeries,
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    pub profiles: BTreeMap<String, PatientProfile>,
}

impl Split {
    pub fn new(
        scenario: &ScenarioConfig,
        entries: &[EventLogEntry],
        profiles: &[PatientProfile],
    ) -> Result<Split, HarnessError> {
        let g = &scenario.generator;
        let t = scenario.split_time();
        let series =
            domain::bucketize(entries, scenario.bucket_width, 0.0, scenario.n_buckets() as f64 * scenario.bucket_width.hours())
                .map_err(stage("bucketize"))?;
        let (train, test): (Vec<Trajectory>, Vec<Trajectory>) = domain::extract_trajectories(entries)
            .map_err(stage("trajectories"))?
            .into_iter()
            .partition(|tr| tr.admission_time() < t);
        Ok(Split {
            t,
            horizon: g.horizon,
            departments: g.department_names(),
            series,
            train,
            test,
            profiles: profiles.iter().map(|p| (p.patient_id.clone(), p.clone())).collect(),
        })
    }

    fn profile(&self, t: &Trajectory) -> &PatientProfile {
        &self.profiles[&t.patient_id]
    }

    fn train_profiles(&self) -> Vec<PatientProfile> {
        self.train.iter().map(|t| self.profile(t).clone()).collect()
    }

    fn stays_for(&self, dept: &str) -> (Vec<PatientProfile>, Vec<f64>) {
        let mut ps = Vec::new();
        let mut ys = Vec::new();
        for t in &self.train {
            for s in t.stays.iter().filter(|s| s.department == dept) {
                ps.push(self.profile(t).clone());
                ys.push(s.los());
            }
        }
        (ps, ys)
    }

    fn forecast_len(&self, width: f64) -> usize {
        ((self.horizon - self.t) / width).ceil() as usize
    }
}

fn fit_stack(
    split: &Split,
    scenario: &ScenarioConfig,
    forecaster: &InflowSpec,
    los: &EstimatorSpec,
    cot: &EstimatorSpec,
    pathways: PathwayModel,
) -> Result<Stack, HarnessError> {
    let head_len = (split.t / scenario.bucket_width.hours()).round() as usize;
    let (head, _) = split.series.split_at(head_len);
    let fitted = forecaster.fit(&head).map_err(stage("fit inflow"))?;
    let forecast = inflow::forecast(&fitted, split.forecast_len(scenario.bucket_width.hours()));
    let mut los_models = BTreeMap::new();
    for d in &split.departments {
        let (ps, ys) = split.stays_for(d);
        let m = los.fit(&ps, &ys, TargetKind::Los).map_err(stage("fit LoS"))?;
        los_models.insert(d.clone(), m);
    }
    let profiles = split.train_profiles();
    let costs: Vec<f64> = split.train.iter().map(Trajectory::total_cost).collect();
    let cot_model = cot.fit(&profiles, &costs, TargetKind::Cot).map_err(stage("fit CoT"))?;
    Ok(Stack {
        inflow_model: forecaster.name(),
        forecast,
        inflow: fitted,
        los: los_models,
        cot: cot_model,
        pathways,
    })
}

/// Stack A: homogeneous Poisson inflow, per-department lognormal LoS,
/// lognormal CoT and one global transition matrix.
pub fn fit_stack_a(split: &Split, scenario: &ScenarioConfig) -> Result<Stack, HarnessError> {
    let global = pathways::fit_transition_matrix(&split.train, &split.departments)
        .map_err(stage("fit pathways"))?;
    fit_stack(
        split,
        scenario,
        &InflowSpec::HomogeneousPoisson,
        &EstimatorSpec::Lognormal,
        &EstimatorSpec::Lognormal,
        PathwayModel::Global(global),
    )
}

/// Relative validation-MAPE improvement stack B's forecaster needs over the
/// Poisson baseline to be used.
pub const INFLOW_MARGIN: f64 = 0.05;

pub fn choose_forecaster(
    split: &Split,
    scenario: &ScenarioConfig,
) -> Result<(InflowSpec, InflowChoice), HarnessError> {
    let candidate = scenario.stack_b.forecaster.clone();
    let w = scenario.bucket_width.hours();
    let head_len = (split.t / w).round() as usize;
    let v = split.forecast_len(w).min(head_len / 2);
    let (head, _) = split.series.split_at(head_len);
    let (inner, validation) = head.split_at(head_len - v);
    let actual = validation.values();
    let mape = |spec: &InflowSpec| -> Result<f64, HarnessError> {
        let m = spec.fit(&inner).map_err(stage("validate inflow"))?;
        let r = inflow::evaluate(&inflow::forecast(&m, v), &actual).map_err(stage("validate inflow"))?;
        Ok(r.mape_percent)
    };
    let candidate_mape = mape(&candidate)?;
    let baseline_mape = mape(&InflowSpec::HomogeneousPoisson)?;
    let use_candidate = candidate_mape <= (1.0 - INFLOW_MARGIN) * baseline_mape;
    let choice = InflowChoice {
        candidate: candidate.name(),
        validation_buckets: v,
        candidate_mape,
        baseline_mape,
        use_candidate,
    };
    let spec = if use_candidate { candidate } else { InflowSpec::HomogeneousPoisson };
    Ok((spec, choice))
}

/// Minimum margin by which attribute assignment must beat the majority
/// guess before clustered pathways replace the global matrix.
pub const ASSIGNMENT_MARGIN: f64 = 0.05;

pub fn choose_pathways(
    split: &Split,
    selection: &PathwaySelection,
    seed: u64,
) -> Result<(PathwayModel, PathwayChoice), HarnessError> {
    let profiles = split.train_profiles();
    let candidates: Vec<usize> = match selection {
        PathwaySelection::Fixed { k } => vec![*k],
        PathwaySelection::Sweep { max_k } => (1..=*max_k).collect(),
    };
    let mut silhouettes = Vec::new();
    let mut best: Option<(f64, pathways::PathwayClusters)> = None;
    for k in candidates {
        let c = pathways::cluster(&split.train, &profiles, &split.departments, k, seed)
            .map_err(stage("cluster pathways"))?;
        let s = c.silhouette(&split.train).map_err(stage("cluster pathways"))?;
        silhouettes.push((k, s));
        if best.as_ref().map_or(true, |(b, _)| s > *b) {
            best = Some((s, c));
        }
    }
    let (_, clusters) = best.ok_or_else(|| HarnessError::InvalidScenario("no pathway candidates".into()))?;
    let n = profiles.len() as f64;
    let hits = profiles
        .iter()
        .zip(&clusters.labels)
        .filter(|(p, &l)| clusters.assign(p) == l)
        .count() as f64;
    let largest = clusters.clusters.iter().map(|c| c.members).max().unwrap_or(0) as f64;
    let choice = PathwayChoice {
        k: clusters.k,
        silhouettes,
        assignment_accuracy: hits / n,
        majority_baseline: largest / n,
    };
    let useful = clusters.k > 1 && choice.assignment_accuracy >= choice.majority_baseline + ASSIGNMENT_MARGIN;
    if useful {
        Ok((PathwayModel::Clusters(clusters), choice))
    } else {
        Ok((
            PathwayModel::Global(clusters.global),
            PathwayChoice { k: 1, ..choice },
        ))
    }
}

pub fn fit_stack_b(
    split: &Split,
    scenario: &ScenarioConfig,
) -> Result<(Stack, InflowChoice, PathwayChoice), HarnessError> {
    let (forecaster, inflow_choice) = choose_forecaster(split, scenario)?;
    let (pathways, pathway_choice) = choose_pathways(split, &scenario.stack_b.pathways, scenario.seed)?;
    let b = &scenario.stack_b;
    let stack = fit_stack(split, scenario, &forecaster, &b.los, &b.cot, pathways)?;
    Ok((stack, inflow_choice, pathway_choice))
}

pub fn sim_config(split: &Split, scenario: &ScenarioConfig, stack: &Stack, seed: u64) -> SimConfig {
    SimConfig {
        departments: split
            .departments
            .iter()
            .map(|d| DepartmentSpec {
                name: d.clone(),
                bed_capacity: scenario.capacities.get(d).copied(),
            })
            .collect(),
        start: split.t,
        horizon: split.horizon,
        warm_up: split.t + scenario.warm_up,
        arrival_driver: ArrivalDriver::ForecastDriven {
            forecast: stack.forecast.clone(),
            bucket_width: scenario.bucket_width,
            deterministic: false,
        },
        los_models: stack.los.clone(),
        cot_model: Some(stack.cot.clone()),
        pathway_model: stack.pathways.clone(),
        profile_source: ProfileSource::Empirical {
            profiles: split.train_profiles(),
        },
        seed,
        replications: scenario.replications,
        summary_bucket: scenario.census_bucket,
    }
}

/// Census step series per department from stays of `trajectories`, by
/// sweep-line over enter (+1) and exit (-1) events; exits sort first at ties.
pub fn truth_census(
    trajectories: &[Trajectory],
    departments: &[String],
    from: f64,
) -> Vec<stats::StepSeries> {
    departments
        .iter()
        .map(|d| {
            let mut events: Vec<(f64, i32)> = Vec::new();
            for t in trajectories {
                for s in t.stays.iter().filter(|s| &s.department == d) {
                    events.push((s.enter_time, 1));
                    events.push((s.exit_time, -1));
                }
            }
            events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut level: i64 = 0;
            let mut series = vec![(from, 0u32)];
            for (time, delta) in events {
                level += delta as i64;
                if time <= from {
                    series[0].1 = level as u32;
                } else {
                    series.push((time, level as u32));
                }
            }
            series
        })
        .collect()
}

/// Independent reconstruction: per bucket, the summed overlap of every stay
/// with the bucket divided by the bucket length.
pub fn overlap_census(
    trajectories: &[Trajectory],
    department: &str,
    from: f64,
    to: f64,
    width: f64,
) -> Vec<f64> {
    let n = ((to - from) / width - 1e-9).ceil().max(0.0) as usize;
    let mut out = vec![0.0; n];
    for t in trajectories {
        for s in t.stays.iter().filter(|s| s.department == department) {
            for (b, o) in out.iter_mut().enumerate() {
                let lo = from + b as f64 * width;
                let hi = (lo + width).min(to);
                let overlap = s.exit_time.min(hi) - s.enter_time.max(lo);
                if overlap > 0.0 {
                    *o += overlap / (hi - lo);
                }
            }
        }
    }
    out
}

/// Mean absolute difference of two equally long curves.
pub fn census_mae(sim: &[f64], truth: &[f64]) -> Result<f64, HarnessError> {
    if sim.len() != truth.len() || sim.is_empty() {
        return Err(HarnessError::WindowMismatch);
    }
    Ok(sim.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / sim.len() as f64)
}

/// Scoring targets derived once from the held-out patients.
struct Truth {
    from: f64,
    to: f64,
    width: f64,
    dept_buckets: Vec<Vec<f64>>,
    total_buckets: Vec<f64>,
    completed_stays: Vec<f64>,
    total_cost: f64,
    matrix: pathways::TransitionMatrix,
}

impl Truth {
    fn new(split: &Split, scored_from: f64, width: f64) -> Result<Truth, HarnessError> {
        let scored: Vec<Trajectory> = split
            .test
            .iter()
            .filter(|t| t.admission_time() >= scored_from)
            .cloned()
            .collect();
        let census = truth_census(&scored, &split.departments, scored_from);
        let dept_buckets: Vec<Vec<f64>> = census
            .iter()
            .map(|s| stats::bucket_means(s, scored_from, split.horizon, width))
            .collect();
        let total_buckets = (0..dept_buckets[0].len())
            .map(|b| dept_buckets.iter().map(|d| d[b]).sum())
            .collect();
        let completed_stays = scored
            .iter()
            .flat_map(|t| &t.stays)
            .filter(|s| s.exit_time < split.horizon)
            .map(EventLogEntry::los)
            .collect();
        let discharged: Vec<Trajectory> = scored
            .iter()
            .filter(|t| t.discharge_time() < split.horizon)
            .cloned()
            .collect();
        Ok(Truth {
            from: scored_from,
            to: split.horizon,
            width,
            dept_buckets,
            total_buckets,
            completed_stays,
            total_cost: discharged.iter().map(Trajectory::total_cost).sum(),
            matrix: pathways::fit_transition_matrix(&discharged, &split.departments)
                .map_err(stage("truth pathways"))?,
        })
    }
}

fn sim_trajectories(results: &[SimResult]) -> Vec<Trajectory> {
    results
        .iter()
        .flat_map(|r| &r.patients)
        .filter(|p| p.discharge.is_some() && !p.stays.is_empty())
        .map(|p| Trajectory {
            patient_id: p.patient_id.clone(),
            stays: p
                .stays
                .iter()
                .map(|s| EventLogEntry {
                    patient_id: p.patient_id.clone(),
                    department: s.department.clone(),
                    enter_time: s.started.unwrap_or(s.requested),
                    exit_time: s.ended.unwrap_or(s.requested),
                    cost: 0.0,
                })
                .collect(),
        })
        .collect()
}

fn score(
    split: &Split,
    truth: &Truth,
    stack: &Stack,
    inflow_metrics: MetricReport,
    results: &[SimResult],
) -> Result<StackMetrics, HarnessError> {
    let r = results.len() as f64;
    let mean_curve = |per_run: Vec<Vec<f64>>| -> Vec<f64> {
        let n = per_run[0].len();
        (0..n).map(|b| per_run.iter().map(|c| c[b]).sum::<f64>() / r).collect()
    };
    let total = mean_curve(results.iter().map(|x| x.total_bucket_means(truth.width)).collect());
    let mut census = BTreeMap::new();
    for (d, name) in split.departments.iter().enumerate() {
        let curve = mean_curve(
            results
                .iter()
                .map(|x| stats::bucket_means(&x.departments[d].census, truth.from, truth.to, truth.width))
                .collect(),
        );
        census.insert(name.clone(), census_mae(&curve, &truth.dept_buckets[d])?);
    }
    let sim_stays: Vec<f64> = results
        .iter()
        .flat_map(|x| &x.patients)
        .flat_map(|p| &p.stays)
        .filter_map(|s| s.los())
        .collect();
    let los_ks = estimators::ks_statistic(&sim_stays, &truth.completed_stays).map_err(stage("score LoS"))?;
    let sim_cost = results
        .iter()
        .flat_map(|x| &x.patients)
        .filter_map(|p| p.cost)
        .sum::<f64>()
        / r;
    let sim_matrix = pathways::fit_transition_matrix(&sim_trajectories(results), &split.departments)
        .map_err(stage("score pathways"))?;
    Ok(StackMetrics {
        inflow_model: stack.inflow_model.clone(),
        inflow: inflow_metrics,
        census_mae_total: census_mae(&total, &truth.total_buckets)?,
        census_mae: census,
        los_ks,
        cot_relative_error: if truth.total_cost > 0.0 {
            (sim_cost - truth.total_cost).abs() / truth.total_cost
        } else {
            sim_cost
        },
        pathway_tv: pathways::visit_weighted_tv(&truth.matrix, &sim_matrix),
        walk_caps: results.iter().map(|x| x.aggregate.walk_caps).sum(),
    })
}

/// Everything produced by one experiment.
pub struct Experiment {
    pub report: ComparisonReport,
    pub stack_a: Stack,
    pub stack_b: Stack,
    pub results_a: Vec<SimResult>,
    pub results_b: Vec<SimResult>,
    pub split: Split,
}

pub fn run_experiment(scenario: &ScenarioConfig, jobs: usize) -> Result<Experiment, HarnessError> {
    scenario.validate()?;
    let oracle = synthehr::generate(&scenario.generator).map_err(stage("generate"))?;
    let split = Split::new(scenario, &oracle.entries, &oracle.profiles)?;

    let mut specs = vec![InflowSpec::HomogeneousPoisson, scenario.stack_b.forecaster.clone()];
    specs.extend(scenario.extra_forecasters.iter().cloned());
    let backtests =
        inflow::backtest(&split.series, scenario.split_fraction, &specs).map_err(stage("inflow backtest"))?;

    let stack_a = fit_stack_a(&split, scenario)?;
    let (stack_b, inflow_choice, pathway_choice) = fit_stack_b(&split, scenario)?;
    let b_inflow = &backtests[if inflow_choice.use_candidate { 1 } else { 0 }];

    // both stacks share the replication streams
    let (results_a, _) = engine::replicate(&sim_config(&split, scenario, &stack_a, scenario.seed), jobs)
        .map_err(stage("simulate A"))?;
    let (results_b, _) = engine::replicate(&sim_config(&split, scenario, &stack_b, scenario.seed), jobs)
        .map_err(stage("simulate B"))?;

    let scored_from = split.t + scenario.warm_up;
    let truth = Truth::new(&split, scored_from, scenario.census_bucket.hours())?;
    let a = score(&split, &truth, &stack_a, backtests[0].metrics.clone(), &results_a)?;
    let b = score(&split, &truth, &stack_b, b_inflow.metrics.clone(), &results_b)?;
    let report = ComparisonReport {
        scenario: scenario.name.clone(),
        split_time: split.t,
        horizon: split.horizon,
        scored_from,
        replications: scenario.replications,
        train_admissions: split.train.len(),
        test_admissions: split.test.len(),
        inflow_backtest: backtests
            .iter()
            .map(|r| InflowScore {
                model: r.model.clone(),
                metrics: r.metrics.clone(),
            })
            .collect(),
        b_beats_a: Verdicts::from_metrics(&a, &b),
        census_mae_ratio: if a.census_mae_total > 0.0 {
            b.census_mae_total / a.census_mae_total
        } else {
            f64::INFINITY
        },
        stack_a: a,
        stack_b: b,
        inflow_choice,
        pathway_choice,
        fingerprint_a: stack_a.fingerprints(),
        fingerprint_b: stack_b.fingerprints(),
    };
    Ok(Experiment {
        report,
        stack_a,
        stack_b,
        results_a,
        results_b,
        split,
    })
}

impl Experiment {
    pub fn inflow_csv(&self) -> String {
        let head = (self.split.t / self.split.series.bucket_width.hours()).round() as usize;
        let mut s = String::from("bucket_start,actual,stack_a,stack_b\n");
        for (i, (a, b)) in self.stack_a.forecast.iter().zip(&self.stack_b.forecast).enumerate() {
            let k = head + i;
            if k >= self.split.series.len() {
                break;
            }
            let _ = writeln!(
                s,
                "{:.6},{},{a:.6},{b:.6}",
                self.split.series.bucket_start(k),
                self.split.series.counts[k]
            );
        }
        s
    }

    pub fn census_csv(&self, width: f64) -> String {
        let truth = Truth::new(&self.split, self.report.scored_from, width).expect("scored before");
        let mean = |rs: &[SimResult]| -> Vec<f64> {
            let per: Vec<Vec<f64>> = rs.iter().map(|x| x.total_bucket_means(width)).collect();
            (0..per[0].len())
                .map(|b| per.iter().map(|c| c[b]).sum::<f64>() / rs.len() as f64)
                .collect()
        };
        let (a, b) = (mean(&self.results_a), mean(&self.results_b));
        let mut s = String::from("bucket_start,truth,stack_a,stack_b\n");
        for (i, t) in truth.total_buckets.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:.6},{t:.6},{:.6},{:.6}",
                truth.from + i as f64 * width,
                a[i],
                b[i]
            );
        }
        s
    }

    /// Log-spaced histogram of completed stay lengths (fractions per bin).
    pub fn los_hist_csv(&self) -> String {
        let truth = Truth::new(&self.split, self.report.scored_from, 24.0).expect("scored before");
        let sim = |rs: &[SimResult]| -> Vec<f64> {
            rs.iter()
                .flat_map(|x| &x.patients)
                .flat_map(|p| &p.stays)
                .filter_map(|s| s.los())
                .collect()
        };
        let edges: Vec<f64> = (0..=40).map(|i| 10f64.powf(-1.0 + i as f64 * 0.1)).collect();
        let hist = |v: &[f64]| -> Vec<f64> {
            let mut h = vec![0.0; edges.len() - 1];
            for &x in v {
                if let Some(b) = edges.windows(2).position(|w| x >= w[0] && x < w[1]) {
                    h[b] += 1.0;
                }
            }
            let n = v.len().max(1) as f64;
            h.iter().map(|c| c / n).collect()
        };
        let (t, a, b) = (
            hist(&truth.completed_stays),
            hist(&sim(&self.results_a)),
            hist(&sim(&self.results_b)),
        );
        let mut s = String::from("bin_lo,bin_hi,truth,stack_a,stack_b\n");
        for i in 0..t.len() {
            let _ = writeln!(
                s,
                "{:.6},{:.6},{:.6},{:.6},{:.6}",
                edges[i],
                edges[i + 1],
                t[i],
                a[i],
                b[i]
            );
        }
        s
    }

    pub fn report_json(&self) -> String {
        serde_json::to_string_pretty(&self.report).expect("serializable")
    }

    /// Writes `report.json` and the plot-ready CSVs into `dir`.
    pub fn write_to(&self, dir: &Path, census_width: f64) -> Result<(), HarnessError> {
        let io = |e: std::io::Error| HarnessError::Io(e.to_string());
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("report.json"), self.report_json()).map_err(io)?;
        std::fs::write(dir.join("inflow_forecasts.csv"), self.inflow_csv()).map_err(io)?;
        std::fs::write(dir.join("census_compare.csv"), self.census_csv(census_width)).map_err(io)?;
        std::fs::write(dir.join("los_hist.csv"), self.los_hist_csv()).map_err(io)?;
        Ok(())
    }
}

/// Human-readable digest of a report.
pub fn render_report(r: &ComparisonReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario {}  (split at {:.0} h of {:.0} h, R = {})", r.scenario, r.split_time, r.horizon, r.replications);
    let _ = writeln!(s, "admissions: {} train, {} held out", r.train_admissions, r.test_admissions);
    let _ = writeln!(s, "\ninflow backtest");
    for b in &r.inflow_backtest {
        let _ = writeln!(s, "  {:<40} MAPE {:>7.2}%  MAE {:>8.3}", b.model, b.metrics.mape_percent, b.metrics.mae);
    }
    let _ = writeln!(s, "\n{:<22}{:>14}{:>14}  B better", "metric", "stack A", "stack B");
    let row = |s: &mut String, name: &str, a: f64, b: f64, v: bool| {
        let _ = writeln!(s, "{name:<22}{a:>14.4}{b:>14.4}  {}", if v { "yes" } else { "no" });
    };
    let (a, b, v) = (&r.stack_a, &r.stack_b, &r.b_beats_a);
    row(&mut s, "inflow MAPE %", a.inflow.mape_percent, b.inflow.mape_percent, v.inflow_mape);
    row(&mut s, "census MAE", a.census_mae_total, b.census_mae_total, v.census_mae);
    row(&mut s, "LoS KS", a.los_ks, b.los_ks, v.los_ks);
    row(&mut s, "CoT relative error", a.cot_relative_error, b.cot_relative_error, v.cot_relative_error);
    row(&mut s, "pathway TV", a.pathway_tv, b.pathway_tv, v.pathway_tv);
    let _ = writeln!(s, "\ncensus MAE ratio B/A: {:.3}", r.census_mae_ratio);
    let ic = &r.inflow_choice;
    let _ = writeln!(
        s,
        "stack B inflow: {} (validation MAPE {:.2}% vs baseline {:.2}%)",
        if ic.use_candidate { ic.candidate.as_str() } else { "homogeneous_poisson" },
        ic.candidate_mape,
        ic.baseline_mape
    );
    let _ = writeln!(s, "pathway clusters: k = {}", r.pathway_choice.k);
    s
}
