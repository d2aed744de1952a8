//! `patientflow` command-line front end.
//!
//! Data goes to stdout, diagnostics to stderr. Exit codes: 0 success, 2 usage
//! or configuration error, 3 data error, 4 numeric failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use patientflow::domain::{self, BucketWidth};
use patientflow::engine::{self, SimConfig};
use patientflow::estimators::{Estimator, EstimatorSpec, Feature, TargetKind};
use patientflow::harness::{self, ComparisonReport, ScenarioConfig};
use patientflow::inflow::{self, CalendarSpec, InflowModel, InflowSpec};
use patientflow::pathways::{self, PathwayModel};
use patientflow::synthehr::GeneratorConfig;
use patientflow::ErrorClass;

#[derive(Parser)]
#[command(name = "patientflow", version, about = "Data-driven hospital patient-flow simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic event log and its ground truth.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit one sub-model to an event log.
    Fit {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long)]
        out: PathBuf,
        /// Required by the stochastic fitters (mixture, clusters).
        #[arg(long)]
        seed: Option<u64>,
        /// Estimator target.
        #[arg(long, value_enum, default_value_t = Target::Los)]
        target: Target,
        /// Fit LoS for this department only.
        #[arg(long)]
        department: Option<String>,
        /// Inflow bucket width.
        #[arg(long, default_value = "hour")]
        bucket: BucketWidth,
        /// Seasonal period in buckets.
        #[arg(long, default_value_t = 168)]
        period: usize,
        /// Lags for lag regression.
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 24, 168])]
        lags: Vec<usize>,
        /// Mixture components or pathway clusters.
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 4)]
        max_depth: usize,
        #[arg(long, default_value_t = 20)]
        min_leaf: usize,
    },
    /// Forecast `h` buckets ahead with a fitted inflow model.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        h: usize,
    },
    /// Run the simulation described by a config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare the stochastic and learned stacks on a scenario.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print a summary of a `compare` or `simulate` output directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelKind {
    Poisson,
    SeasonalNaive,
    HoltWinters,
    LagRegression,
    Lognormal,
    Gamma,
    Weibull,
    Mixture,
    Conditional,
    Tree,
    TransitionMatrix,
    Clusters,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Target {
    Los,
    Cot,
}

/// What `fit` writes.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
enum FittedModel {
    Inflow { model: InflowModel },
    Los { models: BTreeMap<String, Estimator> },
    Cot { model: Estimator },
    Pathways { model: PathwayModel },
}

#[derive(Debug)]
struct Failure {
    class: ErrorClass,
    message: String,
}

impl From<patientflow::Error> for Failure {
    fn from(e: patientflow::Error) -> Self {
        Failure {
            class: e.class(),
            message: e.to_string(),
        }
    }
}

fn lib<E: Into<patientflow::Error>>(e: E) -> Failure {
    Failure::from(e.into())
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        class: ErrorClass::Config,
        message: message.into(),
    }
}

fn data_error(message: impl Into<String>) -> Failure {
    Failure {
        class: ErrorClass::Data,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| config_error(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_str(&read(path)?).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn require_seed(seed: Option<u64>, kind: ModelKind) -> Result<u64, Failure> {
    seed.ok_or_else(|| config_error(format!("--seed is required for {kind:?}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.class.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth { config, out, seed } => {
            let mut cfg = GeneratorConfig::from_json(&read(&config)?).map_err(lib)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let output = patientflow::synthehr::generate(&cfg).map_err(lib)?;
            output.write_to(&out).map_err(lib)?;
            eprintln!(
                "{} patients, {} stays written to {}",
                output.ground_truth.n_patients,
                output.ground_truth.n_stays,
                out.display()
            );
            Ok(())
        }
        Command::Fit {
            log,
            model,
            out,
            seed,
            target,
            department,
            bucket,
            period,
            lags,
            k,
            max_depth,
            min_leaf,
        } => {
            let (entries, profiles) = domain::parse_event_log(&read(&log)?).map_err(lib)?;
            let fitted = match model {
                ModelKind::Poisson | ModelKind::SeasonalNaive | ModelKind::HoltWinters | ModelKind::LagRegression => {
                    let spec = match model {
                        ModelKind::Poisson => InflowSpec::HomogeneousPoisson,
                        ModelKind::SeasonalNaive => InflowSpec::SeasonalNaive { period },
                        ModelKind::HoltWinters => InflowSpec::HoltWinters { period, smoothing: None },
                        _ => InflowSpec::LagRegression {
                            lags,
                            calendar: CalendarSpec {
                                hour_of_day: bucket == BucketWidth::Hour,
                                day_of_week: matches!(bucket, BucketWidth::Hour | BucketWidth::Day),
                                month_of_year: false,
                            },
                        },
                    };
                    let w = bucket.hours();
                    let last = domain::admission_times(&entries)
                        .values()
                        .cloned()
                        .fold(0.0, f64::max);
                    let horizon = ((last / w).floor() + 1.0) * w;
                    let series = domain::bucketize(&entries, bucket, 0.0, horizon).map_err(lib)?;
                    FittedModel::Inflow {
                        model: spec.fit(&series).map_err(lib)?,
                    }
                }
                ModelKind::TransitionMatrix | ModelKind::Clusters => {
                    let trajs = domain::extract_trajectories(&entries).map_err(lib)?;
                    let departments: Vec<String> = trajs
                        .iter()
                        .flat_map(|t| t.departments().map(str::to_string))
                        .collect::<std::collections::BTreeSet<_>>()
                        .into_iter()
                        .collect();
                    let model = if let ModelKind::Clusters = model {
                        let by_id: BTreeMap<&str, &domain::PatientProfile> =
                            profiles.iter().map(|p| (p.patient_id.as_str(), p)).collect();
                        let ps: Vec<domain::PatientProfile> =
                            trajs.iter().map(|t| by_id[t.patient_id.as_str()].clone()).collect();
                        PathwayModel::Clusters(
                            pathways::cluster(&trajs, &ps, &departments, k, require_seed(seed, model)?).map_err(lib)?,
                        )
                    } else {
                        PathwayModel::Global(pathways::fit_transition_matrix(&trajs, &departments).map_err(lib)?)
                    };
                    FittedModel::Pathways { model }
                }
                _ => {
                    let spec = match model {
                        ModelKind::Lognormal => EstimatorSpec::Lognormal,
                        ModelKind::Gamma => EstimatorSpec::Gamma,
                        ModelKind::Weibull => EstimatorSpec::Weibull,
                        ModelKind::Mixture => EstimatorSpec::Mixture {
                            k,
                            seed: require_seed(seed, model)?,
                        },
                        ModelKind::Conditional => EstimatorSpec::Conditional {
                            features: Feature::ALL.to_vec(),
                        },
                        _ => EstimatorSpec::Tree { max_depth, min_leaf },
                    };
                    fit_estimator(&entries, &profiles, &spec, target, department.as_deref())?
                }
            };
            write(&out, &serde_json::to_string_pretty(&fitted).expect("serializable"))
        }
        Command::Forecast { model, h } => {
            let text = read(&model)?;
            let fitted: InflowModel = match serde_json::from_str::<FittedModel>(&text) {
                Ok(FittedModel::Inflow { model }) => model,
                Ok(_) => return Err(config_error("not an inflow model")),
                Err(_) => serde_json::from_str(&text)
                    .map_err(|e| config_error(format!("{}: {e}", model.display())))?,
            };
            let mut s = String::new();
            for v in inflow::forecast(&fitted, h) {
                s.push_str(&format!("{v:.6}\n"));
            }
            print!("{s}");
            Ok(())
        }
        Command::Simulate { config, out, seed, jobs } => {
            let mut cfg: SimConfig = parse_json(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (results, summary) = engine::replicate(&cfg, jobs).map_err(lib)?;
            if results.len() == 1 {
                results[0].export(&out).map_err(lib)?;
            } else {
                for (r, res) in results.iter().enumerate() {
                    res.export(&out.join(format!("rep_{r:03}"))).map_err(lib)?;
                }
            }
            write(
                &out.join("replication_summary.json"),
                &serde_json::to_string_pretty(&summary).expect("serializable"),
            )
        }
        Command::Compare { scenario, out, seed, jobs } => {
            let mut sc = ScenarioConfig::from_json(&read(&scenario)?).map_err(lib)?;
            if let Some(s) = seed {
                sc.seed = s;
            }
            let experiment = harness::run_experiment(&sc, jobs).map_err(lib)?;
            experiment
                .write_to(&out, sc.census_bucket.hours())
                .map_err(lib)?;
            eprintln!("report written to {}", out.join("report.json").display());
            Ok(())
        }
        Command::Report { input } => {
            let report = input.join("report.json");
            if report.exists() {
                let r: ComparisonReport = parse_json(&report)?;
                print!("{}", harness::render_report(&r));
                return Ok(());
            }
            let summary = input.join("replication_summary.json");
            if summary.exists() {
                let s: engine::ReplicationSummary = parse_json(&summary)?;
                print!("{}", render_summary(&s));
                return Ok(());
            }
            Err(config_error(format!(
                "{} holds neither report.json nor replication_summary.json",
                input.display()
            )))
        }
    }
}

fn fit_estimator(
    entries: &[domain::EventLogEntry],
    profiles: &[domain::PatientProfile],
    spec: &EstimatorSpec,
    target: Target,
    department: Option<&str>,
) -> Result<FittedModel, Failure> {
    let by_id: BTreeMap<&str, &domain::PatientProfile> =
        profiles.iter().map(|p| (p.patient_id.as_str(), p)).collect();
    match target {
        Target::Cot => {
            let trajs = domain::extract_trajectories(entries).map_err(lib)?;
            let ps: Vec<domain::PatientProfile> =
                trajs.iter().map(|t| by_id[t.patient_id.as_str()].clone()).collect();
            let ys: Vec<f64> = trajs.iter().map(|t| t.total_cost()).collect();
            Ok(FittedModel::Cot {
                model: spec.fit(&ps, &ys, TargetKind::Cot).map_err(lib)?,
            })
        }
        Target::Los => {
            let mut groups: BTreeMap<&str, (Vec<domain::PatientProfile>, Vec<f64>)> = BTreeMap::new();
            for e in entries {
                if department.map_or(true, |d| d == e.department) {
                    let g = groups.entry(e.department.as_str()).or_default();
                    g.0.push(by_id[e.patient_id.as_str()].clone());
                    g.1.push(e.los());
                }
            }
            if groups.is_empty() {
                return Err(data_error("no stays match the requested department"));
            }
            let mut models = BTreeMap::new();
            for (d, (ps, ys)) in groups {
                models.insert(d.to_string(), spec.fit(&ps, &ys, TargetKind::Los).map_err(lib)?);
            }
            Ok(FittedModel::Los { models })
        }
    }
}

fn render_summary(s: &engine::ReplicationSummary) -> String {
    let mut out = format!(
        "replications {}  mean admissions {:.1}\n{:<12}{:>14}{:>14}\n",
        s.replications, s.mean_admissions, "department", "mean census", "utilization"
    );
    for d in &s.departments {
        let u = d.mean_utilization.map_or("-".to_string(), |u| format!("{u:.3}"));
        out.push_str(&format!("{:<12}{:>14.3}{:>14}\n", d.name, d.mean_census, u));
    }
    out
}
