//! Discrete-event patient-flow simulator.
//!
//! One run is single-threaded: events are popped in `(time, seq)` order, where
//! `seq` is a monotone counter assigned at scheduling time.

pub mod arrivals;
pub mod replicate;
pub mod stats;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BucketWidth, DepartmentSpec, PatientProfile};
use crate::estimators::Estimator;
use crate::pathways::{self, PathwayModel};
use crate::rng::{self, SimRng};
use crate::synthehr::{self, AttributeConfig, MAX_STEPS};

pub use arrivals::{inject_arrivals, ArrivalDriver};
pub use replicate::{replicate, ReplicationSummary};
pub use stats::{PatientRecord, SimResult, StayRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("department {0:?} has no LoS model or no department spec")]
    ModelIncompatible(String),
    #[error("forecast covers {got} buckets but the horizon needs {needed}")]
    ForecastTooShort { needed: usize, got: usize },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Where admitted patients' attributes come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileSource {
    Generator { attributes: AttributeConfig },
    /// Uniform resampling of observed profiles.
    Empirical { profiles: Vec<PatientProfile> },
}

impl ProfileSource {
    fn sample(&self, patient_id: String, rng: &mut SimRng) -> PatientProfile {
        match self {
            ProfileSource::Generator { attributes } => {
                synthehr::sample_profile_with_class(attributes, patient_id, rng).0
            }
            ProfileSource::Empirical { profiles } => {
                let mut p = profiles[rng.gen_range(0..profiles.len())].clone();
                p.patient_id = patient_id;
                p
            }
        }
    }
}

fn default_bucket() -> BucketWidth {
    BucketWidth::Day
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub departments: Vec<DepartmentSpec>,
    /// Clock value at which the (empty) hospital opens.
    #[serde(default)]
    pub start: f64,
    pub horizon: f64,
    /// Statistics cover patients admitted at or after this time and census
    /// over `[warm_up, horizon]`.
    pub warm_up: f64,
    pub arrival_driver: ArrivalDriver,
    pub los_models: BTreeMap<String, Estimator>,
    /// Admission-level cost model; without one, costs are not recorded.
    pub cot_model: Option<Estimator>,
    pub pathway_model: PathwayModel,
    pub profile_source: ProfileSource,
    pub seed: u64,
    pub replications: usize,
    /// Bucket used by the replication summary.
    #[serde(default = "default_bucket")]
    pub summary_bucket: BucketWidth,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.start <= self.warm_up && self.warm_up < self.horizon) {
            return Err(EngineError::InvalidConfig(format!(
                "need start <= warm_up < horizon, got {} / {} / {}",
                self.start, self.warm_up, self.horizon
            )));
        }
        if self.replications == 0 {
            return Err(EngineError::InvalidConfig("replications must be >= 1".into()));
        }
        if let ProfileSource::Empirical { profiles } = &self.profile_source {
            if profiles.is_empty() {
                return Err(EngineError::InvalidConfig("empty profile pool".into()));
            }
        }
        for d in self.pathway_model.departments() {
            if !self.los_models.contains_key(d) || !self.departments.iter().any(|s| &s.name == d) {
                return Err(EngineError::ModelIncompatible(d.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Arrival,
    /// Request a bed in a department (config index).
    Seize { patient: usize, department: usize },
    StayEnd { patient: usize, department: usize },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

struct DepartmentState {
    capacity: Option<u32>,
    occupied: u32,
    queue: VecDeque<usize>,
    census: stats::StepSeries,
}

impl DepartmentState {
    fn has_bed(&self) -> bool {
        self.capacity.map_or(true, |c| self.occupied < c)
    }
}

struct Patient {
    record: PatientRecord,
    /// Private stream for this patient's profile, route, LoS and CoT draws,
    /// so two configurations run on the same seed share them per arrival.
    rng: SimRng,
    /// Pathway state (index into the pathway model's alphabet).
    state: usize,
}

struct Sim<'a> {
    config: &'a SimConfig,
    patient_seed: u64,
    heap: BinaryHeap<Reverse<Event>>,
    seq: u64,
    clock: f64,
    recording: bool,
    departments: Vec<DepartmentState>,
    patients: Vec<Patient>,
    /// Pathway alphabet index -> config department index.
    dept_of_state: Vec<usize>,
    los: Vec<&'a Estimator>,
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.heap.push(Reverse(Event {
            time,
            seq: self.seq,
            kind,
        }));
        self.seq += 1;
    }

    fn log_census(&mut self, d: usize) {
        if self.recording {
            let dep = &mut self.departments[d];
            dep.census.push((self.clock, dep.occupied));
        }
    }

    fn start_recording(&mut self) {
        self.recording = true;
        let at = self.config.warm_up;
        for dep in &mut self.departments {
            dep.census.push((at, dep.occupied));
        }
    }

    /// Occupies a bed for `patient` now and schedules the end of the stay.
    fn occupy(&mut self, patient: usize, d: usize) {
        self.departments[d].occupied += 1;
        self.log_census(d);
        let p = &mut self.patients[patient];
        let los = self.los[d].sample(&p.record.profile, &mut p.rng);
        let stay = self.patients[patient]
            .record
            .stays
            .last_mut()
            .expect("stay was requested");
        stay.started = Some(self.clock);
        self.schedule(self.clock + los, EventKind::StayEnd { patient, department: d });
    }

    fn discharge(&mut self, patient: usize) {
        let p = &mut self.patients[patient];
        let cost = self
            .config
            .cot_model
            .as_ref()
            .map(|m| m.sample(&p.record.profile, &mut p.rng));
        let rec = &mut p.record;
        rec.discharge = Some(self.clock);
        rec.cost = cost;
    }

    /// Draws the patient's next pathway state and routes them.
    fn route(&mut self, patient: usize) {
        let p = &mut self.patients[patient];
        let (matrix, fallback) = self.config.pathway_model.matrices(&p.record.profile);
        let next = pathways::step(matrix, fallback, p.state, &mut p.rng);
        if next == matrix.discharge() {
            self.discharge(patient);
            return;
        }
        if self.patients[patient].record.stays.len() >= MAX_STEPS {
            self.patients[patient].record.capped = true;
            self.discharge(patient);
            return;
        }
        self.patients[patient].state = next;
        let d = self.dept_of_state[next];
        self.schedule(self.clock, EventKind::Seize { patient, department: d });
    }

    fn handle(&mut self, kind: EventKind) {
        match kind {
            EventKind::Arrival => {
                let n = self.patients.len();
                let id = format!("S{n:07}");
                let mut rng = rng::stream(self.patient_seed.wrapping_add(n as u64));
                let profile = self.config.profile_source.sample(id.clone(), &mut rng);
                let entry = self.config.pathway_model.matrices(&profile).0.entry();
                self.patients.push(Patient {
                    record: PatientRecord {
                        patient_id: id,
                        profile,
                        admission: self.clock,
                        discharge: None,
                        stays: Vec::new(),
                        cost: None,
                        capped: false,
                    },
                    state: entry,
                    rng,
                });
                self.route(self.patients.len() - 1);
            }
            EventKind::Seize { patient, department } => {
                self.patients[patient].record.stays.push(StayRecord {
                    department: self.config.departments[department].name.clone(),
                    requested: self.clock,
                    started: None,
                    ended: None,
                });
                if self.departments[department].has_bed() {
                    self.occupy(patient, department);
                } else {
                    self.departments[department].queue.push_back(patient);
                }
            }
            EventKind::StayEnd { patient, department } => {
                self.departments[department].occupied -= 1;
                self.log_census(department);
                if let Some(next) = self.departments[department].queue.pop_front() {
                    self.occupy(next, department);
                }
                self.patients[patient]
                    .record
                    .stays
                    .last_mut()
                    .expect("stay in progress")
                    .ended = Some(self.clock);
                self.route(patient);
            }
        }
    }
}

/// One replication on an explicit random stream.
pub fn run_with_rng(config: &SimConfig, mut rng: SimRng) -> Result<SimResult, EngineError> {
    config.validate()?;
    let patient_seed: u64 = rng.gen();
    let arrivals = inject_arrivals(&config.arrival_driver, config.start, config.horizon, &mut rng)?;
    let index: BTreeMap<&str, usize> = config
        .departments
        .iter()
        .enumerate()
        .map(|(i, d)| (d.name.as_str(), i))
        .collect();
    let dept_of_state: Vec<usize> = config
        .pathway_model
        .departments()
        .iter()
        .map(|d| index[d.as_str()])
        .collect();
    let mut los = Vec::with_capacity(config.departments.len());
    for d in &config.departments {
        // departments outside the pathway alphabet are never visited, so any
        // model stands in for them
        let m = config
            .los_models
            .get(&d.name)
            .or_else(|| config.los_models.values().next())
            .ok_or_else(|| EngineError::ModelIncompatible(d.name.clone()))?;
        los.push(m);
    }
    let mut sim = Sim {
        config,
        patient_seed,
        heap: BinaryHeap::with_capacity(arrivals.len()),
        seq: 0,
        clock: config.start,
        recording: false,
        departments: config
            .departments
            .iter()
            .map(|d| DepartmentState {
                capacity: d.bed_capacity,
                occupied: 0,
                queue: VecDeque::new(),
                census: Vec::new(),
            })
            .collect(),
        patients: Vec::with_capacity(arrivals.len()),
        dept_of_state,
        los,
    };
    for t in arrivals {
        sim.schedule(t, EventKind::Arrival);
    }
    while let Some(Reverse(ev)) = sim.heap.pop() {
        if ev.time >= config.horizon {
            break;
        }
        debug_assert!(ev.time >= sim.clock);
        if !sim.recording && ev.time >= config.warm_up {
            sim.start_recording();
        }
        sim.clock = ev.time;
        sim.handle(ev.kind);
    }
    if !sim.recording {
        sim.start_recording();
    }

    let patients: Vec<PatientRecord> = sim
        .patients
        .into_iter()
        .map(|p| p.record)
        .filter(|r| r.admission >= config.warm_up)
        .collect();
    let departments = config
        .departments
        .iter()
        .zip(sim.departments)
        .map(|(spec, st)| {
            stats::DepartmentStats::new(
                spec.name.clone(),
                spec.bed_capacity,
                st.census,
                config.warm_up,
                config.horizon,
            )
        })
        .collect();
    Ok(SimResult {
        start: config.start,
        warm_up: config.warm_up,
        horizon: config.horizon,
        departments,
        aggregate: stats::aggregate(&patients),
        patients,
    })
}

/// Replication 0 of `config`.
pub fn run(config: &SimConfig) -> Result<SimResult, EngineError> {
    run_with_rng(config, rng::substream(config.seed, 0))
}
