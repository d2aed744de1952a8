//! Simulation output: census step series, patient records and exports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::domain::PatientProfile;

/// `(time, occupied)` steps; each value holds until the next step or the
/// horizon.
pub type StepSeries = Vec<(f64, u32)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StayRecord {
    pub department: String,
    pub requested: f64,
    pub started: Option<f64>,
    pub ended: Option<f64>,
}

impl StayRecord {
    pub fn los(&self) -> Option<f64> {
        Some(self.ended? - self.started?)
    }

    pub fn wait(&self) -> Option<f64> {
        Some(self.started? - self.requested)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub profile: PatientProfile,
    pub admission: f64,
    pub discharge: Option<f64>,
    pub stays: Vec<StayRecord>,
    pub cost: Option<f64>,
    /// Discharged by the step cap rather than the pathway.
    pub capped: bool,
}

impl PatientRecord {
    /// Sum of completed stay lengths.
    pub fn total_los(&self) -> f64 {
        self.stays.iter().filter_map(StayRecord::los).sum()
    }

    pub fn total_wait(&self) -> f64 {
        self.stays.iter().filter_map(StayRecord::wait).sum()
    }

    pub fn trajectory_label(&self) -> String {
        self.stays
            .iter()
            .map(|s| s.department.as_str())
            .collect::<Vec<_>>()
            .join("|")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepartmentStats {
    pub name: String,
    pub capacity: Option<u32>,
    pub census: StepSeries,
    /// Time-averaged census over `[warm_up, horizon]`.
    pub mean_census: f64,
    /// `mean_census / capacity` for bounded departments.
    pub utilization: Option<f64>,
    pub max_occupied: u32,
}

impl DepartmentStats {
    pub fn new(name: String, capacity: Option<u32>, census: StepSeries, from: f64, to: f64) -> Self {
        let mean_census = time_average(&census, from, to);
        DepartmentStats {
            name,
            capacity,
            max_occupied: census.iter().map(|s| s.1).max().unwrap_or(0),
            utilization: capacity.map(|c| mean_census / c as f64),
            mean_census,
            census,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregate {
    pub admissions: usize,
    pub discharges: usize,
    pub in_system: usize,
    pub walk_caps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub start: f64,
    pub warm_up: f64,
    pub horizon: f64,
    pub departments: Vec<DepartmentStats>,
    /// Patients admitted at or after `warm_up`, in admission order.
    pub patients: Vec<PatientRecord>,
    pub aggregate: Aggregate,
}

pub fn aggregate(patients: &[PatientRecord]) -> Aggregate {
    let discharges = patients.iter().filter(|p| p.discharge.is_some()).count();
    Aggregate {
        admissions: patients.len(),
        discharges,
        in_system: patients.len() - discharges,
        walk_caps: patients.iter().filter(|p| p.capped).count(),
    }
}

/// Integral of a step series over `[from, to]` divided by its length.
pub fn time_average(series: &[(f64, u32)], from: f64, to: f64) -> f64 {
    if to <= from {
        return 0.0;
    }
    integral(series, from, to) / (to - from)
}

fn integral(series: &[(f64, u32)], from: f64, to: f64) -> f64 {
    let mut total = 0.0;
    for (i, &(t, v)) in series.iter().enumerate() {
        let end = series.get(i + 1).map_or(f64::INFINITY, |s| s.0);
        let lo = t.max(from);
        let hi = end.min(to);
        if hi > lo {
            total += v as f64 * (hi - lo);
        }
    }
    total
}

/// Mean level of a step series in consecutive buckets of `width` hours from
/// `from`; the last bucket may be partial.
pub fn bucket_means(series: &[(f64, u32)], from: f64, to: f64, width: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut lo = from;
    while lo < to - 1e-9 {
        let hi = (lo + width).min(to);
        out.push(time_average(series, lo, hi));
        lo += width;
    }
    out
}

impl SimResult {
    /// Bucket means of the summed census of all departments.
    pub fn total_bucket_means(&self, width: f64) -> Vec<f64> {
        let per: Vec<Vec<f64>> = self
            .departments
            .iter()
            .map(|d| bucket_means(&d.census, self.warm_up, self.horizon, width))
            .collect();
        let n = per.first().map_or(0, Vec::len);
        (0..n).map(|b| per.iter().map(|d| d[b]).sum()).collect()
    }

    /// The result this run would have produced with a later warm-up.
    pub fn restrict(&self, warm_up: f64) -> SimResult {
        assert!(warm_up >= self.warm_up && warm_up < self.horizon);
        let departments = self
            .departments
            .iter()
            .map(|d| {
                let census = if warm_up == self.warm_up {
                    d.census.clone()
                } else {
                    let at = d
                        .census
                        .iter()
                        .take_while(|s| s.0 < warm_up)
                        .last()
                        .map_or(0, |s| s.1);
                    let mut c = vec![(warm_up, at)];
                    c.extend(d.census.iter().filter(|s| s.0 >= warm_up).copied());
                    c
                };
                DepartmentStats::new(d.name.clone(), d.capacity, census, warm_up, self.horizon)
            })
            .collect();
        let patients: Vec<PatientRecord> = self
            .patients
            .iter()
            .filter(|p| p.admission >= warm_up)
            .cloned()
            .collect();
        SimResult {
            start: self.start,
            warm_up,
            horizon: self.horizon,
            departments,
            aggregate: aggregate(&patients),
            patients,
        }
    }

    pub fn census_csv(&self) -> String {
        let mut s = String::from("time,department,occupied\n");
        let mut rows: Vec<(f64, usize, u32)> = Vec::new();
        for (d, dep) in self.departments.iter().enumerate() {
            rows.extend(dep.census.iter().map(|&(t, v)| (t, d, v)));
        }
        // stable: equal times keep department order, then log order
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (t, d, v) in rows {
            let _ = writeln!(s, "{t:.6},{},{v}", self.departments[d].name);
        }
        s
    }

    pub fn patients_csv(&self) -> String {
        let mut s = String::from("patient_id,admission,discharge,los,wait,cost,trajectory\n");
        for p in &self.patients {
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
            let _ = writeln!(
                s,
                "{},{:.6},{},{:.6},{:.6},{},{}",
                p.patient_id,
                p.admission,
                opt(p.discharge),
                p.total_los(),
                p.total_wait(),
                opt(p.cost),
                p.trajectory_label()
            );
        }
        s
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "start": self.start,
            "warm_up": self.warm_up,
            "horizon": self.horizon,
            "admissions": self.aggregate.admissions,
            "discharges": self.aggregate.discharges,
            "in_system": self.aggregate.in_system,
            "walk_caps": self.aggregate.walk_caps,
            "departments": self.departments.iter().map(|d| serde_json::json!({
                "name": d.name,
                "capacity": d.capacity,
                "mean_census": d.mean_census,
                "utilization": d.utilization,
                "max_occupied": d.max_occupied,
            })).collect::<Vec<_>>(),
        })
    }

    /// Writes `census.csv`, `patients.csv` and `summary.json` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<(), EngineError> {
        let io = |e: std::io::Error| EngineError::Io(e.to_string());
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("census.csv"), self.census_csv()).map_err(io)?;
        std::fs::write(dir.join("patients.csv"), self.patients_csv()).map_err(io)?;
        let summary = serde_json::to_string_pretty(&self.summary_json()).expect("serializable");
        std::fs::write(dir.join("summary.json"), summary).map_err(io)?;
        Ok(())
    }
}
