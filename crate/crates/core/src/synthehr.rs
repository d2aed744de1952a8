//! Seeded synthetic EHR generator.
//!
//! The generator is the ground truth every model in this crate is scored
//! against. Admissions follow a nonhomogeneous Poisson process with a linear
//! trend and hour-of-day, day-of-week and month-of-year multipliers. Each
//! admitted patient gets a latent severity class and a profile, then walks the
//! class's department transition matrix until discharge. Stay lengths are
//! lognormal with attribute effects in ln space; costs are linear in the stay
//! length plus noise.
//!
//! Calendar convention: hour of day is `floor(t) mod 24`, day of week
//! `floor(t / 24) mod 7` (day 0 is the epoch's weekday), month
//! `floor(t / 720) mod 12`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    quantize, write_event_log, DepartmentSpec, EventLogEntry, Gender, PatientProfile,
    MAX_AGE, MAX_COMORBIDITY,
};
use crate::rng::{self, SimRng};

/// Label of the absorbing discharge state in transition-matrix rows.
pub const DISCHARGE: &str = "DISCHARGE";

/// Walks longer than this are truncated.
pub const MAX_STEPS: usize = 50;

const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("time {0} h lies outside the generator horizon")]
    OutOfHorizon(f64),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Two-component normal mixture for age, truncated to `[0, 120]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeMixture {
    pub weight1: f64,
    pub mean1: f64,
    pub sd1: f64,
    pub mean2: f64,
    pub sd2: f64,
}

/// Poisson rate of the comorbidity count: `c0 + c1 * age`, clipped at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComorbidityLink {
    pub c0: f64,
    pub c1: f64,
}

impl ComorbidityLink {
    pub fn rate(&self, age: u32) -> f64 {
        (self.c0 + self.c1 * age as f64).max(0.0)
    }
}

/// Attribute samplers. Also used by the simulation engine to generate
/// arriving patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeConfig {
    pub age_mix: AgeMixture,
    /// Probability of `F`.
    pub gender_p: f64,
    pub comorbidity_rate_by_age: ComorbidityLink,
    /// Comorbidity link for the severe class; the mild link applies to both
    /// classes when absent.
    #[serde(default)]
    pub severe_comorbidity_rate: Option<ComorbidityLink>,
    pub drg_probs: BTreeMap<String, f64>,
    /// Probability of the severe class (class 1).
    pub severity_split: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosCoefficients {
    pub beta0: f64,
    pub beta_age: f64,
    pub beta_com: f64,
    #[serde(default)]
    pub drg_offsets: BTreeMap<String, f64>,
    #[serde(default)]
    pub department_offsets: BTreeMap<String, f64>,
    pub sigma_ln: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCoefficients {
    pub gamma0: f64,
    /// Cost per hour of stay.
    pub gamma1: f64,
    #[serde(default)]
    pub drg_offsets: BTreeMap<String, f64>,
    pub sigma: f64,
}

/// Row-stochastic matrix keyed `from -> to -> probability`. Rows are
/// departments; targets are departments or `DISCHARGE`.
pub type ClassMatrix = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub horizon: f64,
    /// Admissions per hour before profile and trend multipliers.
    pub base_rate: f64,
    /// Fractional rate change across the horizon.
    pub trend_slope: f64,
    pub hourly_profile: Vec<f64>,
    pub weekly_profile: Vec<f64>,
    pub monthly_profile: Vec<f64>,
    #[serde(flatten)]
    pub attributes: AttributeConfig,
    pub los_coeffs: LosCoefficients,
    pub cot_coeffs: CostCoefficients,
    pub departments: Vec<DepartmentSpec>,
    pub entry_department: String,
    /// One matrix per severity class: index 0 mild, 1 severe.
    pub transition_matrices: Vec<ClassMatrix>,
}

impl AttributeConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let m = &self.age_mix;
        check(
            (0.0..=1.0).contains(&m.weight1) && m.sd1 >= 0.0 && m.sd2 >= 0.0,
            "age_mix weight must lie in [0,1] and sds must be >= 0",
        )?;
        check(
            (0.0..=1.0).contains(&self.gender_p),
            "gender_p must lie in [0,1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.severity_split),
            "severity_split must lie in [0,1]",
        )?;
        check(!self.drg_probs.is_empty(), "drg_probs is empty")?;
        check(
            self.drg_probs.values().all(|&p| p >= 0.0),
            "drg_probs must be non-negative",
        )?;
        let total: f64 = self.drg_probs.values().sum();
        check(
            (total - 1.0).abs() <= PROB_TOL,
            "drg_probs must sum to 1",
        )
    }

    /// Analytic mean of the untruncated age mixture.
    pub fn mixture_age_mean(&self) -> f64 {
        let m = &self.age_mix;
        m.weight1 * m.mean1 + (1.0 - m.weight1) * m.mean2
    }
}

fn check(cond: bool, msg: &str) -> Result<(), SynthError> {
    if cond {
        Ok(())
    } else {
        Err(SynthError::InvalidConfig(msg.to_string()))
    }
}

impl GeneratorConfig {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let cfg: GeneratorConfig =
            serde_json::from_str(text).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn department_names(&self) -> Vec<String> {
        self.departments.iter().map(|d| d.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        check(self.horizon > 0.0, "horizon must be positive")?;
        check(self.base_rate > 0.0, "base_rate must be positive")?;
        check(self.trend_slope > -1.0, "trend_slope must exceed -1")?;
        for (name, profile, len) in [
            ("hourly_profile", &self.hourly_profile, 24),
            ("weekly_profile", &self.weekly_profile, 7),
            ("monthly_profile", &self.monthly_profile, 12),
        ] {
            check(
                profile.len() == len,
                &format!("{name} must have {len} entries"),
            )?;
            check(
                profile.iter().all(|&v| v > 0.0 && v.is_finite()),
                &format!("{name} must be strictly positive"),
            )?;
        }
        self.attributes.validate()?;
        check(self.los_coeffs.sigma_ln >= 0.0, "sigma_ln must be >= 0")?;
        check(self.cot_coeffs.sigma >= 0.0, "cot sigma must be >= 0")?;

        let names = self.department_names();
        check(!names.is_empty(), "no departments")?;
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        check(sorted.len() == names.len(), "department names must be unique")?;
        check(
            names.iter().all(|n| n != DISCHARGE),
            "DISCHARGE is reserved",
        )?;
        check(
            names.contains(&self.entry_department),
            "entry_department is not a department",
        )?;
        let classes = if self.attributes.severity_split > 0.0 { 2 } else { 1 };
        check(
            self.transition_matrices.len() >= classes,
            "need one transition matrix per severity class",
        )?;
        for (c, matrix) in self.transition_matrices.iter().enumerate() {
            for dept in &names {
                let row = matrix.get(dept).ok_or_else(|| {
                    SynthError::InvalidConfig(format!("class {c}: missing row {dept}"))
                })?;
                let mut total = 0.0;
                for (to, &p) in row {
                    check(
                        to == DISCHARGE || names.contains(to),
                        &format!("class {c}: unknown target {to}"),
                    )?;
                    check(p >= 0.0, &format!("class {c}: negative probability"))?;
                    total += p;
                }
                check(
                    (total - 1.0).abs() <= PROB_TOL,
                    &format!("class {c}: row {dept} must sum to 1"),
                )?;
            }
            if let Some(row) = matrix.get(DISCHARGE) {
                let absorbing = row.iter().all(|(to, &p)| {
                    if to == DISCHARGE {
                        (p - 1.0).abs() <= PROB_TOL
                    } else {
                        p == 0.0
                    }
                });
                check(absorbing, "DISCHARGE must be absorbing")?;
            }
        }
        Ok(())
    }

    fn trend_factor(&self, t: f64) -> f64 {
        1.0 + self.trend_slope * t / self.horizon
    }

    /// Upper bound of `rate_at` used for thinning.
    pub fn rate_max(&self) -> f64 {
        let max = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max);
        self.base_rate
            * (1.0 + self.trend_slope.max(0.0))
            * max(&self.hourly_profile)
            * max(&self.weekly_profile)
            * max(&self.monthly_profile)
    }
}

/// Instantaneous admission rate (per hour) at time `t`.
pub fn rate_at(t: f64, config: &GeneratorConfig) -> Result<f64, SynthError> {
    if !(0.0..config.horizon).contains(&t) {
        return Err(SynthError::OutOfHorizon(t));
    }
    let hour = t.floor() as u64;
    Ok(config.base_rate
        * config.trend_factor(t)
        * config.hourly_profile[(hour % 24) as usize]
        * config.weekly_profile[((hour / 24) % 7) as usize]
        * config.monthly_profile[((hour / 720) % 12) as usize])
}

/// Admission times over `[0, horizon)` by thinning a homogeneous process at
/// `rate_max`. Times are strictly increasing.
pub fn sample_arrivals(config: &GeneratorConfig, rng: &mut SimRng) -> Vec<f64> {
    let bound = config.rate_max();
    let mut out = Vec::new();
    if !(bound > 0.0) {
        return out;
    }
    let mut t = 0.0;
    loop {
        let gap: f64 = Exp1.sample(rng);
        t += gap / bound;
        if t >= config.horizon {
            break;
        }
        let rate = rate_at(t, config).expect("t inside horizon");
        if rng.gen::<f64>() * bound < rate {
            out.push(t);
        }
    }
    out
}

fn sample_age(mix: &AgeMixture, rng: &mut SimRng) -> u32 {
    let (mean, sd) = if rng.gen::<f64>() < mix.weight1 {
        (mix.mean1, mix.sd1)
    } else {
        (mix.mean2, mix.sd2)
    };
    // rejection keeps the draw inside [0, 120]
    for _ in 0..10_000 {
        let z: f64 = StandardNormal.sample(rng);
        let age = mean + sd * z;
        if (0.0..=MAX_AGE as f64).contains(&age) {
            return (age.round() as u32).min(MAX_AGE);
        }
    }
    mean.clamp(0.0, MAX_AGE as f64).round() as u32
}

fn sample_poisson(rate: f64, rng: &mut SimRng) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(rate).expect("positive rate").sample(rng);
    draw as u64
}

/// Draws a key from a weight map; keys are visited in sorted order.
pub(crate) fn sample_categorical<'a>(
    weights: impl IntoIterator<Item = (&'a String, &'a f64)>,
    rng: &mut SimRng,
) -> &'a String {
    let items: Vec<(&String, f64)> = weights.into_iter().map(|(k, &w)| (k, w)).collect();
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut u = rng.gen::<f64>() * total;
    for (k, w) in &items {
        if u < *w {
            return k;
        }
        u -= w;
    }
    items
        .iter()
        .rev()
        .find(|(_, w)| *w > 0.0)
        .map(|(k, _)| *k)
        .unwrap_or(items[items.len() - 1].0)
}

/// Draws a profile for a given severity class.
pub fn sample_profile_for_class(
    attributes: &AttributeConfig,
    class: usize,
    patient_id: String,
    rng: &mut SimRng,
) -> PatientProfile {
    let age = sample_age(&attributes.age_mix, rng);
    let gender = if rng.gen::<f64>() < attributes.gender_p {
        Gender::F
    } else {
        Gender::M
    };
    let link = match (class, attributes.severe_comorbidity_rate) {
        (1, Some(severe)) => severe,
        _ => attributes.comorbidity_rate_by_age,
    };
    let comorbidity_count = (sample_poisson(link.rate(age), rng) as u32).min(MAX_COMORBIDITY);
    let drg = sample_categorical(&attributes.drg_probs, rng).clone();
    PatientProfile {
        patient_id,
        age,
        gender,
        comorbidity_count,
        drg,
    }
}

/// Draws the latent class (0 mild, 1 severe), then a profile conditional on it.
pub fn sample_profile_with_class(
    attributes: &AttributeConfig,
    patient_id: String,
    rng: &mut SimRng,
) -> (PatientProfile, usize) {
    let class = usize::from(rng.gen::<f64>() < attributes.severity_split);
    (
        sample_profile_for_class(attributes, class, patient_id, rng),
        class,
    )
}

pub fn sample_profile(config: &GeneratorConfig, rng: &mut SimRng) -> PatientProfile {
    sample_profile_with_class(&config.attributes, String::new(), rng).0
}

/// Mean of ln(LoS hours) for one stay.
pub fn ln_los_mean(coeffs: &LosCoefficients, profile: &PatientProfile, department: &str) -> f64 {
    coeffs.beta0
        + coeffs.beta_age * profile.age as f64 / 100.0
        + coeffs.beta_com * profile.comorbidity_count as f64
        + coeffs.drg_offsets.get(&profile.drg).copied().unwrap_or(0.0)
        + coeffs
            .department_offsets
            .get(department)
            .copied()
            .unwrap_or(0.0)
}

/// Everything needed to score models against the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Latent severity class per patient id.
    pub latent_class: BTreeMap<String, usize>,
    pub n_patients: usize,
    pub n_stays: usize,
    /// Walks cut at `MAX_STEPS`.
    pub truncated: usize,
    pub config: GeneratorConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub entries: Vec<EventLogEntry>,
    pub profiles: Vec<PatientProfile>,
    pub ground_truth: GroundTruth,
}

impl SynthOutput {
    /// Writes `event_log.csv` and `ground_truth.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), SynthError> {
        let io = |e: std::io::Error| SynthError::Io(e.to_string());
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(
            dir.join("event_log.csv"),
            write_event_log(&self.entries, &self.profiles),
        )
        .map_err(io)?;
        let json = serde_json::to_string_pretty(&self.ground_truth)
            .map_err(|e| SynthError::Io(e.to_string()))?;
        fs::write(dir.join("ground_truth.json"), json).map_err(io)
    }
}

/// Runs the full generator. Entries are grouped by patient in admission order;
/// all reals sit on the CSV's 6-decimal grid.
pub fn generate(config: &GeneratorConfig) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    let mut rng = rng::stream(config.seed);
    let arrivals = sample_arrivals(config, &mut rng);

    let mut entries = Vec::new();
    let mut profiles = Vec::with_capacity(arrivals.len());
    let mut latent_class = BTreeMap::new();
    let mut truncated = 0;
    let los = &config.los_coeffs;
    let cot = &config.cot_coeffs;

    for (i, &t) in arrivals.iter().enumerate() {
        let id = format!("P{:06}", i + 1);
        let (profile, class) = sample_profile_with_class(&config.attributes, id.clone(), &mut rng);
        let matrix = &config.transition_matrices[class];
        let mut dept = config.entry_department.clone();
        let mut enter = quantize(t);
        let mut steps = 0;
        loop {
            let z: f64 = StandardNormal.sample(&mut rng);
            let stay = (ln_los_mean(los, &profile, &dept) + los.sigma_ln * z).exp();
            let mut exit = quantize(enter + stay);
            if exit <= enter {
                exit = quantize(enter + 1e-6);
            }
            let e: f64 = StandardNormal.sample(&mut rng);
            let drg_cost = cot.drg_offsets.get(&profile.drg).copied().unwrap_or(0.0);
            let cost = (cot.gamma0 + cot.gamma1 * (exit - enter) + drg_cost + cot.sigma * e).max(0.0);
            entries.push(EventLogEntry {
                patient_id: id.clone(),
                department: dept.clone(),
                enter_time: enter,
                exit_time: exit,
                cost: quantize(cost),
            });
            steps += 1;
            let next = sample_categorical(&matrix[&dept], &mut rng).clone();
            if next == DISCHARGE {
                break;
            }
            if steps >= MAX_STEPS {
                truncated += 1;
                break;
            }
            dept = next;
            enter = exit;
        }
        latent_class.insert(id, class);
        profiles.push(profile);
    }

    Ok(SynthOutput {
        ground_truth: GroundTruth {
            latent_class,
            n_patients: profiles.len(),
            n_stays: entries.len(),
            truncated,
            config: config.clone(),
        },
        entries,
        profiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{extract_trajectories, parse_event_log};
    use crate::presets;

    fn flat(base: f64, horizon: f64) -> GeneratorConfig {
        let mut c = presets::flat_hospital();
        c.base_rate = base;
        c.horizon = horizon;
        c.trend_slope = 0.0;
        c
    }

    #[test]
    fn rate_at_examples() {
        let c = flat(2.0, 1000.0);
        assert_eq!(rate_at(0.0, &c).unwrap(), 2.0);
        assert_eq!(rate_at(517.3, &c).unwrap(), 2.0);
        let mut c = flat(2.0, 1000.0);
        c.trend_slope = 1.0;
        assert!((rate_at(500.0, &c).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(rate_at(1000.0, &c), Err(SynthError::OutOfHorizon(1000.0)));
        assert_eq!(rate_at(-1.0, &c), Err(SynthError::OutOfHorizon(-1.0)));
    }

    #[test]
    fn rate_at_uses_calendar_indices() {
        let mut c = flat(1.0, 20_000.0);
        c.hourly_profile[5] = 2.0;
        c.weekly_profile[3] = 3.0;
        c.monthly_profile[2] = 5.0;
        // hour 5 of month 2
        let t: f64 = 2.0 * 720.0 + 3.0 * 24.0 + 5.5;
        let day = ((t / 24.0).floor() as u64 % 7) as usize;
        let expected = 2.0 * c.weekly_profile[day] * 5.0;
        assert!((rate_at(t, &c).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn arrivals_are_reproducible_and_increasing() {
        let c = presets::hospital();
        let a = sample_arrivals(&c, &mut rng::stream(11));
        let b = sample_arrivals(&c, &mut rng::stream(11));
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn vanishing_rate_gives_no_arrivals() {
        let c = flat(1e-12, 1000.0);
        assert!(sample_arrivals(&c, &mut rng::stream(1)).is_empty());
    }

    #[test]
    fn flat_rate_count_matches_poisson_mean() {
        let c = flat(10.0, 1000.0);
        let n = sample_arrivals(&c, &mut rng::stream(3)).len() as f64;
        // mean 1e4, sd 100
        assert!((n - 1e4).abs() < 300.0, "{n}");
    }

    #[test]
    fn degenerate_attribute_samplers() {
        let mut c = presets::flat_hospital();
        c.attributes.gender_p = 1.0;
        c.attributes.comorbidity_rate_by_age = ComorbidityLink { c0: 0.0, c1: 0.0 };
        c.attributes.severe_comorbidity_rate = None;
        let mut r = rng::stream(5);
        for _ in 0..1000 {
            let p = sample_profile(&c, &mut r);
            assert_eq!(p.gender, Gender::F);
            assert_eq!(p.comorbidity_count, 0);
            assert!(p.age <= MAX_AGE);
            assert!(c.attributes.drg_probs.contains_key(&p.drg));
        }
    }

    #[test]
    fn single_department_discharge_gives_length_one() {
        let mut c = flat(1.0, 200.0);
        c.departments = vec![DepartmentSpec {
            name: "A".into(),
            bed_capacity: None,
        }];
        c.entry_department = "A".into();
        let row: BTreeMap<String, f64> = [(DISCHARGE.to_string(), 1.0)].into();
        c.transition_matrices = vec![[("A".to_string(), row)].into()];
        c.attributes.severity_split = 0.0;
        c.los_coeffs.department_offsets.clear();
        let out = generate(&c).unwrap();
        let trajectories = extract_trajectories(&out.entries).unwrap();
        assert!(!trajectories.is_empty());
        assert!(trajectories.iter().all(|t| t.len() == 1));
    }

    #[test]
    fn zero_sigma_gives_fixed_los() {
        let mut c = flat(1.0, 300.0);
        c.los_coeffs = LosCoefficients {
            beta0: 48f64.ln(),
            beta_age: 0.0,
            beta_com: 0.0,
            drg_offsets: BTreeMap::new(),
            department_offsets: BTreeMap::new(),
            sigma_ln: 0.0,
        };
        let out = generate(&c).unwrap();
        assert!(!out.entries.is_empty());
        for e in &out.entries {
            assert!((e.los() - 48.0).abs() < 2e-6, "{}", e.los());
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = presets::hospital();
        c.hourly_profile[0] = 0.0;
        assert!(c.validate().is_err());
        let mut c = presets::hospital();
        c.attributes.drg_probs.insert("EXTRA".into(), 0.5);
        assert!(c.validate().is_err());
        let mut c = presets::hospital();
        c.transition_matrices[0]
            .get_mut("ED")
            .unwrap()
            .insert(DISCHARGE.into(), 0.9);
        assert!(c.validate().is_err());
        let mut c = presets::hospital();
        c.entry_department = "NOPE".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn generate_is_deterministic_and_csv_stable() {
        let mut c = presets::hospital();
        c.horizon = 24.0 * 14.0;
        let a = generate(&c).unwrap();
        let b = generate(&c).unwrap();
        assert_eq!(a, b);
        let text = write_event_log(&a.entries, &a.profiles);
        let (entries, profiles) = parse_event_log(&text).unwrap();
        assert_eq!(entries, a.entries);
        assert_eq!(profiles, a.profiles);
    }

    #[test]
    fn json_roundtrip() {
        let c = presets::hospital();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(GeneratorConfig::from_json(&text).unwrap(), c);
    }
}
