//! Generator configurations shipped with the crate.
//!
//! Values are calibrated only to reproduce qualitative shapes (trend,
//! daily and weekly seasonality, right-skewed and attribute-dependent stay
//! lengths, severity-dependent pathways). They are not fitted to any real
//! hospital.

use std::collections::BTreeMap;

use crate::domain::{BucketWidth, DepartmentSpec};
use crate::engine::{ArrivalDriver, ProfileSource, SimConfig};
use crate::estimators::{univariate::UnivariateFit, Estimator, TargetKind};
use crate::pathways::{PathwayModel, TransitionMatrix};
use crate::harness::{ScenarioConfig, StackBChoices};
use crate::inflow::InflowSpec;
use crate::synthehr::{
    AgeMixture, AttributeConfig, ClassMatrix, ComorbidityLink, CostCoefficients,
    GeneratorConfig, LosCoefficients, DISCHARGE,
};

/// Twenty-four weeks of hourly history.
pub const DEFAULT_HORIZON: f64 = 24.0 * 7.0 * 24.0;

fn normalized(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x / mean).collect()
}

fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn matrix(rows: &[(&str, &[(&str, f64)])]) -> ClassMatrix {
    rows.iter().map(|(from, row)| (from.to_string(), map(row))).collect()
}

fn departments(names: &[&str]) -> Vec<DepartmentSpec> {
    names
        .iter()
        .map(|n| DepartmentSpec {
            name: n.to_string(),
            bed_capacity: None,
        })
        .collect()
}

const HOURLY: [f64; 24] = [
    0.45, 0.40, 0.38, 0.36, 0.36, 0.40, 0.55, 0.80, 1.10, 1.40, 1.60, 1.65, 1.60, 1.55, 1.50,
    1.45, 1.40, 1.35, 1.25, 1.10, 0.95, 0.80, 0.65, 0.55,
];
const WEEKLY: [f64; 7] = [1.30, 1.15, 1.10, 1.05, 1.00, 0.75, 0.65];
const MONTHLY: [f64; 12] = [
    1.00, 1.05, 1.00, 0.95, 1.00, 1.02, 1.00, 0.97, 1.00, 1.05, 1.08, 1.10,
];

/// Seasonal, trending, heterogeneous four-department hospital with two
/// latent severity classes.
pub fn hospital() -> GeneratorConfig {
    let mild = matrix(&[
        ("ED", &[("WARD", 0.75), ("SURG", 0.10), ("ICU", 0.02), (DISCHARGE, 0.13)]),
        ("WARD", &[("SURG", 0.07), ("ICU", 0.03), (DISCHARGE, 0.90)]),
        ("ICU", &[("WARD", 0.60), (DISCHARGE, 0.40)]),
        ("SURG", &[("WARD", 0.60), (DISCHARGE, 0.40)]),
    ]);
    let severe = matrix(&[
        ("ED", &[("ICU", 0.70), ("SURG", 0.15), ("WARD", 0.15)]),
        ("WARD", &[("ICU", 0.20), ("SURG", 0.10), (DISCHARGE, 0.70)]),
        ("ICU", &[("WARD", 0.80), ("SURG", 0.10), (DISCHARGE, 0.10)]),
        ("SURG", &[("ICU", 0.50), ("WARD", 0.40), (DISCHARGE, 0.10)]),
    ]);
    GeneratorConfig {
        seed: 20_240_601,
        horizon: DEFAULT_HORIZON,
        base_rate: 10.0,
        trend_slope: 0.3,
        hourly_profile: normalized(&HOURLY),
        weekly_profile: normalized(&WEEKLY),
        monthly_profile: normalized(&MONTHLY),
        attributes: AttributeConfig {
            age_mix: AgeMixture {
                weight1: 0.35,
                mean1: 35.0,
                sd1: 12.0,
                mean2: 68.0,
                sd2: 12.0,
            },
            gender_p: 0.48,
            comorbidity_rate_by_age: ComorbidityLink { c0: 0.2, c1: 0.015 },
            severe_comorbidity_rate: Some(ComorbidityLink { c0: 1.0, c1: 0.05 }),
            drg_probs: map(&[("CARD", 0.35), ("RESP", 0.25), ("ORTH", 0.20), ("NEUR", 0.20)]),
            severity_split: 0.3,
        },
        los_coeffs: LosCoefficients {
            beta0: 3.2,
            beta_age: 0.6,
            beta_com: 0.08,
            drg_offsets: map(&[("CARD", 0.0), ("RESP", 0.35), ("ORTH", -0.4), ("NEUR", 0.7)]),
            department_offsets: map(&[("ED", -2.0), ("WARD", 0.6), ("ICU", 0.3), ("SURG", 0.0)]),
            sigma_ln: 0.45,
        },
        cot_coeffs: CostCoefficients {
            gamma0: 200.0,
            gamma1: 15.0,
            drg_offsets: map(&[("CARD", 300.0), ("RESP", 100.0), ("ORTH", 800.0), ("NEUR", 500.0)]),
            sigma: 150.0,
        },
        departments: departments(&["ED", "WARD", "ICU", "SURG"]),
        entry_department: "ED".into(),
        transition_matrices: vec![mild, severe],
    }
}

/// The same hospital with every source of structure removed: flat rate, no
/// trend, no attribute effects and a single pathway class.
pub fn flat_hospital() -> GeneratorConfig {
    let mut c = hospital();
    c.seed = 20_240_602;
    c.trend_slope = 0.0;
    c.hourly_profile = vec![1.0; 24];
    c.weekly_profile = vec![1.0; 7];
    c.monthly_profile = vec![1.0; 12];
    c.attributes.severe_comorbidity_rate = None;
    c.attributes.severity_split = 0.0;
    c.los_coeffs.beta_age = 0.0;
    c.los_coeffs.beta_com = 0.0;
    c.los_coeffs.drg_offsets.clear();
    c.cot_coeffs.drg_offsets.clear();
    c.transition_matrices.truncate(1);
    c
}

/// Single department, two equally likely DRGs whose ln-LoS means differ by
/// `gap`, no other attribute effects.
pub fn two_drg_population(gap: f64, sigma_ln: f64) -> GeneratorConfig {
    let mut c = flat_hospital();
    c.seed = 20_240_603;
    c.departments = departments(&["WARD"]);
    c.entry_department = "WARD".into();
    c.transition_matrices = vec![matrix(&[("WARD", &[(DISCHARGE, 1.0)])])];
    c.attributes.drg_probs = map(&[("LOW", 0.5), ("HIGH", 0.5)]);
    c.los_coeffs = LosCoefficients {
        beta0: 2.0,
        beta_age: 0.0,
        beta_com: 0.0,
        drg_offsets: map(&[("LOW", 0.0), ("HIGH", gap)]),
        department_offsets: BTreeMap::new(),
        sigma_ln,
    };
    c
}

/// Three departments and two well-separated severity classes whose
/// comorbidity burden differs sharply. Mild patients never reach ICU, so
/// every row of a class matrix is visited mostly by that class.
pub fn pathway_classes() -> GeneratorConfig {
    let mut c = hospital();
    c.seed = 20_240_604;
    c.departments = departments(&["ED", "WARD", "ICU"]);
    c.los_coeffs.department_offsets = map(&[("ED", -2.0), ("WARD", 0.6), ("ICU", 0.3)]);
    c.attributes.comorbidity_rate_by_age = ComorbidityLink { c0: 0.1, c1: 0.01 };
    c.attributes.severe_comorbidity_rate = Some(ComorbidityLink { c0: 2.0, c1: 0.06 });
    c.attributes.severity_split = 0.4;
    c.transition_matrices = vec![
        matrix(&[
            ("ED", &[("WARD", 0.96), (DISCHARGE, 0.04)]),
            ("WARD", &[(DISCHARGE, 1.0)]),
            // unreachable
            ("ICU", &[("WARD", 0.50), (DISCHARGE, 0.50)]),
        ]),
        matrix(&[
            ("ED", &[("ICU", 0.96), ("WARD", 0.04)]),
            ("WARD", &[("ICU", 0.30), (DISCHARGE, 0.70)]),
            ("ICU", &[("WARD", 0.90), (DISCHARGE, 0.10)]),
        ]),
    ];
    c
}

/// A degenerate lognormal, i.e. every stay lasts exactly `hours`.
pub fn fixed_los(hours: f64) -> Estimator {
    Estimator::Univariate {
        fit: UnivariateFit::Lognormal {
            mu: hours.ln(),
            sigma: 0.0,
            n: 1,
            loglik: 0.0,
            degenerate: true,
        },
        target: TargetKind::Los,
    }
}

/// One department `A` visited once per admission.
pub fn single_department(
    capacity: Option<u32>,
    driver: ArrivalDriver,
    los: Estimator,
    horizon: f64,
    warm_up: f64,
) -> SimConfig {
    SimConfig {
        departments: vec![DepartmentSpec {
            name: "A".into(),
            bed_capacity: capacity,
        }],
        start: 0.0,
        horizon,
        warm_up,
        arrival_driver: driver,
        los_models: [("A".to_string(), los)].into_iter().collect(),
        cot_model: None,
        pathway_model: PathwayModel::Global(TransitionMatrix::from_counts(
            vec!["A".into()],
            vec![vec![0, 0, 1], vec![1, 0, 0], vec![0, 0, 0]],
        )),
        profile_source: ProfileSource::Generator {
            attributes: flat_hospital().attributes,
        },
        seed: 11,
        replications: 1,
        summary_bucket: BucketWidth::Day,
    }
}

/// Poisson arrivals at 10 per day, 72 h stays, unbounded beds, 200 days
/// with a 20-day warm-up: steady-state census 30.
pub fn littles_law() -> SimConfig {
    let driver = ArrivalDriver::PoissonBaseline {
        rate: 10.0,
        bucket_width: BucketWidth::Day,
    };
    single_department(None, driver, fixed_los(72.0), 24.0 * 200.0, 24.0 * 20.0)
}

/// One arrival every other midnight, 72 h service, one bed: the n-th patient
/// (from 0) waits 24n hours. Both durations are exact in binary floating
/// point, and so is `exp(ln 72)`.
pub fn dd1(days: usize) -> SimConfig {
    let driver = ArrivalDriver::ForecastDriven {
        forecast: (0..days).map(|d| if d % 2 == 0 { 1.0 } else { 0.0 }).collect(),
        bucket_width: BucketWidth::Day,
        deterministic: true,
    };
    single_department(Some(1), driver, fixed_los(72.0), 24.0 * days as f64, 0.0)
}

/// Stack comparison on [`hospital`]: 20 weeks of training history, 4 held
/// out, R = 20.
pub fn default_scenario() -> ScenarioConfig {
    ScenarioConfig {
        name: "default".into(),
        generator: hospital(),
        split_fraction: 20.0 / 24.0,
        bucket_width: BucketWidth::Hour,
        stack_b: StackBChoices::default(),
        extra_forecasters: vec![InflowSpec::HoltWinters {
            period: 168,
            smoothing: Some((0.1, 0.0, 0.1)),
        }],
        capacities: BTreeMap::new(),
        warm_up: 0.0,
        replications: 20,
        census_bucket: BucketWidth::Day,
        seed: 20_240_701,
    }
}

/// The same comparison on [`flat_hospital`].
pub fn degenerate_scenario() -> ScenarioConfig {
    ScenarioConfig {
        name: "degenerate".into(),
        generator: flat_hospital(),
        seed: 20_240_702,
        ..default_scenario()
    }
}
