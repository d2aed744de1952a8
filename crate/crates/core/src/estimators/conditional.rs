//! Attribute-conditioned regression of ln(target) on encoded profiles.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::features::{Feature, FeatureSpec};
use super::{EstimatorError, TargetKind};
use crate::domain::PatientProfile;
use crate::linalg::{self, Design};
use crate::rng::SimRng;

pub const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalModel {
    pub feature_spec: FeatureSpec,
    /// One per encoded column, intercept first.
    pub coefficients: Vec<f64>,
    /// Residual standard deviation in ln-target space.
    pub residual_sigma: f64,
    pub target_kind: TargetKind,
    pub n: usize,
    /// All training targets were identical.
    pub constant_target: bool,
}

pub fn fit_conditional(
    profiles: &[PatientProfile],
    targets: &[f64],
    features: &[Feature],
    target_kind: TargetKind,
) -> Result<ConditionalModel, EstimatorError> {
    if profiles.len() != targets.len() {
        return Err(EstimatorError::InvalidParameter(format!(
            "{} profiles but {} targets",
            profiles.len(),
            targets.len()
        )));
    }
    let spec = FeatureSpec::fit(profiles, features, true);
    let width = spec.width();
    if profiles.len() <= width {
        return Err(EstimatorError::InsufficientData {
            n: profiles.len(),
            width,
        });
    }
    let y = targets
        .iter()
        .map(|&t| target_kind.to_log(t))
        .collect::<Result<Vec<f64>, _>>()?;
    let rows: Vec<Vec<f64>> = profiles.iter().map(|p| spec.encode(p).row).collect();
    let x = Design::from_rows(&rows);
    let coefficients = linalg::ridge_solve(&x, &y, RIDGE)?;
    let fitted = x.predict(&coefficients);
    let sse: f64 = fitted.iter().zip(&y).map(|(f, t)| (f - t).powi(2)).sum();
    let dof = (profiles.len() - width) as f64;
    let constant_target = y.windows(2).all(|w| w[0] == w[1]);
    Ok(ConditionalModel {
        feature_spec: spec,
        coefficients,
        residual_sigma: (sse / dof).sqrt(),
        target_kind,
        n: profiles.len(),
        constant_target,
    })
}

impl ConditionalModel {
    fn encode(&self, profile: &PatientProfile, strict: bool) -> Result<Vec<f64>, EstimatorError> {
        if strict {
            self.feature_spec.encode_strict(profile)
        } else {
            Ok(self.feature_spec.encode(profile).row)
        }
    }

    /// Linear predictor in ln-target space.
    pub fn linear_predictor(&self, profile: &PatientProfile) -> f64 {
        linalg::dot(&self.feature_spec.encode(profile).row, &self.coefficients)
    }

    pub fn linear_predictor_strict(&self, profile: &PatientProfile) -> Result<f64, EstimatorError> {
        Ok(linalg::dot(&self.encode(profile, true)?, &self.coefficients))
    }

    /// `exp(lp + sigma^2 / 2)`, the lognormal mean, mapped back to target
    /// units.
    pub fn predict_mean(&self, profile: &PatientProfile) -> f64 {
        let lp = self.linear_predictor(profile);
        self.target_kind
            .from_log(lp + self.residual_sigma * self.residual_sigma / 2.0)
    }

    pub fn sample(&self, profile: &PatientProfile, rng: &mut SimRng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.target_kind
            .from_log(self.linear_predictor(profile) + self.residual_sigma * z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Gender;
    use crate::rng;
    use rand::Rng;

    fn profile(i: usize, age: u32, drg: &str) -> PatientProfile {
        PatientProfile {
            patient_id: format!("P{i}"),
            age,
            gender: if i % 2 == 0 { Gender::F } else { Gender::M },
            comorbidity_count: (i % 5) as u32,
            drg: drg.into(),
        }
    }

    #[test]
    fn exact_age_effect_is_recovered() {
        let train: Vec<PatientProfile> = (0..60).map(|i| profile(i, (i * 7 % 90) as u32, "A")).collect();
        let y: Vec<f64> = train
            .iter()
            .map(|p| (3.0 + 2.0 * p.age as f64 / 100.0).exp())
            .collect();
        let m = fit_conditional(&train, &y, &[Feature::Age], TargetKind::Los).unwrap();
        // standardized slope maps back to 2 per 100 years
        let enc = &m.feature_spec.numeric[0];
        assert!((m.coefficients[1] / enc.sd * 100.0 - 2.0).abs() < 1e-6);
        assert!((m.coefficients[0] - enc.mean * 0.02 - 3.0).abs() < 1e-6);
        assert!(m.residual_sigma < 1e-6);
        for age in [0u32, 13, 55, 101, 120] {
            let p = profile(999, age, "A");
            let lp = m.linear_predictor(&p);
            assert!((lp - (3.0 + 0.02 * age as f64)).abs() <= 1e-6);
        }
    }

    #[test]
    fn constant_target() {
        let train: Vec<PatientProfile> = (0..30).map(|i| profile(i, 20 + i as u32, "A")).collect();
        let m = fit_conditional(&train, &vec![48.0; 30], &Feature::ALL, TargetKind::Los).unwrap();
        assert!(m.constant_target);
        assert!((m.coefficients[0] - 48f64.ln()).abs() < 1e-6);
        assert!(m.coefficients[1..].iter().all(|c| c.abs() < 1e-6));
        assert!(m.residual_sigma < 1e-6);
        assert!((m.predict_mean(&train[3]) - 48.0).abs() < 1e-4);
    }

    #[test]
    fn zero_sigma_prediction_and_sampling_are_exact() {
        let m = ConditionalModel {
            feature_spec: FeatureSpec {
                intercept: true,
                numeric: vec![],
                categorical: vec![],
            },
            coefficients: vec![48f64.ln()],
            residual_sigma: 0.0,
            target_kind: TargetKind::Los,
            n: 0,
            constant_target: true,
        };
        let p = profile(1, 40, "A");
        assert!((m.predict_mean(&p) - 48.0).abs() < 1e-12);
        let mut r = rng::stream(1);
        assert!((m.sample(&p, &mut r) - 48.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_small_samples_and_bad_targets() {
        let train: Vec<PatientProfile> = (0..3).map(|i| profile(i, 30, "A")).collect();
        assert!(matches!(
            fit_conditional(&train, &[1.0, 2.0, 3.0], &Feature::ALL, TargetKind::Los),
            Err(EstimatorError::InsufficientData { .. })
        ));
        let train: Vec<PatientProfile> = (0..10).map(|i| profile(i, 30, "A")).collect();
        let mut y = vec![5.0; 10];
        y[3] = 0.0;
        assert_eq!(
            fit_conditional(&train, &y, &[Feature::Age], TargetKind::Los),
            Err(EstimatorError::NonPositiveSample)
        );
        // zero cost is admissible
        assert!(fit_conditional(&train, &y, &[Feature::Age], TargetKind::Cot).is_ok());
    }

    #[test]
    fn sample_mean_matches_predict_mean() {
        let mut r = rng::stream(2);
        let train: Vec<PatientProfile> = (0..400)
            .map(|i| profile(i, r.gen_range(18..90), ["A", "B"][i % 2]))
            .collect();
        let y: Vec<f64> = train
            .iter()
            .map(|p| {
                let z: f64 = StandardNormal.sample(&mut r);
                (2.0 + p.age as f64 / 100.0 + if p.drg == "B" { 0.5 } else { 0.0 } + 0.5 * z).exp()
            })
            .collect();
        let m = fit_conditional(&train, &y, &Feature::ALL, TargetKind::Los).unwrap();
        let p = profile(5000, 70, "B");
        let mc: f64 = (0..100_000).map(|_| m.sample(&p, &mut r)).sum::<f64>() / 1e5;
        let pm = m.predict_mean(&p);
        assert!((mc / pm - 1.0).abs() < 0.02, "{mc} vs {pm}");
    }
}
