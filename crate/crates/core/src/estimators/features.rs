//! Encoding of patient profiles into numeric design rows.

use serde::{Deserialize, Serialize};

use super::EstimatorError;
use crate::domain::PatientProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Age,
    ComorbidityCount,
    Gender,
    Drg,
}

impl Feature {
    pub const ALL: [Feature; 4] = [
        Feature::Age,
        Feature::ComorbidityCount,
        Feature::Gender,
        Feature::Drg,
    ];

    pub fn is_numeric(self) -> bool {
        matches!(self, Feature::Age | Feature::ComorbidityCount)
    }

    pub fn numeric_value(self, p: &PatientProfile) -> f64 {
        match self {
            Feature::Age => p.age as f64,
            Feature::ComorbidityCount => p.comorbidity_count as f64,
            _ => panic!("{self:?} is categorical"),
        }
    }

    pub fn level(self, p: &PatientProfile) -> String {
        match self {
            Feature::Gender => p.gender.as_str().to_string(),
            Feature::Drg => p.drg.clone(),
            _ => panic!("{self:?} is numeric"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericEncoding {
    pub feature: Feature,
    pub mean: f64,
    /// Training standard deviation; 1 when the feature was constant.
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalEncoding {
    pub feature: Feature,
    /// Sorted training levels; the first is the dropped reference level.
    pub levels: Vec<String>,
}

/// Encoding plan: intercept (optional), standardized numerics, then one-hot
/// categoricals with the first level dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub intercept: bool,
    pub numeric: Vec<NumericEncoding>,
    pub categorical: Vec<CategoricalEncoding>,
}

/// Result of encoding one profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub row: Vec<f64>,
    /// A categorical level not seen during training was mapped to the
    /// reference encoding.
    pub unseen_level: bool,
}

impl FeatureSpec {
    pub fn fit(profiles: &[PatientProfile], features: &[Feature], intercept: bool) -> Self {
        let n = profiles.len().max(1) as f64;
        let mut numeric = Vec::new();
        let mut categorical = Vec::new();
        for &f in features {
            if f.is_numeric() {
                let mean = profiles.iter().map(|p| f.numeric_value(p)).sum::<f64>() / n;
                let var = profiles
                    .iter()
                    .map(|p| (f.numeric_value(p) - mean).powi(2))
                    .sum::<f64>()
                    / n;
                let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
                numeric.push(NumericEncoding {
                    feature: f,
                    mean,
                    sd,
                });
            } else {
                let mut levels: Vec<String> = profiles.iter().map(|p| f.level(p)).collect();
                levels.sort();
                levels.dedup();
                categorical.push(CategoricalEncoding { feature: f, levels });
            }
        }
        FeatureSpec {
            intercept,
            numeric,
            categorical,
        }
    }

    pub fn width(&self) -> usize {
        usize::from(self.intercept)
            + self.numeric.len()
            + self
                .categorical
                .iter()
                .map(|c| c.levels.len().saturating_sub(1))
                .sum::<usize>()
    }

    pub fn encode(&self, p: &PatientProfile) -> Encoded {
        let mut row = Vec::with_capacity(self.width());
        if self.intercept {
            row.push(1.0);
        }
        for e in &self.numeric {
            row.push((e.feature.numeric_value(p) - e.mean) / e.sd);
        }
        let mut unseen_level = false;
        for c in &self.categorical {
            let level = c.feature.level(p);
            let idx = c.levels.iter().position(|l| *l == level);
            if idx.is_none() {
                unseen_level = true;
            }
            row.extend((1..c.levels.len()).map(|i| if Some(i) == idx { 1.0 } else { 0.0 }));
        }
        Encoded { row, unseen_level }
    }

    pub fn encode_strict(&self, p: &PatientProfile) -> Result<Vec<f64>, EstimatorError> {
        let e = self.encode(p);
        if e.unseen_level {
            return Err(EstimatorError::UnencodableProfile(p.patient_id.clone()));
        }
        Ok(e.row)
    }
}
