//! Conversion of an arrival driver into arrival times.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::domain::BucketWidth;
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalDriver {
    /// Homogeneous Poisson process with `rate` arrivals per bucket.
    PoissonBaseline { rate: f64, bucket_width: BucketWidth },
    /// Expected arrivals per bucket, the first bucket starting at the
    /// simulation start. With `deterministic`, each bucket receives exactly
    /// `round(forecast)` evenly spaced arrivals.
    ForecastDriven {
        forecast: Vec<f64>,
        bucket_width: BucketWidth,
        #[serde(default)]
        deterministic: bool,
    },
}

/// Sorted arrival times in `[start, horizon)`.
pub fn inject_arrivals(
    driver: &ArrivalDriver,
    start: f64,
    horizon: f64,
    rng: &mut SimRng,
) -> Result<Vec<f64>, EngineError> {
    match driver {
        ArrivalDriver::PoissonBaseline { rate, bucket_width } => {
            if !(*rate >= 0.0) || !rate.is_finite() {
                return Err(EngineError::InvalidConfig(format!("arrival rate {rate}")));
            }
            let mut out = Vec::new();
            if *rate == 0.0 {
                return Ok(out);
            }
            let gap = Exp::new(rate / bucket_width.hours()).expect("positive rate");
            let mut t = start;
            loop {
                t += gap.sample(rng);
                if t >= horizon {
                    return Ok(out);
                }
                out.push(t);
            }
        }
        ArrivalDriver::ForecastDriven {
            forecast,
            bucket_width,
            deterministic,
        } => {
            let w = bucket_width.hours();
            let needed = ((horizon - start) / w).ceil() as usize;
            if forecast.len() < needed {
                return Err(EngineError::ForecastTooShort {
                    needed,
                    got: forecast.len(),
                });
            }
            let mut out = Vec::new();
            for (b, &mean) in forecast.iter().take(needed).enumerate() {
                if !(mean >= 0.0) || !mean.is_finite() {
                    return Err(EngineError::InvalidConfig(format!(
                        "forecast bucket {b} is {mean}"
                    )));
                }
                let lo = start + b as f64 * w;
                let first = out.len();
                if *deterministic {
                    let n = mean.round() as usize;
                    out.extend((0..n).map(|i| lo + i as f64 * w / n as f64));
                } else {
                    let n = if mean > 0.0 {
                        Poisson::new(mean).expect("positive mean").sample(rng) as usize
                    } else {
                        0
                    };
                    out.extend((0..n).map(|_| lo + rng.gen::<f64>() * w));
                }
                out[first..].sort_by(f64::total_cmp);
            }
            out.retain(|&t| t < horizon);
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn forecast(v: Vec<f64>) -> ArrivalDriver {
        ArrivalDriver::ForecastDriven {
            forecast: v,
            bucket_width: BucketWidth::Hour,
            deterministic: false,
        }
    }

    #[test]
    fn zero_forecast_gives_nothing() {
        let a = inject_arrivals(&forecast(vec![0.0; 3]), 0.0, 3.0, &mut rng::stream(1)).unwrap();
        assert!(a.is_empty());
    }

    #[test]
    fn poisson_total_within_three_sigma() {
        let a = inject_arrivals(&forecast(vec![5.0; 1000]), 0.0, 1000.0, &mut rng::stream(2)).unwrap();
        let sd = 5000f64.sqrt();
        assert!((a.len() as f64 - 5000.0).abs() <= 3.0 * sd, "{}", a.len());
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.iter().all(|&t| (0.0..1000.0).contains(&t)));
    }

    #[test]
    fn same_seed_same_schedule() {
        let d = forecast(vec![3.0; 50]);
        let a = inject_arrivals(&d, 10.0, 60.0, &mut rng::stream(3)).unwrap();
        let b = inject_arrivals(&d, 10.0, 60.0, &mut rng::stream(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&t| t >= 10.0));
    }

    #[test]
    fn forecast_must_cover_horizon() {
        assert_eq!(
            inject_arrivals(&forecast(vec![1.0; 2]), 0.0, 2.5, &mut rng::stream(1)),
            Err(EngineError::ForecastTooShort { needed: 3, got: 2 })
        );
    }

    #[test]
    fn deterministic_spacing() {
        let d = ArrivalDriver::ForecastDriven {
            forecast: vec![1.0; 4],
            bucket_width: BucketWidth::Day,
            deterministic: true,
        };
        let a = inject_arrivals(&d, 0.0, 96.0, &mut rng::stream(1)).unwrap();
        assert_eq!(a, vec![0.0, 24.0, 48.0, 72.0]);
    }

    #[test]
    fn baseline_rate() {
        let d = ArrivalDriver::PoissonBaseline {
            rate: 10.0,
            bucket_width: BucketWidth::Day,
        };
        let a = inject_arrivals(&d, 0.0, 24.0 * 2000.0, &mut rng::stream(4)).unwrap();
        let sd = 20_000f64.sqrt();
        assert!((a.len() as f64 - 20_000.0).abs() <= 3.0 * sd);
        let none = ArrivalDriver::PoissonBaseline {
            rate: 0.0,
            bucket_width: BucketWidth::Day,
        };
        assert!(inject_arrivals(&none, 0.0, 100.0, &mut rng::stream(4)).unwrap().is_empty());
    }
}
