//! Patient-inflow models: the homogeneous Poisson baseline and the
//! time-series alternatives (seasonal naive, additive Holt–Winters, lag
//! regression with calendar one-hots), plus forecast metrics and backtests.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ArrivalSeries, BucketWidth};
use crate::linalg::{self, Design, LinalgError};

/// Ridge damping added to the normal-equation diagonal.
pub const RIDGE: f64 = 1e-8;

/// Grid searched for Holt–Winters smoothing parameters when none are given.
pub const SMOOTHING_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InflowError {
    #[error("series of length {len} is too short (need {need})")]
    SeriesTooShort { len: usize, need: usize },
    #[error("insufficient data: {rows} rows for {cols} coefficients")]
    InsufficientData { rows: usize, cols: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("predicted and actual lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("at least two points are required")]
    TooFewPoints,
    #[error("all actual values are zero; MAPE undefined")]
    AllActualsZero,
    #[error("model `{model}`: {source}")]
    Model {
        model: String,
        #[source]
        source: Box<InflowError>,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Calendar one-hot blocks for lag regression. The first level of each
/// block is dropped; a `t / len` trend column is always present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CalendarSpec {
    #[serde(default)]
    pub hour_of_day: bool,
    #[serde(default)]
    pub day_of_week: bool,
    #[serde(default)]
    pub month_of_year: bool,
}

impl CalendarSpec {
    fn width(&self) -> usize {
        23 * usize::from(self.hour_of_day)
            + 6 * usize::from(self.day_of_week)
            + 11 * usize::from(self.month_of_year)
    }

    fn push_features(&self, time: f64, out: &mut Vec<f64>) {
        let hour = time.floor() as i64;
        let mut block = |on: bool, levels: usize, level: usize| {
            if on {
                out.extend((1..levels).map(|l| if l == level { 1.0 } else { 0.0 }));
            }
        };
        block(self.hour_of_day, 24, hour.rem_euclid(24) as usize);
        block(self.day_of_week, 7, (hour.div_euclid(24)).rem_euclid(7) as usize);
        block(self.month_of_year, 12, (hour.div_euclid(720)).rem_euclid(12) as usize);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InflowModel {
    HomogeneousPoisson {
        /// Expected count per bucket.
        lambda: f64,
        /// Set when the training series was all zeros.
        degenerate: bool,
    },
    SeasonalNaive {
        period: usize,
        /// Last `period` observed counts.
        tail: Vec<f64>,
    },
    HoltWinters {
        alpha: f64,
        beta: f64,
        gamma: f64,
        period: usize,
        level: f64,
        trend: f64,
        /// Seasonal components aligned so that `seasonal[j]` applies to the
        /// `j + 1`-step-ahead forecast.
        seasonal: Vec<f64>,
        /// One-step in-sample RMSE over the update phase.
        in_sample_rmse: f64,
    },
    LagRegression {
        lags: Vec<usize>,
        calendar: CalendarSpec,
        bucket_width: BucketWidth,
        /// Start time of the training series.
        origin: f64,
        train_len: usize,
        intercept: f64,
        /// Lag coefficients, then calendar one-hots, then the trend column.
        coefficients: Vec<f64>,
        /// Last `max(lags)` observations, oldest first.
        history: Vec<f64>,
        in_sample_rmse: f64,
    },
}

/// Which inflow model to fit, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InflowSpec {
    HomogeneousPoisson,
    SeasonalNaive {
        period: usize,
    },
    HoltWinters {
        period: usize,
        /// `(alpha, beta, gamma)`; grid-searched when absent.
        #[serde(default)]
        smoothing: Option<(f64, f64, f64)>,
    },
    LagRegression {
        lags: Vec<usize>,
        #[serde(default)]
        calendar: CalendarSpec,
    },
}

impl InflowSpec {
    pub fn name(&self) -> String {
        match self {
            InflowSpec::HomogeneousPoisson => "homogeneous_poisson".into(),
            InflowSpec::SeasonalNaive { period } => format!("seasonal_naive(m={period})"),
            InflowSpec::HoltWinters { period, .. } => format!("holt_winters(m={period})"),
            InflowSpec::LagRegression { lags, .. } => format!("lag_regression(lags={lags:?})"),
        }
    }

    pub fn fit(&self, series: &ArrivalSeries) -> Result<InflowModel, InflowError> {
        match self {
            InflowSpec::HomogeneousPoisson => Ok(fit_poisson(series)),
            InflowSpec::SeasonalNaive { period } => fit_seasonal_naive(series, *period),
            InflowSpec::HoltWinters { period, smoothing } => {
                fit_holt_winters(series, *period, *smoothing)
            }
            InflowSpec::LagRegression { lags, calendar } => {
                fit_lag_regression(series, lags, *calendar)
            }
        }
    }
}

pub fn fit_poisson(series: &ArrivalSeries) -> InflowModel {
    let n = series.counts.len().max(1);
    let lambda = series.counts.iter().sum::<u64>() as f64 / n as f64;
    InflowModel::HomogeneousPoisson {
        lambda,
        degenerate: lambda == 0.0,
    }
}

pub fn fit_seasonal_naive(series: &ArrivalSeries, period: usize) -> Result<InflowModel, InflowError> {
    if period < 2 {
        return Err(InflowError::InvalidParameter("period must be >= 2".into()));
    }
    let y = series.values();
    if y.len() < period {
        return Err(InflowError::SeriesTooShort {
            len: y.len(),
            need: period,
        });
    }
    Ok(InflowModel::SeasonalNaive {
        period,
        tail: y[y.len() - period..].to_vec(),
    })
}

struct HwState {
    level: f64,
    trend: f64,
    /// Seasonal history; index t holds s_t.
    seasonal: Vec<f64>,
    sse: f64,
    steps: usize,
}

/// Runs additive Holt–Winters over `y`, optionally recording the one-step
/// predictions for `t = m..len`.
fn run_holt_winters(
    y: &[f64],
    m: usize,
    (alpha, beta, gamma): (f64, f64, f64),
    mut record: Option<&mut Vec<f64>>,
) -> HwState {
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let level0 = mean(&y[..m]);
    let trend0 = (mean(&y[m..2 * m]) - level0) / m as f64;
    let mut seasonal: Vec<f64> = y[..m].iter().map(|v| v - level0).collect();
    let centre = mean(&seasonal);
    for s in &mut seasonal {
        *s -= centre;
    }
    seasonal.reserve(y.len() - m);

    let (mut level, mut trend) = (level0, trend0);
    let mut sse = 0.0;
    for t in m..y.len() {
        let s_prev = seasonal[t - m];
        let pred = level + trend + s_prev;
        if let Some(out) = record.as_deref_mut() {
            out.push(pred);
        }
        let err = y[t] - pred;
        sse += err * err;
        let new_level = alpha * (y[t] - s_prev) + (1.0 - alpha) * (level + trend);
        trend = beta * (new_level - level) + (1.0 - beta) * trend;
        level = new_level;
        seasonal.push(gamma * (y[t] - level) + (1.0 - gamma) * s_prev);
    }
    HwState {
        level,
        trend,
        seasonal,
        sse,
        steps: y.len() - m,
    }
}

/// One-step-ahead in-sample predictions of additive Holt–Winters for
/// `t = m..len`. Requires `len >= 2m`.
pub fn holt_winters_one_step(y: &[f64], m: usize, alpha: f64, beta: f64, gamma: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len().saturating_sub(m));
    run_holt_winters(y, m, (alpha, beta, gamma), Some(&mut out));
    out
}

/// Additive Holt–Winters. With `smoothing = None`, `(alpha, beta, gamma)` is
/// chosen from `SMOOTHING_GRID`^3 by in-sample one-step RMSE (first minimum in
/// lexicographic order wins).
pub fn fit_holt_winters(
    series: &ArrivalSeries,
    m: usize,
    smoothing: Option<(f64, f64, f64)>,
) -> Result<InflowModel, InflowError> {
    if m < 2 {
        return Err(InflowError::InvalidParameter("period must be >= 2".into()));
    }
    let y = series.values();
    if y.len() < 2 * m {
        return Err(InflowError::SeriesTooShort {
            len: y.len(),
            need: 2 * m,
        });
    }
    let (alpha, beta, gamma) = match smoothing {
        Some(p) => {
            let unit = |v: f64| (0.0..=1.0).contains(&v);
            if !(unit(p.0) && unit(p.1) && unit(p.2)) {
                return Err(InflowError::InvalidParameter(
                    "smoothing parameters must lie in [0,1]".into(),
                ));
            }
            p
        }
        None => {
            let mut best = (f64::INFINITY, (0.0, 0.0, 0.0));
            for &a in &SMOOTHING_GRID {
                for &b in &SMOOTHING_GRID {
                    for &g in &SMOOTHING_GRID {
                        let sse = run_holt_winters(&y, m, (a, b, g), None).sse;
                        if sse < best.0 {
                            best = (sse, (a, b, g));
                        }
                    }
                }
            }
            best.1
        }
    };
    let state = run_holt_winters(&y, m, (alpha, beta, gamma), None);
    let n = y.len();
    let seasonal = state.seasonal[n - m..].to_vec();
    let in_sample_rmse = if state.steps > 0 {
        (state.sse / state.steps as f64).sqrt()
    } else {
        0.0
    };
    Ok(InflowModel::HoltWinters {
        alpha,
        beta,
        gamma,
        period: m,
        level: state.level,
        trend: state.trend,
        seasonal,
        in_sample_rmse,
    })
}

fn lag_row(
    lags: &[usize],
    calendar: &CalendarSpec,
    lagged: impl Fn(usize) -> f64,
    time: f64,
    t: usize,
    train_len: usize,
) -> Vec<f64> {
    let mut row = Vec::with_capacity(2 + lags.len() + calendar.width());
    row.push(1.0);
    row.extend(lags.iter().map(|&l| lagged(l)));
    calendar.push_features(time, &mut row);
    row.push(t as f64 / train_len as f64);
    row
}

/// OLS of `y_t` on `[1, y_{t-lag}..., calendar one-hots, t/len]` with ridge
/// damping `RIDGE`.
pub fn fit_lag_regression(
    series: &ArrivalSeries,
    lags: &[usize],
    calendar: CalendarSpec,
) -> Result<InflowModel, InflowError> {
    if lags.is_empty() || lags.contains(&0) {
        return Err(InflowError::InvalidParameter(
            "lags must be non-empty and positive".into(),
        ));
    }
    let mut lags = lags.to_vec();
    lags.sort_unstable();
    lags.dedup();
    let max_lag = *lags.last().unwrap();
    let y = series.values();
    let n = y.len();
    let cols = 2 + lags.len() + calendar.width();
    if n <= max_lag + cols {
        return Err(InflowError::InsufficientData {
            rows: n.saturating_sub(max_lag),
            cols,
        });
    }
    let (rows, target) = lag_design(series, &lags, &calendar);
    let x = Design::from_rows(&rows);
    let beta = linalg::ridge_solve(&x, &target, RIDGE)?;
    let fitted = x.predict(&beta);
    let sse: f64 = fitted.iter().zip(&target).map(|(f, t)| (f - t).powi(2)).sum();
    Ok(InflowModel::LagRegression {
        lags,
        calendar,
        bucket_width: series.bucket_width,
        origin: series.start_time,
        train_len: n,
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
        history: y[n - max_lag..].to_vec(),
        in_sample_rmse: (sse / target.len() as f64).sqrt(),
    })
}

/// Design rows and targets used by `fit_lag_regression`.
pub fn lag_design(
    series: &ArrivalSeries,
    lags: &[usize],
    calendar: &CalendarSpec,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let y = series.values();
    let n = y.len();
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    let mut rows = Vec::with_capacity(n - max_lag);
    let mut target = Vec::with_capacity(n - max_lag);
    for t in max_lag..n {
        rows.push(lag_row(
            lags,
            calendar,
            |l| y[t - l],
            series.bucket_start(t),
            t,
            n,
        ));
        target.push(y[t]);
    }
    (rows, target)
}

impl InflowModel {
    pub fn kind(&self) -> &'static str {
        match self {
            InflowModel::HomogeneousPoisson { .. } => "homogeneous_poisson",
            InflowModel::SeasonalNaive { .. } => "seasonal_naive",
            InflowModel::HoltWinters { .. } => "holt_winters",
            InflowModel::LagRegression { .. } => "lag_regression",
        }
    }
}

/// Expected counts for the next `h` buckets, clamped at zero.
pub fn forecast(model: &InflowModel, h: usize) -> Vec<f64> {
    let raw: Vec<f64> = match model {
        InflowModel::HomogeneousPoisson { lambda, .. } => vec![*lambda; h],
        InflowModel::SeasonalNaive { period, tail } => (0..h).map(|i| tail[i % period]).collect(),
        InflowModel::HoltWinters {
            period,
            level,
            trend,
            seasonal,
            ..
        } => (1..=h)
            .map(|step| level + step as f64 * trend + seasonal[(step - 1) % period])
            .collect(),
        InflowModel::LagRegression {
            lags,
            calendar,
            bucket_width,
            origin,
            train_len,
            intercept,
            coefficients,
            history,
            ..
        } => {
            let mut beta = Vec::with_capacity(coefficients.len() + 1);
            beta.push(*intercept);
            beta.extend_from_slice(coefficients);
            let mut extended = history.clone();
            let offset = train_len - history.len();
            let w = bucket_width.hours();
            let mut out = Vec::with_capacity(h);
            for step in 0..h {
                let t = train_len + step;
                let row = lag_row(
                    lags,
                    calendar,
                    |l| extended[t - l - offset],
                    origin + t as f64 * w,
                    t,
                    *train_len,
                );
                let value = linalg::dot(&row, &beta).max(0.0);
                extended.push(value);
                out.push(value);
            }
            out
        }
    };
    raw.into_iter()
        .map(|v| if v.is_finite() { v.max(0.0) } else { 0.0 })
        .collect()
}

/// Forecast accuracy. MAPE skips points whose actual value is zero and
/// reports how many were skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    pub mape_percent: f64,
    /// Pearson correlation; 0 when `r_defined` is false.
    pub r: f64,
    /// False when either side is constant.
    pub r_defined: bool,
    pub n_points: usize,
    pub n_skipped_zero_actual: usize,
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn evaluate(predicted: &[f64], actual: &[f64]) -> Result<MetricReport, InflowError> {
    if predicted.len() != actual.len() {
        return Err(InflowError::LengthMismatch(predicted.len(), actual.len()));
    }
    if actual.len() < 2 {
        return Err(InflowError::TooFewPoints);
    }
    let n = actual.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut pct_sum = 0.0;
    let mut pct_n = 0usize;
    for (p, y) in predicted.iter().zip(actual) {
        let e = p - y;
        abs_sum += e.abs();
        sq_sum += e * e;
        if *y > 0.0 {
            pct_sum += e.abs() / y;
            pct_n += 1;
        }
    }
    if pct_n == 0 {
        return Err(InflowError::AllActualsZero);
    }
    let mae = abs_sum / n;
    let rmse = (sq_sum / n).sqrt().max(mae);
    let r = pearson(predicted, actual);
    Ok(MetricReport {
        mae,
        rmse,
        mape_percent: 100.0 * pct_sum / pct_n as f64,
        r: r.unwrap_or(0.0),
        r_defined: r.is_some(),
        n_points: actual.len(),
        n_skipped_zero_actual: actual.len() - pct_n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub model: String,
    pub fitted: InflowModel,
    pub forecast: Vec<f64>,
    pub metrics: MetricReport,
}

/// Number of head buckets used for training under `split_fraction`.
pub fn split_point(len: usize, split_fraction: f64) -> usize {
    (len as f64 * split_fraction).round() as usize
}

/// Fits every model on the head of `series`, forecasts the tail and scores it.
pub fn backtest(
    series: &ArrivalSeries,
    split_fraction: f64,
    models: &[InflowSpec],
) -> Result<Vec<BacktestResult>, InflowError> {
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(InflowError::InvalidParameter(
            "split_fraction must lie in (0,1)".into(),
        ));
    }
    let (head, tail) = series.split_at(split_point(series.len(), split_fraction));
    let actual = tail.values();
    models
        .iter()
        .map(|spec| {
            let annotate = |e: InflowError| InflowError::Model {
                model: spec.name(),
                source: Box::new(e),
            };
            let fitted = spec.fit(&head).map_err(annotate)?;
            let fc = forecast(&fitted, actual.len());
            let metrics = evaluate(&fc, &actual).map_err(annotate)?;
            Ok(BacktestResult {
                model: spec.name(),
                fitted,
                forecast: fc,
                metrics,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(counts: &[u64], width: BucketWidth) -> ArrivalSeries {
        ArrivalSeries {
            bucket_width: width,
            start_time: 0.0,
            counts: counts.to_vec(),
        }
    }

    #[test]
    fn poisson_fits_mean() {
        let m = fit_poisson(&series(&[3, 3, 3], BucketWidth::Day));
        assert_eq!(
            m,
            InflowModel::HomogeneousPoisson {
                lambda: 3.0,
                degenerate: false
            }
        );
        let m = fit_poisson(&series(&[0, 0], BucketWidth::Day));
        assert_eq!(
            m,
            InflowModel::HomogeneousPoisson {
                lambda: 0.0,
                degenerate: true
            }
        );
        let four = InflowModel::HomogeneousPoisson {
            lambda: 4.0,
            degenerate: false,
        };
        assert_eq!(forecast(&four, 3), vec![4.0; 3]);
    }

    #[test]
    fn seasonal_naive_cycles_tail() {
        let m = fit_seasonal_naive(&series(&[9, 9, 1, 2, 3], BucketWidth::Hour), 3).unwrap();
        assert_eq!(forecast(&m, 4), vec![1.0, 2.0, 3.0, 1.0]);
    }

    fn seasonal_counts(n: usize, pattern: &[u64], base: u64) -> Vec<u64> {
        (0..n).map(|t| base + pattern[t % pattern.len()]).collect()
    }

    #[test]
    fn holt_winters_noiseless_seasonal_is_exact() {
        // y = 10 + s, s = [-3, 1, 2, 0]
        let counts = seasonal_counts(40, &[7, 11, 12, 10], 0);
        let s = series(&counts, BucketWidth::Hour);
        for params in [Some((0.3, 0.2, 0.4)), None] {
            let m = fit_holt_winters(&s, 4, params).unwrap();
            let fc = forecast(&m, 9);
            for (h, v) in fc.iter().enumerate() {
                let expected = counts[(40 + h) % 4] as f64;
                assert!((v - expected).abs() < 1e-9, "h={h}: {v} vs {expected}");
            }
        }
    }

    #[test]
    fn holt_winters_constant_series() {
        let s = series(&[6; 30], BucketWidth::Hour);
        match fit_holt_winters(&s, 5, Some((0.5, 0.5, 0.5))).unwrap() {
            InflowModel::HoltWinters {
                level,
                trend,
                seasonal,
                ..
            } => {
                assert!((level - 6.0).abs() < 1e-12);
                assert!(trend.abs() < 1e-12);
                assert!(seasonal.iter().all(|s| s.abs() < 1e-12));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn holt_winters_seasonal_components_centered() {
        let counts: Vec<u64> = (0..50).map(|t| (t * 7 % 11) as u64).collect();
        let s = series(&counts, BucketWidth::Hour);
        let y = s.values();
        let state = run_holt_winters(&y, 6, (0.2, 0.1, 0.3), None);
        let init: f64 = state.seasonal[..6].iter().sum();
        assert!(init.abs() < 1e-6);
    }

    #[test]
    fn holt_winters_trend_error_decays() {
        let pattern = [3.0, -1.0, -4.0, 2.0];
        let y: Vec<f64> = (0..400)
            .map(|t| 5.0 + 0.7 * t as f64 + pattern[t % 4])
            .collect();
        let preds = holt_winters_one_step(&y, 4, 0.5, 0.5, 0.5);
        let errs: Vec<f64> = preds.iter().zip(&y[4..]).map(|(p, v)| (p - v).abs()).collect();
        assert!(errs[0] > 1.0);
        assert!(errs[errs.len() - 100..].iter().all(|e| *e <= 1e-6));
    }

    #[test]
    fn holt_winters_rejects_short_series() {
        let s = series(&[1, 2, 3], BucketWidth::Hour);
        assert_eq!(
            fit_holt_winters(&s, 2, None),
            Err(InflowError::SeriesTooShort { len: 3, need: 4 })
        );
    }

    #[test]
    fn lag_regression_constant_series() {
        let c = 100.0;
        let s = series(&[c as u64; 50], BucketWidth::Day);
        let m = fit_lag_regression(&s, &[1], CalendarSpec::default()).unwrap();
        match &m {
            InflowModel::LagRegression {
                coefficients,
                intercept,
                ..
            } => {
                // collinear intercept and lag column: damping selects the
                // minimum-norm split, which puts c^2/(1+c^2) on the lag
                let lag = coefficients[0];
                assert!((lag - c * c / (1.0 + c * c)).abs() < 1e-6, "{lag}");
                assert!((intercept + lag * c - c).abs() < 1e-6);
            }
            other => panic!("{other:?}"),
        }
        for v in forecast(&m, 20) {
            assert!((v - c).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn lag_regression_weekly_pattern_is_exact() {
        let pattern = [20u64, 14, 13, 12, 11, 6, 5];
        let counts = seasonal_counts(70, &pattern, 0);
        let s = series(&counts, BucketWidth::Day);
        let cal = CalendarSpec {
            day_of_week: true,
            ..Default::default()
        };
        let m = fit_lag_regression(&s, &[7], cal).unwrap();
        match &m {
            InflowModel::LagRegression { in_sample_rmse, .. } => {
                assert!(*in_sample_rmse < 1e-6, "{in_sample_rmse}")
            }
            other => panic!("{other:?}"),
        }
        let fc = forecast(&m, 14);
        for (h, v) in fc.iter().enumerate() {
            assert!((v - pattern[(70 + h) % 7] as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn lag_regression_needs_data() {
        let s = series(&[1, 2, 3, 4], BucketWidth::Day);
        assert!(matches!(
            fit_lag_regression(&s, &[1], CalendarSpec::default()),
            Err(InflowError::InsufficientData { .. })
        ));
    }

    #[test]
    fn calendar_one_hots_drop_first_level() {
        let cal = CalendarSpec {
            hour_of_day: true,
            day_of_week: true,
            month_of_year: false,
        };
        let mut v = Vec::new();
        cal.push_features(0.0, &mut v);
        assert_eq!(v.len(), 29);
        assert!(v.iter().all(|x| *x == 0.0));
        v.clear();
        cal.push_features(24.0 * 2.0 + 5.0, &mut v);
        assert_eq!(v[4], 1.0);
        assert_eq!(v[23 + 1], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn evaluate_examples() {
        let r = evaluate(&[110.0, 90.0], &[100.0, 100.0]).unwrap();
        assert!((r.mae - 10.0).abs() < 1e-12);
        assert!((r.rmse - 10.0).abs() < 1e-12);
        assert!((r.mape_percent - 10.0).abs() < 1e-12);
        assert!(!r.r_defined);
        assert_eq!(r.r, 0.0);

        let a = [1.0, 5.0, 2.0, 8.0];
        let r = evaluate(&a, &a).unwrap();
        assert_eq!((r.mae, r.rmse, r.mape_percent), (0.0, 0.0, 0.0));
        assert!((r.r - 1.0).abs() < 1e-12);

        let r = evaluate(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((r.r - 1.0).abs() < 1e-12);
        assert!((r.mape_percent - 50.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_errors_and_skips() {
        assert_eq!(
            evaluate(&[1.0], &[1.0, 2.0]),
            Err(InflowError::LengthMismatch(1, 2))
        );
        assert_eq!(evaluate(&[1.0], &[1.0]), Err(InflowError::TooFewPoints));
        assert_eq!(
            evaluate(&[1.0, 2.0], &[0.0, 0.0]),
            Err(InflowError::AllActualsZero)
        );
        let r = evaluate(&[1.0, 2.0, 4.0], &[0.0, 2.0, 5.0]).unwrap();
        assert_eq!(r.n_skipped_zero_actual, 1);
        assert!((r.mape_percent - 10.0).abs() < 1e-12);
    }

    #[test]
    fn backtest_constant_and_composition() {
        let s = series(&[5; 60], BucketWidth::Hour);
        let specs = [
            InflowSpec::HomogeneousPoisson,
            InflowSpec::SeasonalNaive { period: 4 },
            InflowSpec::HoltWinters {
                period: 4,
                smoothing: None,
            },
            InflowSpec::LagRegression {
                lags: vec![1, 4],
                calendar: CalendarSpec::default(),
            },
        ];
        for r in backtest(&s, 0.8, &specs).unwrap() {
            assert!(r.metrics.mae <= 1e-6, "{}: {}", r.model, r.metrics.mae);
        }

        let counts: Vec<u64> = (0..80).map(|t| (5 + (t * 13) % 7) as u64).collect();
        let s = series(&counts, BucketWidth::Hour);
        let spec = InflowSpec::HoltWinters {
            period: 7,
            smoothing: Some((0.3, 0.1, 0.2)),
        };
        let via_backtest = backtest(&s, 0.75, std::slice::from_ref(&spec)).unwrap();
        let (head, tail) = s.split_at(60);
        let fitted = spec.fit(&head).unwrap();
        let fc = forecast(&fitted, tail.len());
        assert_eq!(via_backtest[0].metrics, evaluate(&fc, &tail.values()).unwrap());
    }

    #[test]
    fn backtest_annotates_errors() {
        let s = series(&[5; 10], BucketWidth::Hour);
        let err = backtest(
            &s,
            0.5,
            &[InflowSpec::HoltWinters {
                period: 4,
                smoothing: None,
            }],
        )
        .unwrap_err();
        assert!(matches!(err, InflowError::Model { ref model, .. } if model == "holt_winters(m=4)"));
    }

    #[test]
    fn json_roundtrip() {
        let s = series(&seasonal_counts(60, &[3, 1, 4, 1, 5], 2), BucketWidth::Hour);
        for spec in [
            InflowSpec::HoltWinters {
                period: 5,
                smoothing: None,
            },
            InflowSpec::LagRegression {
                lags: vec![1, 5],
                calendar: CalendarSpec {
                    hour_of_day: true,
                    ..Default::default()
                },
            },
        ] {
            let m = spec.fit(&s).unwrap();
            let back: InflowModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
            assert_eq!(back, m);
        }
    }

    proptest! {
        #[test]
        fn forecasts_non_negative_and_finite(
            counts in prop::collection::vec(0u64..50, 30..80),
            h in 1usize..40,
        ) {
            let s = series(&counts, BucketWidth::Hour);
            let specs = [
                InflowSpec::HomogeneousPoisson,
                InflowSpec::SeasonalNaive { period: 5 },
                InflowSpec::HoltWinters { period: 5, smoothing: Some((0.9, 0.9, 0.9)) },
                InflowSpec::LagRegression { lags: vec![1, 2], calendar: CalendarSpec::default() },
            ];
            for spec in &specs {
                let m = spec.fit(&s).unwrap();
                let fc = forecast(&m, h);
                prop_assert_eq!(fc.len(), h);
                prop_assert!(fc.iter().all(|v| v.is_finite() && *v >= 0.0));
            }
        }

        #[test]
        fn poisson_one_step_is_mean(counts in prop::collection::vec(0u64..1000, 1..50)) {
            let s = series(&counts, BucketWidth::Day);
            let mean = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
            prop_assert_eq!(forecast(&fit_poisson(&s), 1)[0], mean);
        }

        #[test]
        fn evaluate_translation_invariant(
            pairs in prop::collection::vec((1.0f64..100.0, 1.0f64..100.0), 3..30),
            c in 0.0f64..50.0,
        ) {
            let (p, a): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let base = evaluate(&p, &a).unwrap();
            let ps: Vec<f64> = p.iter().map(|v| v + c).collect();
            let as_: Vec<f64> = a.iter().map(|v| v + c).collect();
            let shifted = evaluate(&ps, &as_).unwrap();
            prop_assert!((base.mae - shifted.mae).abs() < 1e-9);
            prop_assert!((base.rmse - shifted.rmse).abs() < 1e-9);
            prop_assert_eq!(base.r_defined, shifted.r_defined);
            prop_assert!((base.r - shifted.r).abs() < 1e-9);
            prop_assert!(base.rmse >= base.mae && base.r.abs() <= 1.0);
        }

        #[test]
        fn lag_regression_stationarity(counts in prop::collection::vec(0u64..40, 40..90)) {
            let s = series(&counts, BucketWidth::Hour);
            let lags = [1usize, 3];
            let cal = CalendarSpec::default();
            if let InflowModel::LagRegression { intercept, coefficients, .. } =
                fit_lag_regression(&s, &lags, cal).unwrap()
            {
                let (rows, y) = lag_design(&s, &lags, &cal);
                let mut beta = vec![intercept];
                beta.extend(coefficients);
                let x = Design::from_rows(&rows);
                let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                prop_assert!(linalg::stationarity_residual(&x, &y, &beta, RIDGE) <= 1e-6 * scale);
            }
        }
    }
}
