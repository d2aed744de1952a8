use super::EstimatorError;

/// Two-sample Kolmogorov–Smirnov statistic: the sup distance between the
/// empirical CDFs of `a` and `b`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, EstimatorError> {
    if a.is_empty() || b.is_empty() {
        return Err(EstimatorError::EmptySample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}
