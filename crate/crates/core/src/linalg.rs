//! Dense ridge-damped least squares via the normal equations.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("normal matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("design has {rows} rows but target has {targets}")]
    ShapeMismatch { rows: usize, targets: usize },
}

/// Row-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Design {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged design");
            data.extend_from_slice(r);
        }
        Design {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn predict(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), beta)).collect()
    }

    /// `X^T v`.
    pub fn t_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let r = self.row(i);
            for j in 0..self.cols {
                out[j] += r[j] * v[i];
            }
        }
        out
    }

    fn gram(&self, ridge: f64) -> Vec<f64> {
        let p = self.cols;
        let mut a = vec![0.0; p * p];
        for i in 0..self.rows {
            let r = self.row(i);
            for j in 0..p {
                let rj = r[j];
                if rj == 0.0 {
                    continue;
                }
                for k in j..p {
                    a[j * p + k] += rj * r[k];
                }
            }
        }
        for j in 0..p {
            a[j * p + j] += ridge;
            for k in 0..j {
                a[j * p + k] = a[k * p + j];
            }
        }
        a
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cholesky(a: &[f64], p: usize) -> Result<Vec<f64>, LinalgError> {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(LinalgError::NotPositiveDefinite);
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], p: usize, b: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * z[k];
        }
        z[i] = s / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = z[i];
        for k in i + 1..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    x
}

/// Solves `(X^T X + ridge I) beta = X^T y` by Cholesky with two rounds of
/// iterative refinement.
pub fn ridge_solve(x: &Design, y: &[f64], ridge: f64) -> Result<Vec<f64>, LinalgError> {
    if x.rows != y.len() {
        return Err(LinalgError::ShapeMismatch {
            rows: x.rows,
            targets: y.len(),
        });
    }
    let p = x.cols;
    let a = x.gram(ridge);
    let b = x.t_mul(y);
    let l = cholesky(&a, p)?;
    let mut beta = cholesky_solve(&l, p, &b);
    for _ in 0..2 {
        let r: Vec<f64> = (0..p)
            .map(|i| b[i] - dot(&a[i * p..(i + 1) * p], &beta))
            .collect();
        let delta = cholesky_solve(&l, p, &r);
        for (bi, di) in beta.iter_mut().zip(delta) {
            *bi += di;
        }
    }
    Ok(beta)
}

/// `max |X^T (y - X beta) - ridge * beta|`, zero at the exact damped solution.
pub fn stationarity_residual(x: &Design, y: &[f64], beta: &[f64], ridge: f64) -> f64 {
    let fitted = x.predict(beta);
    let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    x.t_mul(&resid)
        .iter()
        .zip(beta)
        .map(|(g, b)| (g - ridge * b).abs())
        .fold(0.0, f64::max)
}
