//! Bayesian logistic regression posterior.

use super::{RegularityParams, Target, TargetError};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use std::io::BufRead;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("file is empty or has no data rows")]
    Empty,
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: cannot parse '{value}' as a number")]
    BadNumber { line: usize, value: String },
    #[error("line {line}: label {value} is not 0 or 1")]
    NonBinaryLabel { line: usize, value: f64 },
}

/// Design matrix, binary responses and prior variance for the logistic
/// regression posterior.
#[derive(Debug, Clone)]
pub struct LogisticRegressionData {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub sigma0_sq: f64,
}

impl LogisticRegressionData {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, sigma0_sq: f64) -> Result<Self, TargetError> {
        if x.nrows() == 0 || x.ncols() == 0 || y.is_empty() {
            return Err(TargetError::EmptyData);
        }
        if x.nrows() != y.len() {
            return Err(TargetError::NonFiniteRow { row: y.len() });
        }
        if sigma0_sq <= 0.0 {
            return Err(TargetError::NonPositivePriorVariance(sigma0_sq));
        }
        for i in 0..x.nrows() {
            if x.row(i).iter().any(|v| !v.is_finite()) {
                return Err(TargetError::NonFiniteRow { row: i });
            }
        }
        if let Some(i) = y.iter().position(|v| *v != 0.0 && *v != 1.0) {
            return Err(TargetError::NonBinaryLabel { row: i, value: y[i] });
        }
        Ok(LogisticRegressionData { x, y, sigma0_sq })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

/// Posterior of the logistic model with prior `theta ~ N(0, sigma0^2 I)`.
///
/// Potential:
/// `V(theta) = -sum_i [y_i log s_i + (1-y_i) log(1-s_i)] + ||theta||^2 / (2 sigma0^2)`
/// with `s_i = sigmoid(x_i' theta)`; score `-∇V` with
/// `∇V(theta) = sum_i (s_i - y_i) x_i + theta / sigma0^2`.
///
/// `V` is alpha-convex and beta-smooth with `alpha = 1/sigma0^2` and
/// `beta = lambda_max(X'X)/4 + 1/sigma0^2`.
pub fn logistic_regression_target(data: &LogisticRegressionData) -> Result<Target, TargetError> {
    let d = data.dim();
    let alpha = 1.0 / data.sigma0_sq;
    let x_sq_norm = spectral_norm_sq(&data.x);
    let beta = x_sq_norm / 4.0 + alpha;
    // ||∇V|| <= ||X||_2 * ||X theta|| growth + prior term; the crude bound
    // ||∇V(theta)|| <= beta ||theta|| + sum_i ||x_i|| / 2 suffices here.
    let c2 = (0..data.n())
        .map(|i| data.x.row(i).norm())
        .sum::<f64>()
        / 2.0;
    let regularity = RegularityParams::new(alpha, beta, beta, c2)?;

    let data_d = data.clone();
    let log_density = move |theta: &[f64]| {
        let mut ll = 0.0;
        for i in 0..data_d.n() {
            let t = dot_row(&data_d.x, i, theta);
            // y log s + (1-y) log(1-s) = y*t - softplus(t)
            ll += data_d.y[i] * t - softplus(t);
        }
        let prior: f64 = theta.iter().map(|v| v * v).sum::<f64>() / (2.0 * data_d.sigma0_sq);
        ll - prior
    };

    let data_s = data.clone();
    let score = move |theta: &[f64], out: &mut [f64]| {
        for (o, ti) in out.iter_mut().zip(theta) {
            *o = -ti / data_s.sigma0_sq;
        }
        for i in 0..data_s.n() {
            let t = dot_row(&data_s.x, i, theta);
            let resid = data_s.y[i] - sigmoid(t);
            for (j, o) in out.iter_mut().enumerate() {
                *o += resid * data_s.x[(i, j)];
            }
        }
    };

    Target::new(d, Box::new(log_density), Box::new(score), Some(regularity), None)
}

/// Loads a regression dataset from a headered CSV file whose final column
/// is the binary label. Optionally standardizes each feature column to
/// zero mean and unit (population) variance, then appends an intercept
/// column of ones.
pub fn load_regression_csv<P: AsRef<Path>>(
    path: P,
    standardize: bool,
    sigma0_sq: f64,
) -> Result<LogisticRegressionData, CsvError> {
    let path_str = path.as_ref().display().to_string();
    let file = std::fs::File::open(path.as_ref()).map_err(|source| CsvError::Io {
        path: path_str.clone(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(source))) => return Err(CsvError::Io { path: path_str, source }),
        None => return Err(CsvError::Empty),
    };
    let n_cols = header.split(',').count();
    if n_cols < 2 {
        return Err(CsvError::FieldCount {
            line: 1,
            expected: 2,
            found: n_cols,
        });
    }

    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut n_rows = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1; // 1-based, header is line 1
        let line = line.map_err(|source| CsvError::Io {
            path: path_str.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_cols {
            return Err(CsvError::FieldCount {
                line: line_no,
                expected: n_cols,
                found: fields.len(),
            });
        }
        for (c, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| CsvError::BadNumber {
                line: line_no,
                value: field.trim().to_string(),
            })?;
            if c + 1 == n_cols {
                if v != 0.0 && v != 1.0 {
                    return Err(CsvError::NonBinaryLabel { line: line_no, value: v });
                }
                labels.push(v);
            } else {
                features.push(v);
            }
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(CsvError::Empty);
    }

    let n_feat = n_cols - 1;
    let mut x = DMatrix::<f64>::from_row_slice(n_rows, n_feat, &features);
    if standardize {
        for j in 0..n_feat {
            let mean = x.column(j).sum() / n_rows as f64;
            let var = x.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_rows as f64;
            let sd = var.sqrt();
            for i in 0..n_rows {
                x[(i, j)] = if sd > 1e-12 { (x[(i, j)] - mean) / sd } else { 0.0 };
            }
        }
    }
    let x = x.insert_column(n_feat, 1.0);

    LogisticRegressionData::new(x, labels, sigma0_sq).map_err(|_| CsvError::Empty)
}

/// Synthetic logistic dataset: iid standard normal rows and labels drawn
/// from the model at `true_theta`. Deterministic given seed; intended as
/// a desk-scale stand-in for a real dataset.
pub fn synth_regression_data(
    n: usize,
    d: usize,
    seed: u64,
    true_theta: &[f64],
    sigma0_sq: f64,
) -> Result<LogisticRegressionData, TargetError> {
    if n == 0 || d == 0 {
        return Err(TargetError::EmptyData);
    }
    assert_eq!(true_theta.len(), d, "true_theta must have length d");
    let mut rng = crate::rng::seeded(seed);
    let mut x = DMatrix::<f64>::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let mut t = 0.0;
        for j in 0..d {
            let v: f64 = rng.sample(StandardNormal);
            x[(i, j)] = v;
            t += v * true_theta[j];
        }
        let u: f64 = rng.random();
        y.push(if u < sigmoid(t) { 1.0 } else { 0.0 });
    }
    LogisticRegressionData::new(x, y, sigma0_sq)
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 30.0 {
        t
    } else if t < -30.0 {
        0.0
    } else {
        (1.0 + t.exp()).ln()
    }
}

fn dot_row(x: &DMatrix<f64>, i: usize, theta: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (j, tj) in theta.iter().enumerate() {
        acc += x[(i, j)] * tj;
    }
    acc
}

/// `lambda_max(X'X)` by power iteration (50 iterations, tolerance 1e-8),
/// applying `X` and `X'` without forming the Gram matrix.
fn spectral_norm_sq(x: &DMatrix<f64>) -> f64 {
    let (n, d) = (x.nrows(), x.ncols());
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..50 {
        // u = X v; w = X' u
        let mut w = vec![0.0; d];
        for i in 0..n {
            let mut u = 0.0;
            for j in 0..d {
                u += x[(i, j)] * v[j];
            }
            for j in 0..d {
                w[j] += x[(i, j)] * u;
            }
        }
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let new_lambda = norm;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
        if (new_lambda - lambda).abs() <= 1e-8 * new_lambda.max(1.0) {
            return new_lambda;
        }
        lambda = new_lambda;
    }
    lambda
}
