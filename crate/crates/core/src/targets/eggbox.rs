//! Four-component equally weighted Gaussian mixture ("eggbox").

use super::{Target, TargetError};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

const COMPONENTS: usize = 4;

/// Mixture of four equally weighted Gaussian components.
///
/// The log-density is the exact log pdf of the mixture; the score is the
/// softmax-weighted combination of the component scores. The component
/// count is fixed at four.
pub fn eggbox_target(
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
) -> Result<Target, TargetError> {
    if means.len() != COMPONENTS || covariances.len() != COMPONENTS {
        return Err(TargetError::BadComponentCount(means.len().max(covariances.len())));
    }
    let dim = means[0].len();
    if dim == 0 {
        return Err(TargetError::DimTooSmall { min: 1, got: 0 });
    }

    let mut precisions = Vec::with_capacity(COMPONENTS);
    let mut chol_factors = Vec::with_capacity(COMPONENTS);
    let mut log_consts = Vec::with_capacity(COMPONENTS);
    for (k, (m, c)) in means.iter().zip(&covariances).enumerate() {
        if m.len() != dim || c.nrows() != dim || c.ncols() != dim {
            return Err(TargetError::ComponentShape { index: k, dim });
        }
        let chol = nalgebra::Cholesky::new(c.clone()).ok_or(TargetError::NotSpd)?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        // log of (1/4) * (2 pi)^{-d/2} |Sigma_k|^{-1/2}
        log_consts.push(
            -(COMPONENTS as f64).ln()
                - 0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
        );
        precisions.push(chol.inverse());
        chol_factors.push(chol.l());
    }

    // per-component log weight*density terms, shared by density and score
    let component_logs = {
        let means = means.clone();
        let precisions = precisions.clone();
        let log_consts = log_consts.clone();
        move |x: &[f64]| -> [f64; COMPONENTS] {
            let xv = DVector::from_row_slice(x);
            let mut out = [0.0; COMPONENTS];
            for k in 0..COMPONENTS {
                let d = &xv - &means[k];
                out[k] = log_consts[k] - 0.5 * (&precisions[k] * &d).dot(&d);
            }
            out
        }
    };

    let logs_density = component_logs.clone();
    let log_density = move |x: &[f64]| log_sum_exp(&logs_density(x));

    let means_score = means.clone();
    let precisions_score = precisions.clone();
    let score = move |x: &[f64], out: &mut [f64]| {
        let logs = component_logs(x);
        let lse = log_sum_exp(&logs);
        let xv = DVector::from_row_slice(x);
        for o in out.iter_mut() {
            *o = 0.0;
        }
        for k in 0..COMPONENTS {
            let w = (logs[k] - lse).exp();
            if w == 0.0 {
                continue;
            }
            let d = &xv - &means_score[k];
            let g = &precisions_score[k] * d;
            for (o, gi) in out.iter_mut().zip(g.iter()) {
                *o -= w * gi;
            }
        }
    };

    let means_sample = means;
    let sampler = move |rng: &mut rand_chacha::ChaCha8Rng, out: &mut [f64]| {
        let k = rng.random_range(0..COMPONENTS);
        let z = DVector::<f64>::from_iterator(dim, (0..dim).map(|_| rng.sample(StandardNormal)));
        let x = &means_sample[k] + &chol_factors[k] * z;
        out.copy_from_slice(x.as_slice());
    };

    Target::new(
        dim,
        Box::new(log_density),
        Box::new(score),
        None,
        Some(Box::new(sampler)),
    )
}

/// Default component covariances: unit variances with correlation
/// alternating between +0.5 and -0.5 in the leading 2x2 block.
pub fn eggbox_default_covariances(dim: usize) -> Vec<DMatrix<f64>> {
    (0..COMPONENTS)
        .map(|k| {
            let mut c = DMatrix::identity(dim, dim);
            if dim >= 2 {
                let rho = if k % 2 == 0 { 0.5 } else { -0.5 };
                c[(0, 1)] = rho;
                c[(1, 0)] = rho;
            }
            c
        })
        .collect()
}

fn log_sum_exp(vals: &[f64]) -> f64 {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
