//! Banana-shaped target: a Gaussian warped by a quadratic bend.

use super::{Target, TargetError};
use rand::Rng;
use rand_distr::StandardNormal;

/// Banana-shaped density `pi(x) = f(phi_b(x))` where `f` is a zero-mean
/// normal with covariance `diag(100, 1, ..., 1)` and
/// `phi_b(x) = (x1, x2 + b*x1^2 - 100b, x3, ..., xd)`.
///
/// `phi_b` has unit Jacobian determinant, so the reference sampler draws
/// `z ~ f` and returns `phi_b^{-1}(z) = (z1, z2 - b*z1^2 + 100b, z3, ...)`.
pub fn banana_target(dim: usize, b: f64) -> Result<Target, TargetError> {
    if dim < 2 {
        return Err(TargetError::DimTooSmall { min: 2, got: dim });
    }
    if b <= 0.0 {
        return Err(TargetError::NonPositiveCurvature(b));
    }

    // f is N(0, diag(100, 1, ..., 1)); its normalizing constant is kept so
    // the returned log-density is the exact log pdf (the bend preserves
    // volume).
    let log_norm = -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + 100.0f64.ln());

    let bend = move |x: &[f64]| -> (f64, f64) {
        // returns (phi_1, phi_2); the remaining coordinates are untouched
        (x[0], x[1] + b * x[0] * x[0] - 100.0 * b)
    };

    let log_density = move |x: &[f64]| {
        let (p1, p2) = bend(x);
        let mut q = p1 * p1 / 100.0 + p2 * p2;
        for xi in &x[2..] {
            q += xi * xi;
        }
        log_norm - 0.5 * q
    };

    // chain rule through phi_b: grad = J^T (-Sigma^{-1} phi), and
    // J = I + 2b*x1 * e2 e1^T adds 2b*x1 * g2 to the first coordinate.
    let score = move |x: &[f64], out: &mut [f64]| {
        let (p1, p2) = bend(x);
        let g1 = -p1 / 100.0;
        let g2 = -p2;
        out[0] = g1 + 2.0 * b * x[0] * g2;
        out[1] = g2;
        for (o, xi) in out[2..].iter_mut().zip(&x[2..]) {
            *o = -xi;
        }
    };

    let sampler = move |rng: &mut rand_chacha::ChaCha8Rng, out: &mut [f64]| {
        let z1: f64 = rng.sample::<f64, _>(StandardNormal) * 10.0;
        let z2: f64 = rng.sample(StandardNormal);
        out[0] = z1;
        out[1] = z2 - b * z1 * z1 + 100.0 * b;
        for o in out[2..].iter_mut() {
            *o = rng.sample(StandardNormal);
        }
    };

    Target::new(
        dim,
        Box::new(log_density),
        Box::new(score),
        None,
        Some(Box::new(sampler)),
    )
}

/// Forward bend `phi_b` applied to a point; pushing target samples
/// through it recovers the underlying `N(0, diag(100, 1, ..., 1))`.
pub fn banana_bend(x: &[f64], b: f64) -> Vec<f64> {
    let mut z = x.to_vec();
    z[1] = x[1] + b * x[0] * x[0] - 100.0 * b;
    z
}
