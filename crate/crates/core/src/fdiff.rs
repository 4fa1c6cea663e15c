//! Central finite differences, used throughout the test suites as an
//! independent check on hand-derived gradients and Jacobian traces.

/// Central-difference gradient of a scalar function.
pub fn grad<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + h;
        let fp = f(&xp);
        xp[i] = xi - h;
        let fm = f(&xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference trace of the Jacobian of a vector field.
pub fn jacobian_trace<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64], h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut tr = 0.0;
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + h;
        let fp = f(&xp)[i];
        xp[i] = xi - h;
        let fm = f(&xp)[i];
        xp[i] = xi;
        tr += (fp - fm) / (2.0 * h);
    }
    tr
}

/// Relative discrepancy with an absolute floor of 1, suitable for
/// comparing vectors whose scale is unknown a priori.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1.0)
}
