//! Closeness measures between particle clouds and targets.

use crate::cloud::ParticleCloud;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("clouds have different dimensions: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("cloud is empty")]
    EmptyCloud,
    #[error("need at least one mode center")]
    NoCenters,
    #[error("coordinate {coord} out of range for dimension {dim}")]
    BadCoordinate { coord: usize, dim: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct SlicedW2Config {
    pub projections: usize,
    pub seed: u64,
}

impl Default for SlicedW2Config {
    fn default() -> Self {
        SlicedW2Config {
            projections: 128,
            seed: 0,
        }
    }
}

/// Sliced 2-Wasserstein distance: the average over random unit
/// directions of the exact one-dimensional W2 between the projected
/// samples. Exact per slice via the sorted-quantile coupling; an
/// underestimate of the true W2 but monotone with it.
pub fn sliced_w2(
    a: &ParticleCloud,
    b: &ParticleCloud,
    cfg: &SlicedW2Config,
) -> Result<f64, DiagError> {
    if a.dim() != b.dim() {
        return Err(DiagError::DimMismatch(a.dim(), b.dim()));
    }
    if a.is_empty() || b.is_empty() {
        return Err(DiagError::EmptyCloud);
    }
    let d = a.dim();
    let mut rng = crate::rng::seeded_stream(cfg.seed, 0x51);
    let mut pa = vec![0.0; a.len()];
    let mut pb = vec![0.0; b.len()];
    let mut acc = 0.0;
    for _ in 0..cfg.projections.max(1) {
        let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in dir.iter_mut() {
            *v /= norm.max(1e-300);
        }
        project(a, &dir, &mut pa);
        project(b, &dir, &mut pb);
        pa.sort_by(|x, y| x.partial_cmp(y).unwrap());
        pb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        acc += w2_1d_sorted(&pa, &pb);
    }
    Ok(acc / cfg.projections.max(1) as f64)
}

fn project(cloud: &ParticleCloud, dir: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(cloud.rows()) {
        *o = row.iter().zip(dir).map(|(x, d)| x * d).sum();
    }
}

/// Exact 1-D W2 between two sorted empirical samples of possibly
/// different sizes, integrating the quantile-function gap.
fn w2_1d_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let mut i = 0usize;
    let mut j = 0usize;
    let mut q = 0.0f64;
    let mut acc = 0.0f64;
    while i < n && j < m {
        let qa = (i + 1) as f64 / n as f64;
        let qb = (j + 1) as f64 / m as f64;
        let next = qa.min(qb);
        let gap = a[i] - b[j];
        acc += (next - q) * gap * gap;
        q = next;
        if qa <= next + 1e-18 {
            i += 1;
        }
        if qb <= next + 1e-18 {
            j += 1;
        }
    }
    acc.max(0.0).sqrt()
}

#[derive(Debug, Clone)]
pub struct MomentReport {
    pub mean_abs_err: Vec<f64>,
    pub cov_rel_err: f64,
    pub mean_ok: bool,
    pub cov_ok: bool,
}

impl MomentReport {
    pub fn pass(&self) -> bool {
        self.mean_ok && self.cov_ok
    }
}

/// Compares empirical moments to a reference: per-coordinate absolute
/// tolerance on the mean, Frobenius-relative tolerance on the covariance.
pub fn moment_test(
    cloud: &ParticleCloud,
    mean_ref: &[f64],
    cov_ref: &DMatrix<f64>,
    tol_mean: f64,
    tol_cov: f64,
) -> MomentReport {
    let mean = cloud.mean();
    let mean_abs_err: Vec<f64> = mean
        .iter()
        .zip(mean_ref)
        .map(|(a, b)| (a - b).abs())
        .collect();
    let cov = cloud.covariance();
    let cov_rel_err = (&cov - cov_ref).norm() / cov_ref.norm().max(f64::MIN_POSITIVE);
    MomentReport {
        mean_ok: mean_abs_err.iter().all(|e| *e <= tol_mean),
        cov_ok: cov_rel_err <= tol_cov,
        mean_abs_err,
        cov_rel_err,
    }
}

#[derive(Debug, Clone)]
pub struct ModeReport {
    pub fractions: Vec<f64>,
    /// Distance from each mode's particle average to its center; NaN for
    /// modes that captured no particles.
    pub displacements: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Assigns each particle to its nearest center (ties broken by the
/// lowest center index) and reports per-mode mass and displacement.
pub fn mode_masses(cloud: &ParticleCloud, centers: &[Vec<f64>]) -> Result<ModeReport, DiagError> {
    if centers.is_empty() {
        return Err(DiagError::NoCenters);
    }
    if cloud.is_empty() {
        return Err(DiagError::EmptyCloud);
    }
    let d = cloud.dim();
    for c in centers {
        if c.len() != d {
            return Err(DiagError::DimMismatch(c.len(), d));
        }
    }
    let k = centers.len();
    let mut counts = vec![0usize; k];
    let mut sums = vec![vec![0.0; d]; k];
    for row in cloud.rows() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (idx, c) in centers.iter().enumerate() {
            let dist: f64 = row.iter().zip(c).map(|(x, y)| (x - y) * (x - y)).sum();
            if dist < best_d {
                best_d = dist;
                best = idx;
            }
        }
        counts[best] += 1;
        for (s, x) in sums[best].iter_mut().zip(row) {
            *s += x;
        }
    }
    let n = cloud.len() as f64;
    let fractions: Vec<f64> = counts.iter().map(|c| *c as f64 / n).collect();
    let displacements: Vec<f64> = (0..k)
        .map(|idx| {
            if counts[idx] == 0 {
                f64::NAN
            } else {
                sums[idx]
                    .iter()
                    .zip(&centers[idx])
                    .map(|(s, c)| {
                        let m = s / counts[idx] as f64;
                        (m - c) * (m - c)
                    })
                    .sum::<f64>()
                    .sqrt()
            }
        })
        .collect();
    Ok(ModeReport {
        fractions,
        displacements,
        counts,
    })
}

#[derive(Debug, Clone)]
pub struct ScoreErrorStats {
    /// `mean ||xi||^2` over the cloud, the empirical bounded-norm constant.
    pub mean_sq_norm: f64,
    pub max_norm: f64,
    /// `<∇F, ∇F + xi>_mu / ||∇F||_mu`, the empirical direction constant;
    /// equals `||∇F||_mu` for a perfect score.
    pub direction_correlation: f64,
}

/// Residual statistics of a score estimate against the true cloud score,
/// echoing the bounded-norm and correct-direction error conditions.
pub fn score_error_stats<S, C, T>(
    cloud: &ParticleCloud,
    mut model_score: S,
    mut true_cloud_score: C,
    mut target_score: T,
) -> ScoreErrorStats
where
    S: FnMut(&[f64], &mut [f64]),
    C: FnMut(&[f64], &mut [f64]),
    T: FnMut(&[f64], &mut [f64]),
{
    let d = cloud.dim();
    let mut s = vec![0.0; d];
    let mut c = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut sq_sum = 0.0;
    let mut max_norm = 0.0f64;
    let mut inner = 0.0;
    let mut grad_sq = 0.0;
    for x in cloud.rows() {
        model_score(x, &mut s);
        true_cloud_score(x, &mut c);
        target_score(x, &mut g);
        let mut xi_sq = 0.0;
        for j in 0..d {
            let xi = s[j] - c[j];
            let grad_f = c[j] - g[j];
            xi_sq += xi * xi;
            inner += grad_f * (grad_f + xi);
            grad_sq += grad_f * grad_f;
        }
        sq_sum += xi_sq;
        max_norm = max_norm.max(xi_sq.sqrt());
    }
    let n = cloud.len() as f64;
    let grad_norm = (grad_sq / n).sqrt();
    ScoreErrorStats {
        mean_sq_norm: sq_sum / n,
        max_norm,
        direction_correlation: if grad_norm > 0.0 {
            (inner / n) / grad_norm
        } else {
            0.0
        },
    }
}

#[derive(Debug, Clone)]
pub struct KdeTable {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    /// Set when the coordinate had no spread and the table degenerates
    /// to a single spike.
    pub degenerate: bool,
}

const KDE_GRID_POINTS: usize = 256;

/// Gaussian-kernel density of one coordinate on a 256-point grid
/// spanning the data range plus three bandwidths, with the Silverman
/// rule when no bandwidth is given.
pub fn kde_marginal(
    cloud: &ParticleCloud,
    coordinate: usize,
    bandwidth: Option<f64>,
) -> Result<KdeTable, DiagError> {
    if cloud.is_empty() {
        return Err(DiagError::EmptyCloud);
    }
    if coordinate >= cloud.dim() {
        return Err(DiagError::BadCoordinate {
            coord: coordinate,
            dim: cloud.dim(),
        });
    }
    let mut vals: Vec<f64> = cloud.rows().map(|r| r[coordinate]).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let iqr = vals[(vals.len() * 3) / 4] - vals[vals.len() / 4];
    let silverman_scale = if sd > 0.0 && iqr > 0.0 {
        sd.min(iqr / 1.34)
    } else {
        sd.max(iqr / 1.34)
    };
    let h = bandwidth.unwrap_or(0.9 * silverman_scale * n.powf(-0.2));

    if h <= 0.0 || !h.is_finite() {
        // zero-spread coordinate: represent a unit spike at the value
        let v = vals[0];
        let lo = v - 1.0;
        let hi = v + 1.0;
        let step = (hi - lo) / (KDE_GRID_POINTS - 1) as f64;
        let grid: Vec<f64> = (0..KDE_GRID_POINTS).map(|i| lo + i as f64 * step).collect();
        let mut density = vec![0.0; KDE_GRID_POINTS];
        let spike = KDE_GRID_POINTS / 2;
        density[spike] = 1.0 / step;
        return Ok(KdeTable {
            grid,
            density,
            bandwidth: 0.0,
            degenerate: true,
        });
    }

    let lo = vals[0] - 3.0 * h;
    let hi = vals[vals.len() - 1] + 3.0 * h;
    let step = (hi - lo) / (KDE_GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..KDE_GRID_POINTS).map(|i| lo + i as f64 * step).collect();
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let density: Vec<f64> = grid
        .iter()
        .map(|g| {
            let mut acc = 0.0;
            for v in &vals {
                let z = (g - v) / h;
                acc += (-0.5 * z * z).exp();
            }
            acc * norm
        })
        .collect();
    Ok(KdeTable {
        grid,
        density,
        bandwidth: h,
        degenerate: false,
    })
}

impl KdeTable {
    /// Trapezoid integral of the table.
    pub fn integral(&self) -> f64 {
        let mut acc = 0.0;
        for i in 1..self.grid.len() {
            acc += 0.5 * (self.density[i] + self.density[i - 1]) * (self.grid[i] - self.grid[i - 1]);
        }
        acc
    }

    /// L1 distance to another table over the union of supports, by
    /// trapezoid on a merged grid with linear interpolation.
    pub fn l1_distance(&self, other: &KdeTable) -> f64 {
        let lo = self.grid[0].min(other.grid[0]);
        let hi = self.grid[self.grid.len() - 1].max(other.grid[other.grid.len() - 1]);
        let n = 1024;
        let step = (hi - lo) / (n - 1) as f64;
        let mut acc = 0.0;
        let mut prev = (self.interp(lo) - other.interp(lo)).abs();
        for i in 1..n {
            let x = lo + i as f64 * step;
            let cur = (self.interp(x) - other.interp(x)).abs();
            acc += 0.5 * (prev + cur) * step;
            prev = cur;
        }
        acc
    }

    fn interp(&self, x: f64) -> f64 {
        let n = self.grid.len();
        if x <= self.grid[0] || x >= self.grid[n - 1] {
            return 0.0;
        }
        let step = self.grid[1] - self.grid[0];
        let idx = ((x - self.grid[0]) / step).floor() as usize;
        let idx = idx.min(n - 2);
        let w = (x - self.grid[idx]) / step;
        self.density[idx] * (1.0 - w) + self.density[idx + 1] * w
    }
}
