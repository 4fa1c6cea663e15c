//! Closed-form Gaussian flow: the exact moment recursion for the WGD map,
//! KL and Bures-W2 in closed form, and perturbed-update experiments.
//!
//! When both the current measure and the target are Gaussian, the WGD
//! update map `x -> x - eta * ∇log(mu/pi)(x)` is affine, so the
//! pushforward of a Gaussian stays Gaussian with explicit moments. That
//! turns the convergence guarantees (one-step descent, sublinear KL
//! decay, W2 contraction, robustness to gradient noise) into numeric
//! statements this module checks directly.

use crate::cloud::{CloudError, ParticleCloud};
use crate::engine::StepSchedule;
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("covariance is not symmetric positive definite")]
    NotSpd,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("step size {eta} too large: update matrix is not positive definite")]
    StepTooLarge { eta: f64 },
    #[error("matrix square root failed: eigenvalue {eigenvalue} (condition {condition:.3e})")]
    MatrixSqrtFailed { eigenvalue: f64, condition: f64 },
    #[error("schedule violates the smallness condition: denominator {denominator} <= 0 at step {step}")]
    ScheduleTooLarge { denominator: f64, step: usize },
    #[error("perturbation spec invalid: {0}")]
    BadPerturbation(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

/// Gaussian measure `N(mean, cov)` with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianState {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det: f64,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, OracleError> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(OracleError::DimMismatch(mean.len(), cov.nrows()));
        }
        let sym = (&cov + cov.transpose()) * 0.5;
        let chol = nalgebra::Cholesky::new(sym.clone()).ok_or(OracleError::NotSpd)?;
        let log_det = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        Ok(GaussianState {
            mean,
            cov: sym,
            chol_l: chol.l(),
            precision: chol.inverse(),
            log_det,
        })
    }

    /// Isotropic Gaussian `N(mean, var * I)`.
    pub fn isotropic(mean: DVector<f64>, var: f64) -> Result<Self, OracleError> {
        let d = mean.len();
        GaussianState::new(mean, DMatrix::identity(d, d) * var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// `∇log q(x) = -Sigma^{-1}(x - m)` written into `out`.
    pub fn score_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += self.precision[(i, j)] * (xj - self.mean[j]);
            }
            *o = -acc;
        }
    }

    /// Draws `n` samples.
    pub fn sample(&self, n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> ParticleCloud {
        let d = self.dim();
        let mut cloud = ParticleCloud::zeros(n, d);
        let mut z = DVector::<f64>::zeros(d);
        for i in 0..n {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let x = &self.mean + &self.chol_l * &z;
            cloud.row_mut(i).copy_from_slice(x.as_slice());
        }
        cloud
    }

    /// Fits a Gaussian to the empirical moments of a cloud (with a small
    /// diagonal jitter so degenerate clouds stay usable).
    pub fn fit(cloud: &ParticleCloud) -> Result<Self, OracleError> {
        let mean = DVector::from_vec(cloud.mean());
        let mut cov = cloud.covariance();
        for i in 0..cov.nrows() {
            cov[(i, i)] += 1e-12;
        }
        GaussianState::new(mean, cov)
    }
}

/// One exact WGD step in the Gaussian family.
///
/// The Wasserstein gradient of the KL at `mu` is affine, so the update
/// pushes `N(m, S)` to `N(A m + eta(P_pi m_pi - P_mu m_mu), A S A')`
/// with `A = I - eta (P_pi - P_mu)` and `P` the precision matrices.
pub fn oracle_step(
    mu: &GaussianState,
    pi: &GaussianState,
    eta: f64,
) -> Result<GaussianState, OracleError> {
    let d = mu.dim();
    if d != pi.dim() {
        return Err(OracleError::DimMismatch(d, pi.dim()));
    }
    let a = DMatrix::identity(d, d) - (pi.precision() - mu.precision()) * eta;
    let a_sym = (&a + a.transpose()) * 0.5;
    if nalgebra::Cholesky::new(a_sym.clone()).is_none() {
        return Err(OracleError::StepTooLarge { eta });
    }
    let shift = (pi.precision() * pi.mean() - mu.precision() * mu.mean()) * eta;
    let mean = &a_sym * mu.mean() + shift;
    let cov = &a_sym * mu.cov() * &a_sym;
    GaussianState::new(mean, cov)
}

/// `KL(mu || pi)` between Gaussians in closed form.
pub fn kl_gaussian(mu: &GaussianState, pi: &GaussianState) -> f64 {
    let d = mu.dim() as f64;
    let trace = (pi.precision() * mu.cov()).trace();
    let dm = pi.mean() - mu.mean();
    let maha = (pi.precision() * &dm).dot(&dm);
    0.5 * (trace + maha - d + pi.log_det - mu.log_det)
}

/// Bures 2-Wasserstein distance between Gaussians.
pub fn w2_gaussian(mu: &GaussianState, pi: &GaussianState) -> Result<f64, OracleError> {
    w2_gaussian_with_condition(mu, pi).map(|(w, _)| w)
}

/// Bures W2 with the condition number of the inner product matrix, which
/// is worth inspecting when it exceeds 1e8.
pub fn w2_gaussian_with_condition(
    mu: &GaussianState,
    pi: &GaussianState,
) -> Result<(f64, f64), OracleError> {
    let sqrt_pi = sym_sqrt(pi.cov())?;
    let inner = &sqrt_pi * mu.cov() * &sqrt_pi;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = inner.symmetric_eigen();
    let lam_max = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
    let lam_min = eig.eigenvalues.min();
    let condition = lam_max / lam_min.abs().max(f64::MIN_POSITIVE);
    let mut cross = 0.0;
    for lam in eig.eigenvalues.iter() {
        if *lam < -1e-10 * lam_max {
            return Err(OracleError::MatrixSqrtFailed {
                eigenvalue: *lam,
                condition,
            });
        }
        cross += lam.max(0.0).sqrt();
    }
    let dm = mu.mean() - pi.mean();
    let w2_sq = dm.norm_squared() + mu.cov().trace() + pi.cov().trace() - 2.0 * cross;
    Ok((w2_sq.max(0.0).sqrt(), condition))
}

/// Closed-form `||∇_mu F||^2_mu` for Gaussian `mu`, `pi`:
/// `tr(B S_mu B) + ||P_pi (m_mu - m_pi)||^2` with `B = P_pi - P_mu`.
pub fn grad_norm_sq(mu: &GaussianState, pi: &GaussianState) -> f64 {
    let b = pi.precision() - mu.precision();
    let c = pi.precision() * (mu.mean() - pi.mean());
    (&b * mu.cov() * &b).trace() + c.norm_squared()
}

/// Lipschitz surrogate for the target potential gradient: the supremum of
/// `||∇V||` over a ball containing the 6-sigma ellipsoids of both states.
///
/// A Gaussian potential is not globally Lipschitz; this surrogate makes
/// the contraction and noise-robustness bounds checkable at desk scale
/// while staying explicit about the restriction.
pub fn surrogate_lipschitz(mu: &GaussianState, pi: &GaussianState) -> f64 {
    let lam_max_mu = mu.cov().clone().symmetric_eigen().eigenvalues.max();
    let eig_pi = pi.cov().clone().symmetric_eigen();
    let lam_max_pi = eig_pi.eigenvalues.max();
    let lam_min_pi = eig_pi.eigenvalues.min();
    let radius = (mu.mean() - pi.mean()).norm() + 6.0 * (lam_max_mu.sqrt() + lam_max_pi.sqrt());
    radius / lam_min_pi
}

// ---------------------------------------------------------------------
// One-step descent check
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DescentRow {
    pub eta: f64,
    pub delta_f: f64,
    pub grad_norm_sq: f64,
    /// `(F(nu) - F(mu) + eta ||∇F||^2) / eta^2`
    pub remainder_simple: f64,
    /// `(F(nu) - F(mu) + eta (1 - 1.5 beta eta) ||∇F||^2) / eta^2`
    pub remainder_curved: f64,
}

#[derive(Debug, Clone)]
pub struct DescentReport {
    pub rows: Vec<DescentRow>,
    /// Minimal constant making the curved descent inequality hold over
    /// the sweep.
    pub c_hat: f64,
    pub all_descend: bool,
    pub max_abs_remainder: f64,
    pub min_abs_remainder: f64,
    pub beta: f64,
}

impl DescentReport {
    pub fn remainder_ratio(&self) -> f64 {
        self.max_abs_remainder / self.min_abs_remainder.max(f64::MIN_POSITIVE)
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        vec![
            ("descent_c_hat".into(), format!("{}", self.c_hat)),
            ("descent_all_descend".into(), format!("{}", self.all_descend)),
            (
                "descent_remainder_max_abs".into(),
                format!("{}", self.max_abs_remainder),
            ),
            (
                "descent_remainder_min_abs".into(),
                format!("{}", self.min_abs_remainder),
            ),
            (
                "descent_remainder_ratio".into(),
                format!("{}", self.remainder_ratio()),
            ),
        ]
    }
}

/// Evaluates the one-step descent inequality over a step-size sweep: for
/// every `eta`, computes `F(nu) - F(mu)` exactly and the second-order
/// remainder, and fits the minimal constant absorbing it.
pub fn check_one_step_descent(
    mu: &GaussianState,
    pi: &GaussianState,
    etas: &[f64],
) -> Result<DescentReport, OracleError> {
    let beta = 1.0 / pi.cov().clone().symmetric_eigen().eigenvalues.min();
    let f_mu = kl_gaussian(mu, pi);
    let g = grad_norm_sq(mu, pi);
    let mut rows = Vec::with_capacity(etas.len());
    let mut c_hat = 0.0f64;
    let mut all_descend = true;
    let mut max_abs = 0.0f64;
    let mut min_abs = f64::INFINITY;
    for &eta in etas {
        let nu = oracle_step(mu, pi, eta)?;
        let delta_f = kl_gaussian(&nu, pi) - f_mu;
        if delta_f >= 0.0 && g > 0.0 {
            all_descend = false;
        }
        let remainder_simple = (delta_f + eta * g) / (eta * eta);
        let remainder_curved = (delta_f + eta * (1.0 - 1.5 * beta * eta) * g) / (eta * eta);
        c_hat = c_hat.max(remainder_curved);
        max_abs = max_abs.max(remainder_simple.abs());
        min_abs = min_abs.min(remainder_simple.abs());
        rows.push(DescentRow {
            eta,
            delta_f,
            grad_norm_sq: g,
            remainder_simple,
            remainder_curved,
        });
    }
    Ok(DescentReport {
        rows,
        c_hat,
        all_descend,
        max_abs_remainder: max_abs,
        min_abs_remainder: min_abs,
        beta,
    })
}

// ---------------------------------------------------------------------
// One-step W2 contraction check
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ContractionReport {
    pub eta: f64,
    pub lipschitz: f64,
    pub kl_mu: f64,
    pub w2_sq_before: f64,
    pub w2_sq_after: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Whether `eta < 2 F(mu) / L^2`, the regime in which strict
    /// contraction is guaranteed.
    pub strict_regime: bool,
}

impl ContractionReport {
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        vec![
            ("contraction_eta".into(), format!("{}", self.eta)),
            ("contraction_lipschitz".into(), format!("{}", self.lipschitz)),
            ("contraction_w2sq_before".into(), format!("{}", self.w2_sq_before)),
            ("contraction_w2sq_after".into(), format!("{}", self.w2_sq_after)),
            ("contraction_rhs".into(), format!("{}", self.rhs)),
            ("contraction_holds".into(), format!("{}", self.holds)),
            ("contraction_strict_regime".into(), format!("{}", self.strict_regime)),
        ]
    }
}

/// Checks `W2^2(nu, pi) <= W2^2(mu, pi) - 2 eta F(mu) + eta^2 L^2` for one
/// step, with `L` a caller-supplied Lipschitz surrogate.
pub fn check_w2_contraction(
    mu: &GaussianState,
    pi: &GaussianState,
    eta: f64,
    lipschitz: f64,
) -> Result<ContractionReport, OracleError> {
    let nu = oracle_step(mu, pi, eta)?;
    let w2_before = w2_gaussian(mu, pi)?;
    let w2_after = w2_gaussian(&nu, pi)?;
    let kl_mu = kl_gaussian(mu, pi);
    let w2_sq_before = w2_before * w2_before;
    let w2_sq_after = w2_after * w2_after;
    let rhs = w2_sq_before - 2.0 * eta * kl_mu + eta * eta * lipschitz * lipschitz;
    let tol = 1e-12 * (1.0 + w2_sq_before.abs());
    Ok(ContractionReport {
        eta,
        lipschitz,
        kl_mu,
        w2_sq_before,
        w2_sq_after,
        rhs,
        holds: w2_sq_after <= rhs + tol,
        strict_regime: eta < 2.0 * kl_mu / (lipschitz * lipschitz),
    })
}

// ---------------------------------------------------------------------
// Schedule-driven convergence check
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub kl: Vec<f64>,
    pub w2: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub c_hat: f64,
    /// `F(mu_T) / F(mu_0)` at the final iterate.
    pub final_ratio: f64,
    /// First iteration `>= monotone_from` at which KL increased, if any.
    pub monotone_violation: Option<usize>,
    pub monotone_from: usize,
    /// Whether `W2^2 <= (2/alpha) F` held at every iterate.
    pub talagrand_ok: bool,
    /// Whether the fitted sublinear bound held at every iterate past the
    /// fitting prefix.
    pub bound_ok: bool,
    pub sum_eta: f64,
    pub sum_eta_sq: f64,
}

impl ConvergenceReport {
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        vec![
            ("convergence_kl_initial".into(), format!("{}", self.kl[0])),
            (
                "convergence_kl_final".into(),
                format!("{}", self.kl[self.kl.len() - 1]),
            ),
            ("convergence_final_ratio".into(), format!("{}", self.final_ratio)),
            ("convergence_c_hat".into(), format!("{}", self.c_hat)),
            (
                "convergence_monotone_ok".into(),
                format!("{}", self.monotone_violation.is_none()),
            ),
            ("convergence_talagrand_ok".into(), format!("{}", self.talagrand_ok)),
            ("convergence_bound_ok".into(), format!("{}", self.bound_ok)),
            ("convergence_sum_eta".into(), format!("{}", self.sum_eta)),
            ("convergence_sum_eta_sq".into(), format!("{}", self.sum_eta_sq)),
        ]
    }
}

/// Runs the exact recursion for `t_final` steps under a decaying step
/// schedule and checks the sublinear KL bound, the eventual monotonicity
/// of KL, and the Talagrand inequality `W2^2 <= (2/alpha) F` at every
/// iterate. The unknown constant in the bound is fitted as the minimal
/// value over a prefix and then required to hold on the remainder.
pub fn check_kl_convergence(
    mu0: &GaussianState,
    pi: &GaussianState,
    schedule: &StepSchedule,
    t_final: usize,
) -> Result<ConvergenceReport, OracleError> {
    let eig = pi.cov().clone().symmetric_eigen();
    let alpha = 1.0 / eig.eigenvalues.max();
    let beta = 1.0 / eig.eigenvalues.min();

    let mut kl = Vec::with_capacity(t_final + 1);
    let mut w2 = Vec::with_capacity(t_final + 1);
    let mut state = mu0.clone();
    kl.push(kl_gaussian(&state, pi));
    w2.push(w2_gaussian(&state, pi)?);
    let mut sum_eta = 0.0;
    let mut sum_eta_sq = 0.0;
    let mut denominators = Vec::with_capacity(t_final);
    for t in 0..t_final {
        let eta = schedule.step_size(t);
        state = oracle_step(&state, pi, eta)?;
        kl.push(kl_gaussian(&state, pi));
        w2.push(w2_gaussian(&state, pi)?);
        sum_eta += eta;
        sum_eta_sq += eta * eta;
        let denom = 1.0 + 2.0 * alpha * sum_eta - 3.0 * alpha * beta * sum_eta_sq;
        if denom <= 0.0 {
            return Err(OracleError::ScheduleTooLarge {
                denominator: denom,
                step: t,
            });
        }
        denominators.push(denom);
    }

    // prefix-fit the constant, then verify on the remaining iterates
    let prefix = (t_final / 10).clamp(1, 200).min(t_final);
    let mut c_hat = 0.0f64;
    let mut eta_sq_acc = 0.0;
    for t in 0..prefix {
        let eta = schedule.step_size(t);
        eta_sq_acc += eta * eta;
        let needed = (kl[t + 1] * denominators[t] - kl[0]) / eta_sq_acc;
        c_hat = c_hat.max(needed);
    }
    let mut bound_ok = true;
    let mut eta_sq_acc2 = 0.0;
    for t in 0..t_final {
        let eta = schedule.step_size(t);
        eta_sq_acc2 += eta * eta;
        let bound = (kl[0] + c_hat * eta_sq_acc2) / denominators[t];
        if kl[t + 1] > bound + 1e-10 * (1.0 + bound.abs()) {
            bound_ok = false;
        }
    }

    let monotone_from = 5usize;
    let mut monotone_violation = None;
    for t in monotone_from..t_final {
        if kl[t + 1] > kl[t] + 1e-12 * (1.0 + kl[t].abs()) {
            monotone_violation = Some(t);
            break;
        }
    }

    let talagrand_ok = kl
        .iter()
        .zip(&w2)
        .all(|(f, w)| w * w <= (2.0 / alpha) * f + 1e-10 * (1.0 + f.abs()));

    let final_ratio = kl[t_final] / kl[0].max(f64::MIN_POSITIVE);
    Ok(ConvergenceReport {
        kl,
        w2,
        alpha,
        beta,
        c_hat,
        final_ratio,
        monotone_violation,
        monotone_from,
        talagrand_ok,
        bound_ok,
        sum_eta,
        sum_eta_sq,
    })
}

// ---------------------------------------------------------------------
// Perturbed updates
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationKind {
    /// No perturbation; reduces to the exact step.
    None,
    /// A fixed random direction of norm `magnitude`, held for the whole
    /// run. Violates unbiasedness on purpose; the direction-correlation
    /// condition is checked empirically and reported.
    BoundedBias,
    /// Fresh zero-mean Gaussian noise each step with
    /// `E||xi||^2 = magnitude^2`.
    ZeroMeanNoise,
}

#[derive(Debug, Clone)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub magnitude: f64,
    pub lipschitz_cap: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn none() -> Self {
        PerturbationSpec {
            kind: PerturbationKind::None,
            magnitude: 0.0,
            lipschitz_cap: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.magnitude < 0.0 || !self.magnitude.is_finite() {
            return Err(OracleError::BadPerturbation(format!(
                "magnitude must be a finite nonnegative number, got {}",
                self.magnitude
            )));
        }
        if self.lipschitz_cap < 0.0 {
            return Err(OracleError::BadPerturbation(
                "lipschitz_cap must be nonnegative".into(),
            ));
        }
        if self.kind == PerturbationKind::None && self.magnitude != 0.0 {
            return Err(OracleError::BadPerturbation(
                "kind=none requires magnitude 0".into(),
            ));
        }
        Ok(())
    }
}

/// Draws the per-step error vectors for a perturbed run.
struct PerturbationSampler {
    kind: PerturbationKind,
    magnitude: f64,
    rng: rand_chacha::ChaCha8Rng,
    fixed: Option<DVector<f64>>,
}

impl PerturbationSampler {
    fn new(spec: &PerturbationSpec, dim: usize) -> Result<Self, OracleError> {
        spec.validate()?;
        let mut rng = rng::seeded_stream(spec.seed, 0xE5);
        let fixed = if spec.kind == PerturbationKind::BoundedBias {
            let mut u = DVector::<f64>::from_iterator(
                dim,
                (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)),
            );
            let norm = u.norm();
            if norm > 0.0 {
                u /= norm;
            }
            Some(u * spec.magnitude)
        } else {
            None
        };
        Ok(PerturbationSampler {
            kind: spec.kind,
            magnitude: spec.magnitude,
            rng,
            fixed,
        })
    }

    fn next(&mut self, dim: usize) -> DVector<f64> {
        match self.kind {
            PerturbationKind::None => DVector::zeros(dim),
            PerturbationKind::BoundedBias => self.fixed.clone().unwrap(),
            PerturbationKind::ZeroMeanNoise => {
                let scale = self.magnitude / (dim as f64).sqrt();
                DVector::from_iterator(
                    dim,
                    (0..dim).map(|_| self.rng.sample::<f64, _>(StandardNormal) * scale),
                )
            }
        }
    }
}

/// One perturbed step: the exact update shifted by `-eta * xi`. A
/// constant error map is affine, so the state stays Gaussian.
pub fn perturbed_oracle_step(
    mu: &GaussianState,
    pi: &GaussianState,
    eta: f64,
    xi: &DVector<f64>,
) -> Result<GaussianState, OracleError> {
    let stepped = oracle_step(mu, pi, eta)?;
    GaussianState::new(stepped.mean() - xi * eta, stepped.cov().clone())
}

#[derive(Debug, Clone)]
pub struct NoisyRunReport {
    /// `(sum_k eta_k F(mu_k)) / (sum_k eta_k)`: by convexity of the KL
    /// functional this dominates `F` of the step-size-weighted average of
    /// the iterates, so it is the quantity compared against the bound.
    pub weighted_avg_kl: f64,
    pub final_kl: f64,
    /// `(W2^2(mu_0, pi) + 2 (L^2 + c_xi^2) sum eta_k^2) / (2 sum eta_k)`
    pub bound_rhs: f64,
    pub holds: bool,
    pub lipschitz: f64,
    pub c_xi_sq: f64,
    pub sum_eta: f64,
    pub sum_eta_sq: f64,
    /// Minimal per-step empirical direction-correlation constant
    /// `<∇F, ∇F + xi> / ||∇F||`, when the gradient norm is nonzero.
    pub min_direction_delta: Option<f64>,
    /// Whether the correct-direction condition held at every step.
    pub direction_ok: bool,
}

impl NoisyRunReport {
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("noisy_weighted_avg_kl".into(), format!("{}", self.weighted_avg_kl)),
            ("noisy_final_kl".into(), format!("{}", self.final_kl)),
            ("noisy_bound_rhs".into(), format!("{}", self.bound_rhs)),
            ("noisy_holds".into(), format!("{}", self.holds)),
            ("noisy_lipschitz".into(), format!("{}", self.lipschitz)),
            ("noisy_c_xi_sq".into(), format!("{}", self.c_xi_sq)),
            ("noisy_direction_ok".into(), format!("{}", self.direction_ok)),
        ];
        if let Some(d) = self.min_direction_delta {
            kv.push(("noisy_min_direction_delta".into(), format!("{d}")));
        }
        kv
    }
}

/// Runs the perturbed recursion for `t_final` steps and compares the
/// weighted average KL of the iterates against the noise-robust bound
/// evaluated with `c_xi^2 = magnitude^2` and the 6-sigma Lipschitz
/// surrogate.
pub fn run_noisy(
    mu0: &GaussianState,
    pi: &GaussianState,
    schedule: &StepSchedule,
    t_final: usize,
    spec: &PerturbationSpec,
) -> Result<NoisyRunReport, OracleError> {
    let dim = mu0.dim();
    let mut sampler = PerturbationSampler::new(spec, dim)?;
    let lipschitz = surrogate_lipschitz(mu0, pi);
    let c_xi_sq = spec.magnitude * spec.magnitude;

    let mut state = mu0.clone();
    let mut weighted = 0.0;
    let mut sum_eta = 0.0;
    let mut sum_eta_sq = 0.0;
    let mut min_delta: Option<f64> = None;
    let mut direction_ok = true;
    for t in 0..t_final {
        let eta = schedule.step_size(t);
        let f_here = kl_gaussian(&state, pi);
        weighted += eta * f_here;
        sum_eta += eta;
        sum_eta_sq += eta * eta;

        let xi = sampler.next(dim);
        if spec.kind == PerturbationKind::BoundedBias {
            // <∇F, ∇F + xi>_mu = ||∇F||^2 + <E ∇F, xi> with E ∇F closed form
            let g_sq = grad_norm_sq(&state, pi);
            if g_sq > 0.0 {
                let mean_grad = pi.precision() * (state.mean() - pi.mean());
                let corr = (g_sq + mean_grad.dot(&xi)) / g_sq.sqrt();
                min_delta = Some(min_delta.map_or(corr, |m: f64| m.min(corr)));
                if corr <= 0.0 {
                    direction_ok = false;
                }
            }
        }
        state = perturbed_oracle_step(&state, pi, eta, &xi)?;
    }
    let final_kl = kl_gaussian(&state, pi);
    let weighted_avg_kl = weighted / sum_eta.max(f64::MIN_POSITIVE);
    let w2_0 = w2_gaussian(mu0, pi)?;
    let bound_rhs = (w2_0 * w2_0 + 2.0 * (lipschitz * lipschitz + c_xi_sq) * sum_eta_sq)
        / (2.0 * sum_eta);
    Ok(NoisyRunReport {
        weighted_avg_kl,
        final_kl,
        bound_rhs,
        holds: weighted_avg_kl <= bound_rhs,
        lipschitz,
        c_xi_sq,
        sum_eta,
        sum_eta_sq,
        min_direction_delta: min_delta,
        direction_ok,
    })
}

/// Particle realization of the same perturbed run: a cloud drawn from
/// `mu_0` is pushed through the identical affine maps. With zero noise
/// its moments reproduce the Gaussian-mode recursion up to Monte Carlo
/// error.
pub fn run_noisy_particles(
    mu0: &GaussianState,
    pi: &GaussianState,
    schedule: &StepSchedule,
    t_final: usize,
    spec: &PerturbationSpec,
    n: usize,
    cloud_seed: u64,
) -> Result<ParticleCloud, OracleError> {
    let dim = mu0.dim();
    let mut sampler = PerturbationSampler::new(spec, dim)?;
    let mut rng = rng::seeded_stream(cloud_seed, 0xC1);
    let mut cloud = mu0.sample(n, &mut rng);
    let mut state = mu0.clone();
    for t in 0..t_final {
        let eta = schedule.step_size(t);
        let xi = sampler.next(dim);
        // same affine map applied to the tracked state and to every particle
        let a = DMatrix::identity(dim, dim) - (pi.precision() - state.precision()) * eta;
        let shift = (pi.precision() * pi.mean() - state.precision() * state.mean()) * eta
            - &xi * eta;
        cloud = cloud.map_rows(|_, x, out| {
            for (i, o) in out.iter_mut().enumerate() {
                let mut acc = shift[i];
                for (j, xj) in x.iter().enumerate() {
                    acc += a[(i, j)] * xj;
                }
                *o = acc;
            }
        });
        state = perturbed_oracle_step(&state, pi, eta, &xi)?;
    }
    Ok(cloud)
}

/// Random well-conditioned Gaussian state for randomized checks:
/// covariance eigenvalues in `[0.5, 3]` under a random rotation, mean
/// coordinates in `[-2, 2]`.
pub fn random_regular_state(
    dim: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<GaussianState, OracleError> {
    let raw = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
    let q = raw.qr().q();
    let eigs = DVector::<f64>::from_fn(dim, |_, _| 0.5 + 2.5 * rng.random::<f64>());
    let cov = &q * DMatrix::from_diagonal(&eigs) * q.transpose();
    let mean = DVector::<f64>::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
    GaussianState::new(mean, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, OracleError> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lam_max = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
    let lam_min = eig.eigenvalues.min();
    if lam_min < -1e-10 * lam_max {
        return Err(OracleError::MatrixSqrtFailed {
            eigenvalue: lam_min,
            condition: lam_max / lam_min.abs().max(f64::MIN_POSITIVE),
        });
    }
    let sqrt_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * sqrt_diag * eig.eigenvectors.transpose())
}
