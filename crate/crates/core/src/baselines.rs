//! Reference samplers for comparison: adaptive random-walk Metropolis
//! and full-covariance Gaussian variational Bayes.

use crate::cloud::ParticleCloud;
use crate::rng;
use crate::targets::Target;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("log-density at the initial point is not finite")]
    BadInit,
    #[error("iteration count must be at least 1")]
    NoIterations,
    #[error("initial point dimension {init} does not match target {target}")]
    DimMismatch { init: usize, target: usize },
    #[error("proposal covariance lost positive definiteness")]
    ProposalNotSpd,
}

#[derive(Debug, Clone)]
pub struct McmcConfig {
    pub burn_in: usize,
    pub iters: usize,
    pub init: Vec<f64>,
    pub seed: u64,
    /// Iteration at which covariance adaptation begins.
    pub adapt_start: usize,
    pub target_accept: f64,
}

impl McmcConfig {
    pub fn standard(init: Vec<f64>, seed: u64) -> Self {
        McmcConfig {
            burn_in: 10_000,
            iters: 10_000,
            init,
            seed,
            adapt_start: 200,
            target_accept: 0.234,
        }
    }
}

#[derive(Debug, Clone)]
pub struct McmcStats {
    /// Acceptance fraction over the post-burn-in draws.
    pub acceptance_rate: f64,
    pub final_log_scale: f64,
}

/// Adaptive random-walk Metropolis: Gaussian proposals with covariance
/// `s^2 (C_hat + 1e-6 I)` where `C_hat` is the running empirical
/// covariance after `adapt_start`, `s^2` starting at `2.38^2/d` and
/// nudged toward the target acceptance via Robbins-Monro on `log s`.
/// Returns the `iters` post-burn-in states. Deterministic given the seed.
pub fn adaptive_rw_mcmc(
    target: &Target,
    config: &McmcConfig,
) -> Result<(ParticleCloud, McmcStats), BaselineError> {
    if config.iters == 0 {
        return Err(BaselineError::NoIterations);
    }
    let d = target.dim();
    if config.init.len() != d {
        return Err(BaselineError::DimMismatch {
            init: config.init.len(),
            target: d,
        });
    }
    let mut state = config.init.clone();
    let mut logp = target.log_density_unnorm(&state);
    if !logp.is_finite() {
        return Err(BaselineError::BadInit);
    }

    let mut rng = rng::seeded_stream(config.seed, 0x4D);
    let mut log_scale = (2.38f64 * 2.38 / d as f64).ln() * 0.5; // log s
    let mut run_mean = DVector::from_row_slice(&state);
    let mut run_cov = DMatrix::<f64>::zeros(d, d);
    let mut chol = DMatrix::<f64>::identity(d, d);
    let mut chol_fresh = true;

    let total = config.burn_in + config.iters;
    let mut draws = ParticleCloud::zeros(config.iters, d);
    let mut accepted_post = 0usize;
    let mut proposal = vec![0.0; d];
    let mut z = DVector::<f64>::zeros(d);

    for t in 0..total {
        // refresh the proposal factor from the adapted covariance
        if t >= config.adapt_start && t % 50 == 0 {
            let mut c = run_cov.clone();
            for i in 0..d {
                c[(i, i)] += 1e-6;
            }
            match nalgebra::Cholesky::new(c) {
                Some(ch) => {
                    chol = ch.l();
                    chol_fresh = false;
                }
                None => return Err(BaselineError::ProposalNotSpd),
            }
        }

        let s = log_scale.exp();
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        if chol_fresh {
            for (p, (x, zi)) in proposal.iter_mut().zip(state.iter().zip(z.iter())) {
                *p = x + s * zi;
            }
        } else {
            let step = &chol * &z;
            for (j, p) in proposal.iter_mut().enumerate() {
                *p = state[j] + s * step[j];
            }
        }

        let logp_new = target.log_density_unnorm(&proposal);
        let accept_prob = (logp_new - logp).exp().min(1.0);
        let u: f64 = rng.random();
        let accepted = u < accept_prob;
        if accepted {
            state.copy_from_slice(&proposal);
            logp = logp_new;
        }

        // Robbins-Monro on log s toward the target acceptance
        let gamma = (t as f64 + 1.0).powf(-0.6);
        log_scale += gamma * (accept_prob - config.target_accept);

        // running moments over the whole history
        let xv = DVector::from_row_slice(&state);
        let count = (t + 1) as f64;
        let delta = &xv - &run_mean;
        run_mean += &delta / count;
        let delta2 = &xv - &run_mean;
        // rank-one covariance update
        run_cov = (&run_cov * (count - 1.0) + &delta * delta2.transpose()) / count;

        if t >= config.burn_in {
            let idx = t - config.burn_in;
            draws.row_mut(idx).copy_from_slice(&state);
            if accepted {
                accepted_post += 1;
            }
        }
    }

    Ok((
        draws,
        McmcStats {
            acceptance_rate: accepted_post as f64 / config.iters as f64,
            final_log_scale: log_scale,
        },
    ))
}

/// Full-covariance Gaussian variational state `q = N(mean, L L')` with a
/// lower-triangular positive-diagonal factor.
#[derive(Debug, Clone)]
pub struct GvbState {
    pub mean: DVector<f64>,
    pub cov_factor: DMatrix<f64>,
}

impl GvbState {
    pub fn standard(d: usize) -> Self {
        GvbState {
            mean: DVector::zeros(d),
            cov_factor: DMatrix::identity(d, d),
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.cov_factor * self.cov_factor.transpose()
    }

    pub fn sample(&self, n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> ParticleCloud {
        let d = self.mean.len();
        let mut cloud = ParticleCloud::zeros(n, d);
        let mut z = DVector::<f64>::zeros(d);
        for i in 0..n {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let x = &self.mean + &self.cov_factor * &z;
            cloud.row_mut(i).copy_from_slice(x.as_slice());
        }
        cloud
    }
}

#[derive(Debug, Clone)]
pub struct GvbResult {
    pub state: GvbState,
    /// `(step, estimated ELBO)` every 10 steps.
    pub elbo_trace: Vec<(usize, f64)>,
    /// Number of steps at which the factor diagonal had to be clamped.
    pub diag_clamps: usize,
}

/// Reparameterized ELBO and its gradient for a fixed batch of standard
/// normal draws: `x = m + L z`, objective
/// `mean_z log pi~(m + Lz) + sum log L_ii + d/2 log(2 pi e)`.
pub fn elbo_and_grad(
    target: &Target,
    state: &GvbState,
    zs: &[DVector<f64>],
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let d = state.mean.len();
    let mut value = 0.0;
    let mut grad_mean = DVector::<f64>::zeros(d);
    let mut grad_factor = DMatrix::<f64>::zeros(d, d);
    let mut score = vec![0.0; d];
    for z in zs {
        let x = &state.mean + &state.cov_factor * z;
        let xs = x.as_slice();
        value += target.log_density_unnorm(xs);
        target.score_into(xs, &mut score);
        for i in 0..d {
            grad_mean[i] += score[i];
            for j in 0..=i {
                grad_factor[(i, j)] += score[i] * z[j];
            }
        }
    }
    let inv = 1.0 / zs.len() as f64;
    value *= inv;
    grad_mean *= inv;
    grad_factor *= inv;
    // entropy of q: d/2 log(2 pi e) + sum log L_ii
    let mut entropy = 0.5 * d as f64 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    for i in 0..d {
        entropy += state.cov_factor[(i, i)].ln();
        grad_factor[(i, i)] += 1.0 / state.cov_factor[(i, i)];
    }
    (value + entropy, grad_mean, grad_factor)
}

/// Maximizes the ELBO over `q = N(m, LL')` by reparameterized stochastic
/// gradient ascent. The factor diagonal is clamped at 1e-6 if it ever
/// underflows. `lr = 0` leaves the state unchanged.
pub fn gaussian_vb(
    target: &Target,
    steps: usize,
    mc_samples: usize,
    lr: f64,
    seed: u64,
) -> Result<GvbResult, BaselineError> {
    if steps == 0 {
        return Err(BaselineError::NoIterations);
    }
    let d = target.dim();
    let mut state = GvbState::standard(d);
    let mut rng = rng::seeded_stream(seed, 0x6B);
    let mut elbo_trace = Vec::new();
    let mut diag_clamps = 0usize;
    let mut zs: Vec<DVector<f64>> = (0..mc_samples.max(1)).map(|_| DVector::zeros(d)).collect();

    for step in 0..steps {
        for z in zs.iter_mut() {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
        }
        let (elbo, grad_mean, grad_factor) = elbo_and_grad(target, &state, &zs);
        if step % 10 == 0 {
            elbo_trace.push((step, elbo));
        }
        state.mean.axpy(lr, &grad_mean, 1.0);
        let mut clamped = false;
        for i in 0..d {
            for j in 0..=i {
                state.cov_factor[(i, j)] += lr * grad_factor[(i, j)];
            }
            if state.cov_factor[(i, i)] < 1e-6 {
                state.cov_factor[(i, i)] = 1e-6;
                clamped = true;
            }
        }
        if clamped {
            diag_clamps += 1;
        }
    }
    Ok(GvbResult {
        state,
        elbo_trace,
        diag_clamps,
    })
}
