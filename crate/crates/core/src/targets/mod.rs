//! Target distributions `pi(x) ∝ exp(-V(x))`.
//!
//! A [`Target`] bundles an unnormalized log-density, its analytic score
//! `∇log pi = -∇V`, optional regularity metadata (strong-convexity and
//! smoothness moduli of `V`, linear score-growth constants), and an
//! optional exact reference sampler used by the diagnostics.
//!
//! Targets are immutable after construction; evaluation is pure and safe
//! to call concurrently.

mod banana;
mod eggbox;
mod gaussian;
mod logistic;

pub use banana::{banana_bend, banana_target};
pub use eggbox::{eggbox_default_covariances, eggbox_target};
pub use gaussian::gaussian_target;
pub use logistic::{
    load_regression_csv, logistic_regression_target, synth_regression_data,
    LogisticRegressionData,
};

use crate::cloud::ParticleCloud;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("dimension must be at least {min}, got {got}")]
    DimTooSmall { min: usize, got: usize },
    #[error("covariance matrix is not symmetric positive definite")]
    NotSpd,
    #[error("curvature parameter b must be positive, got {0}")]
    NonPositiveCurvature(f64),
    #[error("mixture requires exactly 4 components, got {0}")]
    BadComponentCount(usize),
    #[error("component {index} has wrong shape for dimension {dim}")]
    ComponentShape { index: usize, dim: usize },
    #[error("regularity moduli must satisfy 0 <= alpha <= beta, got alpha={alpha}, beta={beta}")]
    BadRegularity { alpha: f64, beta: f64 },
    #[error("design matrix contains a non-finite entry at row {row}")]
    NonFiniteRow { row: usize },
    #[error("label at row {row} is {value}, expected 0 or 1")]
    NonBinaryLabel { row: usize, value: f64 },
    #[error("dataset must contain at least one observation")]
    EmptyData,
    #[error("prior variance must be positive, got {0}")]
    NonPositivePriorVariance(f64),
}

/// Convexity and smoothness metadata for the potential `V = -log pi`.
///
/// `alpha`/`beta` sandwich the Hessian of `V`; `c1`/`c2` bound the score
/// growth as `||∇V(x)|| <= c1 ||x|| + c2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityParams {
    pub alpha: f64,
    pub beta: f64,
    pub c1: f64,
    pub c2: f64,
}

impl RegularityParams {
    pub fn new(alpha: f64, beta: f64, c1: f64, c2: f64) -> Result<Self, TargetError> {
        if !(0.0..=beta).contains(&alpha) || c1 < 0.0 || c2 < 0.0 {
            return Err(TargetError::BadRegularity { alpha, beta });
        }
        Ok(RegularityParams { alpha, beta, c1, c2 })
    }
}

type DensityFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type ScoreFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type SamplerFn = Box<dyn Fn(&mut ChaCha8Rng, &mut [f64]) + Send + Sync>;

/// A target density known up to its normalizing constant.
pub struct Target {
    dim: usize,
    log_density: DensityFn,
    score: ScoreFn,
    regularity: Option<RegularityParams>,
    sampler: Option<SamplerFn>,
}

impl Target {
    pub(crate) fn new(
        dim: usize,
        log_density: DensityFn,
        score: ScoreFn,
        regularity: Option<RegularityParams>,
        sampler: Option<SamplerFn>,
    ) -> Result<Self, TargetError> {
        if dim == 0 {
            return Err(TargetError::DimTooSmall { min: 1, got: 0 });
        }
        Ok(Target {
            dim,
            log_density,
            score,
            regularity,
            sampler,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `log pi(x)` up to an additive constant.
    pub fn log_density_unnorm(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        (self.log_density)(x)
    }

    /// Writes `∇log pi(x)` into `out`.
    pub fn score_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        (self.score)(x, out);
    }

    /// `∇log pi(x)` as a fresh vector.
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.score_into(x, &mut out);
        out
    }

    pub fn regularity(&self) -> Option<RegularityParams> {
        self.regularity
    }

    pub fn has_reference_sampler(&self) -> bool {
        self.sampler.is_some()
    }

    /// Draws `n` exact samples from the target, when a reference sampler
    /// exists. Intended for diagnostics only.
    pub fn sample_reference(&self, n: usize, rng: &mut ChaCha8Rng) -> Option<ParticleCloud> {
        let sampler = self.sampler.as_ref()?;
        let mut cloud = ParticleCloud::zeros(n, self.dim);
        for i in 0..n {
            sampler(rng, cloud.row_mut(i));
        }
        Some(cloud)
    }
}

impl std::fmt::Debug for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Target")
            .field("dim", &self.dim)
            .field("regularity", &self.regularity)
            .field("has_sampler", &self.sampler.is_some())
            .finish()
    }
}
