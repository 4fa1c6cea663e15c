//! Particle-based sampling via Wasserstein gradient descent (WGD) on the
//! KL functional.
//!
//! The library moves a cloud of particles toward a target density
//! `pi(x) ∝ exp(-V(x))` by following the negative Wasserstein gradient of
//! `KL(mu || pi)`, which for a current measure `mu` is the vector field
//! `∇log mu - ∇log pi`. The score `∇log mu` of the particle cloud is
//! estimated by score matching with a tanh-flow map; the target score
//! `∇log pi` is analytic.
//!
//! Modules:
//! - [`targets`]: target densities (Gaussian, banana, four-component
//!   mixture, Bayesian logistic regression) with analytic scores.
//! - [`score_matching`]: tanh-flow score model, Hyvarinen objective,
//!   analytic parameter gradients, SGD fitting.
//! - [`engine`]: the particle WGD loop with step schedules, annealing,
//!   the `Err_t` diagnostic and its patience stopping rule.
//! - [`oracle`]: closed-form Gaussian flow (exact moment recursion, KL,
//!   Bures W2) turning the convergence guarantees into numeric checks.
//! - [`baselines`]: adaptive random-walk Metropolis and Gaussian
//!   variational Bayes for comparison.
//! - [`diagnostics`]: sliced W2, moment tests, mode-mass accounting,
//!   score-error statistics, KDE marginals.
//! - [`io`]: CSV emitters for particle dumps, traces and reports.
//!
//! All randomness flows through caller-provided seeds into a
//! counter-based ChaCha generator, so every run is reproducible.

pub mod baselines;
pub mod cloud;
mod clock;
pub mod diagnostics;
pub mod engine;
pub mod fdiff;
pub mod io;
pub mod oracle;
pub mod rng;
pub mod score_matching;
pub mod targets;

pub use cloud::ParticleCloud;
pub use engine::{AnnealSchedule, RunTrace, StepSchedule, StopRule};
pub use oracle::GaussianState;
pub use score_matching::{ScoreModel, TrainConfig};
pub use targets::Target;
