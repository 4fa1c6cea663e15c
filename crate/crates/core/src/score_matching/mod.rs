//! Score estimation for particle clouds.
//!
//! The score `∇log mu` of the current cloud is fit with a composition of
//! tanh-flow blocks `y = x + V tanh(W'x + b)` by minimizing the sample
//! objective `mean[ tr(∇s(x)) + 0.5 ||s(x)||^2 ]`, which needs only
//! draws from the cloud. Both the Jacobian trace and the parameter
//! gradients are computed analytically; the test suites check them
//! against central finite differences.

mod model;
mod train;

pub use model::{EvalScratch, ScoreError, ScoreModel, TanhBlock};
pub use train::{
    fit_score, sm_grad, sm_loss, sm_loss_and_grad, ScoreInit, ScoreModelGrad, TrainConfig,
};
