//! The particle WGD loop.
//!
//! Each iteration refreshes a score estimate of the current cloud, forms
//! the (optionally annealed) target score, records the squared-residual
//! diagnostic `Err_t`, and moves every particle by
//! `x <- x - eta_t (s_t(x) - ∇log pi_t(x))`.

use crate::clock::Stopwatch;
use crate::cloud::{CloudError, ParticleCloud};
use crate::oracle::{self, GaussianState};
use crate::rng;
use crate::score_matching::{
    fit_score, sm_loss, EvalScratch, ScoreError, ScoreInit, ScoreModel, TrainConfig,
};
use crate::targets::Target;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("step schedule requires eps0 > 0 and 1/2 < alpha <= 1, got eps0={eps0}, alpha={alpha}")]
    BadSchedule { eps0: f64, alpha: f64 },
    #[error("anneal horizon must be at least 1")]
    BadAnnealHorizon,
    #[error("patience must be at least 1")]
    BadPatience,
    #[error("dimension mismatch: cloud {cloud} vs target {target}")]
    DimMismatch { cloud: usize, target: usize },
    #[error("annealing level must lie in [0, 1], got {0}")]
    BadAnnealLevel(f64),
    #[error("non-finite update for particle {particle} at value {value}")]
    NonFiniteUpdate { particle: usize, value: f64 },
    #[error("divergence at iteration {iteration}: coordinate magnitude {magnitude:.3e} exceeds 1e6")]
    Diverged { iteration: usize, magnitude: f64 },
    #[error("score training failed at iteration {iteration}: {source}")]
    ScoreTraining {
        iteration: usize,
        source: ScoreError,
    },
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

/// Decaying step size `eta_t = eps0 / (1 + t)^alpha` with
/// `1/2 < alpha <= 1`, which makes the step sums diverge while the
/// squared sums stay finite.
#[derive(Debug, Clone, Copy)]
pub struct StepSchedule {
    eps0: f64,
    alpha_exp: f64,
}

impl StepSchedule {
    pub fn new(eps0: f64, alpha_exp: f64) -> Result<Self, EngineError> {
        if eps0 <= 0.0 || !(alpha_exp > 0.5 && alpha_exp <= 1.0) {
            return Err(EngineError::BadSchedule {
                eps0,
                alpha: alpha_exp,
            });
        }
        Ok(StepSchedule { eps0, alpha_exp })
    }

    pub fn step_size(&self, t: usize) -> f64 {
        self.eps0 / (1.0 + t as f64).powf(self.alpha_exp)
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    pub fn alpha_exp(&self) -> f64 {
        self.alpha_exp
    }
}

/// Temperature ladder `a_t = min(1, t/T)`.
#[derive(Debug, Clone, Copy)]
pub struct AnnealSchedule {
    horizon: usize,
}

impl AnnealSchedule {
    pub fn new(horizon: usize) -> Result<Self, EngineError> {
        if horizon == 0 {
            return Err(EngineError::BadAnnealHorizon);
        }
        Ok(AnnealSchedule { horizon })
    }

    pub fn level(&self, t: usize) -> f64 {
        (t as f64 / self.horizon as f64).min(1.0)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Stop when `Err_t` makes no new minimum for `patience` consecutive
/// iterations, or at `max_iters`.
#[derive(Debug, Clone, Copy)]
pub struct StopRule {
    pub patience: usize,
    pub max_iters: usize,
}

impl StopRule {
    pub fn new(patience: usize, max_iters: usize) -> Result<Self, EngineError> {
        if patience == 0 {
            return Err(EngineError::BadPatience);
        }
        Ok(StopRule {
            patience,
            max_iters,
        })
    }
}

/// Plateau tracker behind the stop rule. An observation improves only if
/// it beats the running minimum by a relative margin of 1e-6.
#[derive(Debug, Clone)]
pub struct PlateauTracker {
    patience: usize,
    best: f64,
    stale: usize,
}

impl PlateauTracker {
    pub fn new(patience: usize) -> Self {
        PlateauTracker {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Feeds one value; returns true when the run should stop.
    pub fn observe(&mut self, err: f64) -> bool {
        if err < self.best * (1.0 - 1e-6) {
            self.best = err;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ErrPlateau,
    MaxIters,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::ErrPlateau => write!(f, "err-plateau"),
            StopReason::MaxIters => write!(f, "max-iters"),
        }
    }
}

/// One per-iteration record.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub t: usize,
    pub eta: f64,
    pub anneal: f64,
    pub err: f64,
    pub sm_loss: Option<f64>,
    pub oracle_kl: Option<f64>,
    pub oracle_w2: Option<f64>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub stop_reason: StopReason,
}

/// How the engine obtains the cloud score `s_t`.
pub enum ScoreSource {
    /// Tanh-flow score matching, refreshed with warm starts. The model is
    /// fitted on a standardized copy of the cloud (per-coordinate mean
    /// and spread removed) and conjugated back, so the flow always sees
    /// O(1) inputs even for very tight or very wide targets.
    Fitted(FitSettings),
    /// Exact Gaussian score of the cloud's empirical moments. This is
    /// the exact-score mode for Gaussian flows.
    GaussianMoments,
}

#[derive(Debug, Clone)]
pub struct FitSettings {
    pub blocks: usize,
    pub train: TrainConfig,
    /// Retrain every `refresh_every` iterations (1 = every iteration).
    pub refresh_every: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            blocks: 2,
            train: TrainConfig::default(),
            refresh_every: 1,
        }
    }
}

/// Annealing bridges from a Gaussian `mu0` (whose score is analytic) to
/// the target.
pub struct Annealing {
    pub schedule: AnnealSchedule,
    pub mu0: GaussianState,
}

pub struct RunConfig {
    pub schedule: StepSchedule,
    pub stop: StopRule,
    pub annealing: Option<Annealing>,
    pub score: ScoreSource,
    pub seed: u64,
    /// When set, each trace row records closed-form KL and W2 between a
    /// Gaussian fit of the cloud and this reference.
    pub reference: Option<GaussianState>,
}

/// Squared-norm diagnostic
/// `Err = (1/N) sum_i ||s(x_i) - ∇log pi(x_i)||^2`.
pub fn err_norm<S, T>(cloud: &ParticleCloud, mut score: S, mut target_score: T) -> f64
where
    S: FnMut(&[f64], &mut [f64]),
    T: FnMut(&[f64], &mut [f64]),
{
    let d = cloud.dim();
    let mut s = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut acc = 0.0;
    for x in cloud.rows() {
        score(x, &mut s);
        target_score(x, &mut g);
        for (si, gi) in s.iter().zip(&g) {
            let r = si - gi;
            acc += r * r;
        }
    }
    acc / cloud.len() as f64
}

/// Interpolated score of the bridge `pi_a ∝ mu0^{1-a} pi^a`:
/// `(1-a) ∇log mu0 + a ∇log pi`.
pub fn annealed_score(
    target: &Target,
    mu0: &GaussianState,
    a: f64,
    x: &[f64],
    out: &mut [f64],
) -> Result<(), EngineError> {
    if !(0.0..=1.0).contains(&a) {
        return Err(EngineError::BadAnnealLevel(a));
    }
    let d = x.len();
    let mut g0 = vec![0.0; d];
    mu0.score_into(x, &mut g0);
    target.score_into(x, out);
    for (o, g) in out.iter_mut().zip(&g0) {
        *o = a * *o + (1.0 - a) * g;
    }
    Ok(())
}

/// One WGD step: `x <- x - eta (s(x) - ∇log pi(x))` for every particle.
/// The input cloud is untouched.
pub fn wgd_step<S, T>(
    cloud: &ParticleCloud,
    mut score: S,
    mut target_score: T,
    eta: f64,
) -> Result<ParticleCloud, EngineError>
where
    S: FnMut(&[f64], &mut [f64]),
    T: FnMut(&[f64], &mut [f64]),
{
    let d = cloud.dim();
    let mut out = ParticleCloud::zeros(cloud.len(), d);
    let mut s = vec![0.0; d];
    let mut g = vec![0.0; d];
    for i in 0..cloud.len() {
        let x = cloud.row(i);
        score(x, &mut s);
        target_score(x, &mut g);
        let dst = out.row_mut(i);
        for j in 0..d {
            let moved = x[j] - eta * (s[j] - g[j]);
            if !moved.is_finite() {
                return Err(EngineError::NonFiniteUpdate {
                    particle: i,
                    value: moved,
                });
            }
            dst[j] = moved;
        }
    }
    Ok(out)
}

/// Score estimate for one iteration: either a fitted flow conjugated
/// through the standardization, or the Gaussian-moment score.
enum IterationScore {
    Fitted {
        model: ScoreModel,
        shift: Vec<f64>,
        scale: Vec<f64>,
    },
    Moments(GaussianState),
}

impl IterationScore {
    fn eval(&self, scratch: &mut Option<EvalScratch>, x: &[f64], out: &mut [f64]) {
        match self {
            IterationScore::Fitted {
                model,
                shift,
                scale,
            } => {
                let d = x.len();
                let mut z = vec![0.0; d];
                for j in 0..d {
                    z[j] = (x[j] - shift[j]) / scale[j];
                }
                let scratch = scratch.get_or_insert_with(|| model.scratch());
                model.eval_scratch(scratch, &z, out);
                for j in 0..d {
                    out[j] /= scale[j];
                }
            }
            IterationScore::Moments(state) => state.score_into(x, out),
        }
    }
}

/// Standardizes a cloud; returns the whitened copy with the per-coordinate
/// shift and scale (scale floored at 1e-8).
fn standardize(cloud: &ParticleCloud) -> (ParticleCloud, Vec<f64>, Vec<f64>) {
    let shift = cloud.mean();
    let scale: Vec<f64> = cloud.std().iter().map(|s| s.max(1e-8)).collect();
    let out = cloud.map_rows(|_, x, dst| {
        for j in 0..x.len() {
            dst[j] = (x[j] - shift[j]) / scale[j];
        }
    });
    (out, shift, scale)
}

/// Mutable state of an in-flight WGD run, advanced by [`wgd_iterate`].
pub struct WgdState {
    cloud: ParticleCloud,
    warm: Option<ScoreModel>,
    current: Option<IterationScore>,
    t: usize,
    tracker: PlateauTracker,
    stopped: Option<StopReason>,
    seed_rng: rand_chacha::ChaCha8Rng,
    watch: Stopwatch,
}

impl WgdState {
    pub fn new(init: ParticleCloud, cfg: &RunConfig) -> Self {
        WgdState {
            cloud: init,
            warm: None,
            current: None,
            t: 0,
            tracker: PlateauTracker::new(cfg.stop.patience),
            stopped: None,
            seed_rng: rng::seeded_stream(cfg.seed, 0xE6),
            watch: Stopwatch::start(),
        }
    }

    pub fn cloud(&self) -> &ParticleCloud {
        &self.cloud
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stopped
    }
}

/// One full WGD iteration: refresh the score estimate on the current
/// cloud (warm start), measure `Err_t` against the final target on the
/// pre-update cloud, then move every particle along the annealed or
/// plain Wasserstein gradient. Returns the trace row, or `None` once
/// the run has stopped (patience rule, armed only after the bridge has
/// reached the target, or the iteration cap).
pub fn wgd_iterate(
    target: &Target,
    cfg: &RunConfig,
    state: &mut WgdState,
) -> Result<Option<TraceRow>, EngineError> {
    if state.stopped.is_some() {
        return Ok(None);
    }
    if state.t >= cfg.stop.max_iters {
        state.stopped = Some(StopReason::MaxIters);
        return Ok(None);
    }
    let t = state.t;
    let eta = cfg.schedule.step_size(t);
    let a = cfg
        .annealing
        .as_ref()
        .map(|ann| ann.schedule.level(t))
        .unwrap_or(1.0);

    // (1) refresh the score estimate
    let mut iter_sm_loss = None;
    let refresh = match &cfg.score {
        ScoreSource::Fitted(fit) => t.is_multiple_of(fit.refresh_every.max(1)),
        ScoreSource::GaussianMoments => true,
    };
    if refresh || state.current.is_none() {
        state.current = Some(match &cfg.score {
            ScoreSource::Fitted(fit) => {
                let (white, shift, scale) = standardize(&state.cloud);
                let mut train = fit.train.clone();
                train.seed = state.seed_rng.random();
                let init_model = match state.warm.take() {
                    Some(model) => ScoreInit::Warm(model),
                    None => ScoreInit::Fresh { blocks: fit.blocks },
                };
                let model = fit_score(&white, init_model, &train)
                    .map_err(|source| EngineError::ScoreTraining { iteration: t, source })?;
                iter_sm_loss = sm_loss(&model, &white).ok();
                state.warm = Some(model.clone());
                IterationScore::Fitted {
                    model,
                    shift,
                    scale,
                }
            }
            ScoreSource::GaussianMoments => {
                let fitted = GaussianState::fit(&state.cloud).map_err(|_| {
                    EngineError::Diverged {
                        iteration: t,
                        magnitude: state.cloud.max_abs(),
                    }
                })?;
                IterationScore::Moments(fitted)
            }
        });
    } else if let Some(IterationScore::Fitted { model, .. }) = &state.current {
        iter_sm_loss = {
            let (white, _, _) = standardize(&state.cloud);
            sm_loss(model, &white).ok()
        };
    }
    let score = state.current.as_ref().unwrap();
    let mut scratch = None;

    // (2) Err_t against the final target, on the pre-update cloud
    let err = err_norm(
        &state.cloud,
        |x, out| score.eval(&mut scratch, x, out),
        |x, out| target.score_into(x, out),
    );

    // (3) optional closed-form bookkeeping against a Gaussian reference
    let (oracle_kl, oracle_w2) = match (&cfg.reference, GaussianState::fit(&state.cloud)) {
        (Some(reference), Ok(fit_state)) => (
            Some(oracle::kl_gaussian(&fit_state, reference)),
            oracle::w2_gaussian(&fit_state, reference).ok(),
        ),
        _ => (None, None),
    };

    let row = TraceRow {
        t,
        eta,
        anneal: a,
        err,
        sm_loss: iter_sm_loss,
        oracle_kl,
        oracle_w2,
        elapsed_ms: state.watch.elapsed_ms(),
    };

    // (4) patience rule, armed only once the bridge reaches the target
    if a >= 1.0 && state.tracker.observe(err) {
        state.stopped = Some(StopReason::ErrPlateau);
        return Ok(Some(row));
    }

    // (5) move the particles
    let stepped = wgd_step(
        &state.cloud,
        |x, out| score.eval(&mut scratch, x, out),
        |x, out| {
            if let Some(ann) = &cfg.annealing {
                annealed_score(target, &ann.mu0, a, x, out).expect("level in [0,1]");
            } else {
                target.score_into(x, out);
            }
        },
        eta,
    )?;
    let magnitude = stepped.max_abs();
    if magnitude > 1e6 {
        return Err(EngineError::Diverged {
            iteration: t,
            magnitude,
        });
    }
    state.cloud = stepped;
    state.t += 1;
    Ok(Some(row))
}

/// Runs WGD from `init` toward `target`.
///
/// Drives [`wgd_iterate`] to completion; fully deterministic given the
/// seed in `cfg`.
pub fn run_wgd(
    init: ParticleCloud,
    target: &Target,
    cfg: &RunConfig,
) -> Result<(ParticleCloud, RunTrace), EngineError> {
    if init.dim() != target.dim() {
        return Err(EngineError::DimMismatch {
            cloud: init.dim(),
            target: target.dim(),
        });
    }
    let mut state = WgdState::new(init, cfg);
    let mut rows = Vec::new();
    while let Some(row) = wgd_iterate(target, cfg, &mut state)? {
        rows.push(row);
    }
    Ok((
        state.cloud,
        RunTrace {
            rows,
            stop_reason: state.stopped.unwrap_or(StopReason::MaxIters),
        },
    ))
}
