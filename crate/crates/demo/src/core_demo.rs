//! Host-testable demo logic: target construction, incremental WGD
//! stepping, density grids and oracle curves.

use nalgebra::{DMatrix, DVector};
use wgdflow::engine::{
    wgd_iterate, AnnealSchedule, Annealing, FitSettings, RunConfig, ScoreSource, StepSchedule,
    StopRule, WgdState,
};
use wgdflow::oracle::{kl_gaussian, oracle_step, w2_gaussian, GaussianState};
use wgdflow::rng;
use wgdflow::score_matching::TrainConfig;
use wgdflow::targets::{banana_target, eggbox_default_covariances, eggbox_target, gaussian_target, Target};

pub struct DemoSettings {
    pub target: String,
    pub particles: usize,
    pub seed: u64,
    pub fitted: bool,
    pub anneal_horizon: usize,
    pub eps0: f64,
}

fn build_target(name: &str) -> Result<(Target, GaussianState), String> {
    match name {
        "banana" => {
            let target = banana_target(2, 0.01).map_err(|e| e.to_string())?;
            let mu0 = GaussianState::new(
                DVector::zeros(2),
                DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 1.0])),
            )
            .map_err(|e| e.to_string())?;
            Ok((target, mu0))
        }
        "eggbox" => {
            let means = vec![
                DVector::from_vec(vec![5.0, 5.0]),
                DVector::from_vec(vec![5.0, -5.0]),
                DVector::from_vec(vec![-5.0, 5.0]),
                DVector::from_vec(vec![-5.0, -5.0]),
            ];
            let target =
                eggbox_target(means, eggbox_default_covariances(2)).map_err(|e| e.to_string())?;
            let mu0 = GaussianState::isotropic(DVector::zeros(2), 9.0).map_err(|e| e.to_string())?;
            Ok((target, mu0))
        }
        "gaussian" => {
            let target = gaussian_target(
                DVector::from_vec(vec![1.0, -1.0]),
                DMatrix::from_row_slice(2, 2, &[2.0, 0.8, 0.8, 1.0]),
            )
            .map_err(|e| e.to_string())?;
            let mu0 = GaussianState::new(
                DVector::from_vec(vec![-3.0, 3.0]),
                DMatrix::identity(2, 2),
            )
            .map_err(|e| e.to_string())?;
            Ok((target, mu0))
        }
        other => Err(format!(
            "unknown target '{other}' (expected banana, eggbox or gaussian)"
        )),
    }
}

pub struct SamplerCore {
    target: Target,
    cfg: RunConfig,
    state: WgdState,
    errs: Vec<f64>,
    anneal_horizon: usize,
}

impl SamplerCore {
    pub fn new(settings: &DemoSettings) -> Result<Self, String> {
        let (target, mu0) = build_target(&settings.target)?;
        let particles = settings.particles.clamp(16, 20_000);
        let horizon = settings.anneal_horizon.max(1);
        let score = if settings.fitted {
            ScoreSource::Fitted(FitSettings {
                blocks: 2,
                train: TrainConfig {
                    steps: 80,
                    batch_size: 128.min(particles),
                    learning_rate: 1e-3,
                    seed: 0,
                    grad_clip: Some(10.0),
                },
                refresh_every: 1,
            })
        } else {
            ScoreSource::GaussianMoments
        };
        let cfg = RunConfig {
            schedule: StepSchedule::new(settings.eps0, 0.6).map_err(|e| e.to_string())?,
            stop: StopRule::new(50, usize::MAX / 2).map_err(|e| e.to_string())?,
            annealing: Some(Annealing {
                schedule: AnnealSchedule::new(horizon).map_err(|e| e.to_string())?,
                mu0: mu0.clone(),
            }),
            score,
            seed: settings.seed,
            reference: None,
        };
        let mut draw_rng = rng::seeded_stream(settings.seed, 0x1D);
        let init = mu0.sample(particles, &mut draw_rng);
        Ok(SamplerCore {
            state: WgdState::new(init, &cfg),
            target,
            cfg,
            errs: Vec::new(),
            anneal_horizon: horizon,
        })
    }

    pub fn step(&mut self, k: usize) -> Result<f64, String> {
        for _ in 0..k.max(1) {
            match wgd_iterate(&self.target, &self.cfg, &mut self.state) {
                Ok(Some(row)) => self.errs.push(row.err),
                Ok(None) => break,
                Err(e) => return Err(e.to_string()),
            }
        }
        Ok(self.last_err())
    }

    pub fn positions(&self) -> Vec<f64> {
        self.state.cloud().as_slice().to_vec()
    }

    pub fn iteration(&self) -> usize {
        self.state.iteration()
    }

    pub fn anneal_level(&self) -> f64 {
        (self.state.iteration() as f64 / self.anneal_horizon as f64).min(1.0)
    }

    pub fn last_err(&self) -> f64 {
        self.errs.last().copied().unwrap_or(f64::NAN)
    }

    pub fn err_history(&self) -> Vec<f64> {
        self.errs.clone()
    }

    pub fn finished(&self) -> bool {
        self.state.stop_reason().is_some()
    }
}

pub fn density_grid(
    target: &str,
    nx: usize,
    ny: usize,
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
) -> Result<Vec<f64>, String> {
    let (target, _) = build_target(target)?;
    let mut out = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        let x = x_lo + (x_hi - x_lo) * i as f64 / (nx.max(2) - 1) as f64;
        for j in 0..ny {
            let y = y_lo + (y_hi - y_lo) * j as f64 / (ny.max(2) - 1) as f64;
            out.push(target.log_density_unnorm(&[x, y]));
        }
    }
    Ok(out)
}

pub fn oracle_curves(
    m0x: f64,
    m0y: f64,
    var0: f64,
    eps0: f64,
    alpha: f64,
    steps: usize,
) -> Result<Vec<f64>, String> {
    let mu0 = GaussianState::isotropic(DVector::from_vec(vec![m0x, m0y]), var0)
        .map_err(|e| e.to_string())?;
    let pi = GaussianState::isotropic(DVector::zeros(2), 1.0).map_err(|e| e.to_string())?;
    let schedule = StepSchedule::new(eps0, alpha).map_err(|e| e.to_string())?;
    let steps = steps.clamp(1, 100_000);
    let mut kl = Vec::with_capacity(steps + 1);
    let mut w2 = Vec::with_capacity(steps + 1);
    let mut state = mu0;
    kl.push(kl_gaussian(&state, &pi));
    w2.push(w2_gaussian(&state, &pi).map_err(|e| e.to_string())?);
    for t in 0..steps {
        state = oracle_step(&state, &pi, schedule.step_size(t)).map_err(|e| e.to_string())?;
        kl.push(kl_gaussian(&state, &pi));
        w2.push(w2_gaussian(&state, &pi).map_err(|e| e.to_string())?);
    }
    kl.extend_from_slice(&w2);
    Ok(kl)
}
