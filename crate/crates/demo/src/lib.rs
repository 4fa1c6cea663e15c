//! Browser demo bindings: an interactive particle sampler, target
//! density grids for the canvas background, and closed-form convergence
//! curves. The logic lives in plain Rust ([`core_demo`]) so it is
//! testable on the host; the `wasm_bindgen` layer only marshals data.

pub mod core_demo;

use core_demo::{DemoSettings, SamplerCore};
use wasm_bindgen::prelude::*;

/// Interactive two-dimensional WGD sampler.
#[wasm_bindgen]
pub struct DemoSampler {
    core: SamplerCore,
}

#[wasm_bindgen]
impl DemoSampler {
    /// `target` is one of `"banana"`, `"eggbox"`, `"gaussian"`;
    /// `score_mode` is `"fitted"` or `"moments"`.
    #[wasm_bindgen(constructor)]
    pub fn new(
        target: &str,
        particles: usize,
        seed: u64,
        score_mode: &str,
        anneal_horizon: usize,
        eps0: f64,
    ) -> Result<DemoSampler, JsError> {
        let settings = DemoSettings {
            target: target.to_string(),
            particles,
            seed,
            fitted: score_mode != "moments",
            anneal_horizon,
            eps0,
        };
        SamplerCore::new(&settings)
            .map(|core| DemoSampler { core })
            .map_err(|e| JsError::new(&e))
    }

    /// Advances `k` WGD iterations; returns the latest residual `Err_t`.
    pub fn step(&mut self, k: usize) -> Result<f64, JsError> {
        self.core.step(k).map_err(|e| JsError::new(&e))
    }

    /// Interleaved `(x, y)` particle positions.
    pub fn positions(&self) -> Vec<f64> {
        self.core.positions()
    }

    pub fn iteration(&self) -> usize {
        self.core.iteration()
    }

    pub fn anneal_level(&self) -> f64 {
        self.core.anneal_level()
    }

    pub fn err(&self) -> f64 {
        self.core.last_err()
    }

    /// `Err_t` history, one value per completed iteration.
    pub fn err_history(&self) -> Vec<f64> {
        self.core.err_history()
    }

    pub fn finished(&self) -> bool {
        self.core.finished()
    }
}

/// Unnormalized log-density of a named target on an `nx` by `ny` grid
/// over `[x_lo, x_hi] x [y_lo, y_hi]`, row-major with `y` varying
/// fastest. Drives the contour backdrop.
#[wasm_bindgen]
pub fn density_grid(
    target: &str,
    nx: usize,
    ny: usize,
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
) -> Result<Vec<f64>, JsError> {
    core_demo::density_grid(target, nx, ny, x_lo, x_hi, y_lo, y_hi).map_err(|e| JsError::new(&e))
}

/// Closed-form KL and W2 trajectories of the exact Gaussian recursion:
/// returns `[kl_0..kl_T, w2_0..w2_T]` for the flow from
/// `N((m0x, m0y), var0 I)` to the standard normal.
#[wasm_bindgen]
pub fn oracle_curves(
    m0x: f64,
    m0y: f64,
    var0: f64,
    eps0: f64,
    alpha: f64,
    steps: usize,
) -> Result<Vec<f64>, JsError> {
    core_demo::oracle_curves(m0x, m0y, var0, eps0, alpha, steps).map_err(|e| JsError::new(&e))
}
