//! The experiment kinds: particle runs, closed-form theory checks, and
//! cross-method comparisons.

use crate::config::Config;
use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;
use std::path::Path;
use wgdflow::baselines::{adaptive_rw_mcmc, gaussian_vb, McmcConfig};
use wgdflow::cloud::ParticleCloud;
use wgdflow::diagnostics::{kde_marginal, mode_masses, sliced_w2, SlicedW2Config};
use wgdflow::engine::{
    run_wgd, AnnealSchedule, Annealing, FitSettings, RunConfig, RunTrace, ScoreSource,
    StepSchedule, StopRule,
};
use wgdflow::oracle::{
    check_kl_convergence, check_one_step_descent, check_w2_contraction, kl_gaussian, oracle_step,
    random_regular_state, run_noisy, surrogate_lipschitz, w2_gaussian, GaussianState,
    PerturbationKind, PerturbationSpec,
};
use wgdflow::score_matching::TrainConfig;
use wgdflow::targets::{
    banana_bend, banana_target, eggbox_target, gaussian_target, load_regression_csv,
    logistic_regression_target, synth_regression_data, Target,
};
use wgdflow::{io, rng};

/// Config reader that records every resolved value for the manifest.
pub struct Resolver {
    cfg: Config,
    resolved: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(cfg: Config) -> Self {
        Resolver {
            cfg,
            resolved: BTreeMap::new(),
        }
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    pub fn str_or(&mut self, key: &str, default: &str) -> String {
        let v = self.cfg.str_or(key, default);
        self.note(key, &v);
        v
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        let v = self.cfg.f64_or(key, default)?;
        self.note(key, v);
        Ok(v)
    }

    pub fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        let v = self.cfg.usize_or(key, default)?;
        self.note(key, v);
        Ok(v)
    }

    pub fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        let v = self.cfg.u64_or(key, default)?;
        self.note(key, v);
        Ok(v)
    }

    pub fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        let v = self.cfg.bool_or(key, default)?;
        self.note(key, v);
        Ok(v)
    }

    pub fn f64_list_or(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        let v = self
            .cfg
            .f64_list(key)?
            .unwrap_or_else(|| default.to_vec());
        self.note(
            key,
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        );
        Ok(v)
    }

    pub fn optional_str(&mut self, key: &str) -> Option<String> {
        let v = self.cfg.get(key).map(|s| s.to_string());
        if let Some(ref s) = v {
            self.note(key, s);
        }
        v
    }

    fn manifest(&self, extra: &[(String, String)]) -> Vec<(String, String)> {
        let mut pairs: Vec<(String, String)> = vec![
            ("library_version".into(), env!("CARGO_PKG_VERSION").into()),
            (
                "timestamp_unix".into(),
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs().to_string())
                    .unwrap_or_default(),
            ),
        ];
        pairs.extend(self.resolved.iter().map(|(k, v)| (k.clone(), v.clone())));
        pairs.extend(extra.iter().cloned());
        pairs
    }
}

struct BuiltTarget {
    target: Target,
    /// Default location/scale of the initial Gaussian for this target.
    mu0_mean: Vec<f64>,
    mu0_var: Vec<f64>,
    kind: Kind,
    /// Mode centers (eggbox) for diagnostics.
    centers: Vec<Vec<f64>>,
    banana_b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    GaussianOracle,
    Banana,
    Eggbox,
    Logistic,
}

fn build_target(r: &mut Resolver, seed: u64) -> Result<BuiltTarget> {
    let kind_str = r.str_or("experiment.kind", "");
    let kind = match kind_str.as_str() {
        "gaussian-oracle" => Kind::GaussianOracle,
        "banana" => Kind::Banana,
        "eggbox" => Kind::Eggbox,
        "logistic-regression" => Kind::Logistic,
        other => bail!(
            "config key 'experiment.kind': unknown kind '{other}' (expected gaussian-oracle, banana, eggbox, logistic-regression or theory-check)"
        ),
    };
    match kind {
        Kind::GaussianOracle => {
            let pi_mean = r.f64_list_or("target.pi_mean", &[0.0, 0.0])?;
            let d = pi_mean.len();
            let pi_var = r.f64_list_or("target.pi_var", &vec![1.0; d])?;
            if pi_var.len() != d {
                bail!("config key 'target.pi_var': expected {d} entries");
            }
            let mu0_mean = r.f64_list_or("wgd.mu0_mean", &vec![3.0; d])?;
            let mu0_var = r.f64_list_or("wgd.mu0_var", &vec![2.0; d])?;
            let target = gaussian_target(
                DVector::from_vec(pi_mean),
                DMatrix::from_diagonal(&DVector::from_vec(pi_var)),
            )?;
            Ok(BuiltTarget {
                target,
                mu0_mean,
                mu0_var,
                kind,
                centers: Vec::new(),
                banana_b: 0.0,
            })
        }
        Kind::Banana => {
            let d = r.usize_or("target.dim", 2)?;
            let b = r.f64_or("target.b", 0.01)?;
            let target = banana_target(d, b)?;
            let mut var = vec![1.0; d];
            var[0] = 100.0;
            let mu0_mean = r.f64_list_or("wgd.mu0_mean", &vec![0.0; d])?;
            let mu0_var = r.f64_list_or("wgd.mu0_var", &var)?;
            Ok(BuiltTarget {
                target,
                mu0_mean,
                mu0_var,
                kind,
                centers: Vec::new(),
                banana_b: b,
            })
        }
        Kind::Eggbox => {
            let radius = r.f64_or("target.mode_radius", 5.0)?;
            let correlation = r.f64_or("target.correlation", 0.5)?;
            let means: Vec<DVector<f64>> = [
                [radius, radius],
                [radius, -radius],
                [-radius, radius],
                [-radius, -radius],
            ]
            .iter()
            .map(|m| DVector::from_row_slice(m))
            .collect();
            let covs: Vec<DMatrix<f64>> = (0..4)
                .map(|k| {
                    let rho = if k % 2 == 0 { correlation } else { -correlation };
                    DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])
                })
                .collect();
            let centers = means.iter().map(|m| m.as_slice().to_vec()).collect();
            let target = eggbox_target(means, covs)?;
            let mu0_mean = r.f64_list_or("wgd.mu0_mean", &[0.0, 0.0])?;
            let mu0_var = r.f64_list_or("wgd.mu0_var", &[9.0, 9.0])?;
            Ok(BuiltTarget {
                target,
                mu0_mean,
                mu0_var,
                kind,
                centers,
                banana_b: 0.0,
            })
        }
        Kind::Logistic => {
            let sigma0_sq = r.f64_or("target.sigma0_sq", 100.0)?;
            let data = match r.optional_str("target.data_csv") {
                Some(path) => {
                    let standardize = r.bool_or("target.standardize", true)?;
                    load_regression_csv(&path, standardize, sigma0_sq)
                        .with_context(|| format!("loading '{path}'"))?
                }
                None => {
                    let n = r.usize_or("target.n", 2000)?;
                    let d = r.usize_or("target.dim", 3)?;
                    let theta = r.f64_list_or("target.true_theta", &[1.0, -1.0, 0.5])?;
                    if theta.len() != d {
                        bail!("config key 'target.true_theta': expected {d} entries");
                    }
                    let data_seed = r.u64_or("target.data_seed", seed)?;
                    synth_regression_data(n, d, data_seed, &theta, sigma0_sq)?
                }
            };
            let d = data.dim();
            let target = logistic_regression_target(&data)?;
            // initial location: gradient-ascent approximation of the mode
            let beta = target
                .regularity()
                .map(|reg| reg.beta)
                .unwrap_or(1.0);
            let mut map = vec![0.0; d];
            for _ in 0..100 {
                let s = target.score(&map);
                for (m, si) in map.iter_mut().zip(&s) {
                    *m += si / beta;
                }
            }
            let mu0_mean = r.f64_list_or("wgd.mu0_mean", &map)?;
            let mu0_var = r.f64_list_or("wgd.mu0_var", &vec![1.0; d])?;
            Ok(BuiltTarget {
                target,
                mu0_mean,
                mu0_var,
                kind,
                centers: Vec::new(),
                banana_b: 0.0,
            })
        }
    }
}

struct WgdOutcome {
    cloud: ParticleCloud,
    trace: RunTrace,
}

fn run_wgd_for(r: &mut Resolver, built: &BuiltTarget, seed: u64) -> Result<WgdOutcome> {
    let d = built.target.dim();
    let (n_default, eps0_default, anneal_default, patience_default, max_default, steps_default) =
        match built.kind {
            Kind::GaussianOracle => (100_000, 0.01, 0usize, 0usize, 200usize, 200usize),
            Kind::Banana => (10_000, 0.05, 200, 20, 600, 200),
            Kind::Eggbox => (8_000, 0.1, 200, 30, 1200, 200),
            Kind::Logistic => (5_000, 0.05, 200, 30, 600, 400),
        };
    let particles = r.usize_or("wgd.particles", n_default)?;
    let eps0 = r.f64_or("wgd.eps0", eps0_default)?;
    let alpha = r.f64_or("wgd.alpha", 0.6)?;
    let anneal_t = r.usize_or("wgd.anneal", anneal_default)?;
    let max_iters = r.usize_or("wgd.max_iters", max_default)?;
    let patience = r.usize_or(
        "wgd.patience",
        if patience_default == 0 {
            max_iters.max(1)
        } else {
            patience_default
        },
    )?;
    let score_mode = r.str_or(
        "wgd.score",
        if built.kind == Kind::GaussianOracle {
            "gaussian-moments"
        } else {
            "fitted"
        },
    );

    let mu0_mean = DVector::from_vec(built.mu0_mean.clone());
    let mu0_var = DVector::from_vec(built.mu0_var.clone());
    if mu0_mean.len() != d || mu0_var.len() != d {
        bail!("config keys 'wgd.mu0_mean'/'wgd.mu0_var': expected {d} entries");
    }
    let mu0 = GaussianState::new(mu0_mean, DMatrix::from_diagonal(&mu0_var))?;

    let score = match score_mode.as_str() {
        "gaussian-moments" => ScoreSource::GaussianMoments,
        "fitted" => ScoreSource::Fitted(FitSettings {
            blocks: r.usize_or("score.blocks", 2)?,
            train: TrainConfig {
                steps: r.usize_or("score.steps", steps_default)?,
                batch_size: r.usize_or("score.batch", 256)?,
                learning_rate: r.f64_or("score.lr", 1e-3)?,
                seed: 0, // reseeded per iteration by the engine
                grad_clip: {
                    let clip = r.f64_or("score.grad_clip", 10.0)?;
                    (clip > 0.0).then_some(clip)
                },
            },
            refresh_every: r.usize_or("score.refresh_every", 1)?,
        }),
        other => bail!("config key 'wgd.score': unknown mode '{other}'"),
    };

    let reference = match built.kind {
        Kind::GaussianOracle => {
            // track closed-form KL/W2 against the Gaussian target
            let pi_mean = r.f64_list_or("target.pi_mean", &vec![0.0; d])?;
            let pi_var = r.f64_list_or("target.pi_var", &vec![1.0; d])?;
            Some(GaussianState::new(
                DVector::from_vec(pi_mean),
                DMatrix::from_diagonal(&DVector::from_vec(pi_var)),
            )?)
        }
        _ => None,
    };

    let mut draw_rng = rng::seeded_stream(seed, 0x1D);
    let init = mu0.sample(particles, &mut draw_rng);
    let cfg = RunConfig {
        schedule: StepSchedule::new(eps0, alpha)?,
        stop: StopRule::new(patience.max(1), max_iters)?,
        annealing: (anneal_t > 0).then(|| Annealing {
            schedule: AnnealSchedule::new(anneal_t).expect("anneal_t > 0"),
            mu0: mu0.clone(),
        }),
        score,
        seed,
        reference,
    };
    let (cloud, trace) = run_wgd(init, &built.target, &cfg)?;
    Ok(WgdOutcome { cloud, trace })
}

fn kind_diagnostics(
    built: &BuiltTarget,
    outcome: &WgdOutcome,
    out_dir: &Path,
) -> Result<Vec<(String, String)>> {
    let mut diag: Vec<(String, String)> = Vec::new();
    let last = outcome
        .trace
        .rows
        .last()
        .ok_or_else(|| anyhow!("empty trace"))?;
    diag.push(("iterations".into(), outcome.trace.rows.len().to_string()));
    diag.push(("stop_reason".into(), outcome.trace.stop_reason.to_string()));
    diag.push(("err_final".into(), format!("{}", last.err)));
    match built.kind {
        Kind::Banana => {
            let bent = outcome
                .cloud
                .map_rows(|_, x, o| o.copy_from_slice(&banana_bend(x, built.banana_b)));
            let mean = bent.mean();
            let cov = bent.covariance();
            diag.push(("bent_mean_x1".into(), format!("{}", mean[0])));
            diag.push(("bent_mean_x2".into(), format!("{}", mean[1])));
            diag.push(("bent_var_x1".into(), format!("{}", cov[(0, 0)])));
            diag.push(("bent_var_x2".into(), format!("{}", cov[(1, 1)])));
        }
        Kind::Eggbox => {
            let report = mode_masses(&outcome.cloud, &built.centers)?;
            for (i, (f, disp)) in report
                .fractions
                .iter()
                .zip(&report.displacements)
                .enumerate()
            {
                diag.push((format!("mode{i}_fraction"), format!("{f}")));
                diag.push((format!("mode{i}_displacement"), format!("{disp}")));
            }
            io::write_mode_report_csv(out_dir.join("modes.csv"), &report)?;
        }
        Kind::Logistic | Kind::GaussianOracle => {
            let mean = outcome.cloud.mean();
            let cov = outcome.cloud.covariance();
            for (i, m) in mean.iter().enumerate() {
                diag.push((format!("posterior_mean_{i}"), format!("{m}")));
                diag.push((format!("posterior_std_{i}"), format!("{}", cov[(i, i)].sqrt())));
            }
            if let (Some(kl), Some(w2)) = (last.oracle_kl, last.oracle_w2) {
                diag.push(("final_kl_vs_reference".into(), format!("{kl}")));
                diag.push(("final_w2_vs_reference".into(), format!("{w2}")));
            }
        }
    }
    Ok(diag)
}

/// `run <config>`: one experiment, artifacts under `out_dir`.
pub fn cmd_run(cfg: Config, out_dir: &Path, quiet: bool) -> Result<()> {
    let kind = cfg.str_or("experiment.kind", "");
    if kind == "theory-check" {
        return cmd_theory_check(cfg, out_dir, quiet).map(|_| ());
    }
    let mut r = Resolver::new(cfg);
    let seed = r.u64_or("experiment.seed", 42)?;
    let built = build_target(&mut r, seed)?;
    let outcome = run_wgd_for(&mut r, &built, seed)?;

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory '{}'", out_dir.display()))?;
    let with_timing = r.bool_or("experiment.timing", false)?;
    io::write_particles_csv(out_dir.join("particles.csv"), &outcome.cloud)?;
    io::write_trace_csv(out_dir.join("trace.csv"), &outcome.trace, with_timing)?;
    let diag = kind_diagnostics(&built, &outcome, out_dir)?;
    let diag_rows: String = std::iter::once("metric,value".to_string())
        .chain(diag.iter().map(|(k, v)| format!("{k},{v}")))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n";
    std::fs::write(out_dir.join("diagnostics.csv"), diag_rows)?;
    io::write_key_values(out_dir.join("manifest.txt"), &r.manifest(&diag))?;

    if !quiet {
        println!(
            "run complete: {} iterations, stop={}, artifacts in {}",
            outcome.trace.rows.len(),
            outcome.trace.stop_reason,
            out_dir.display()
        );
    }
    Ok(())
}

/// `theory-check <config>`: closed-form Gaussian checks of the descent,
/// contraction, convergence and noise-robustness guarantees. Returns
/// whether every check passed.
pub fn cmd_theory_check(cfg: Config, out_dir: &Path, quiet: bool) -> Result<bool> {
    let mut r = Resolver::new(cfg);
    let seed = r.u64_or("experiment.seed", 42)?;
    let mean0 = r.f64_list_or("theory.mean0", &[3.0, 3.0])?;
    let d = mean0.len();
    let var0 = r.f64_list_or("theory.var0", &vec![2.0; d])?;
    let pi_mean = r.f64_list_or("theory.pi_mean", &vec![0.0; d])?;
    let pi_var = r.f64_list_or("theory.pi_var", &vec![1.0; d])?;
    let mu0 = GaussianState::new(
        DVector::from_vec(mean0),
        DMatrix::from_diagonal(&DVector::from_vec(var0)),
    )?;
    let pi = GaussianState::new(
        DVector::from_vec(pi_mean),
        DMatrix::from_diagonal(&DVector::from_vec(pi_var)),
    )?;

    std::fs::create_dir_all(out_dir)?;
    let mut report: Vec<(String, String)> = Vec::new();
    let mut all_ok = true;

    // sublinear KL convergence along the schedule
    let eps0 = r.f64_or("theory.eps0", 0.1)?;
    let alpha = r.f64_or("theory.alpha", 0.6)?;
    let steps = r.usize_or("theory.steps", 5000)?;
    let schedule = StepSchedule::new(eps0, alpha)?;
    let conv = check_kl_convergence(&mu0, &pi, &schedule, steps)?;
    let conv_ok = conv.final_ratio < 1e-3
        && conv.monotone_violation.is_none()
        && conv.talagrand_ok
        && conv.bound_ok;
    all_ok &= conv_ok;
    report.extend(conv.to_key_values());
    report.push(("convergence_pass".into(), conv_ok.to_string()));
    let mut conv_csv = String::from("t,kl,w2\n");
    for (t, (kl, w2)) in conv.kl.iter().zip(&conv.w2).enumerate() {
        conv_csv.push_str(&format!("{t},{kl},{w2}\n"));
    }
    std::fs::write(out_dir.join("convergence.csv"), conv_csv)?;

    // one-step descent over an eta sweep
    let lo = r.f64_or("theory.eta_sweep_lo", 1e-4)?;
    let hi = r.f64_or("theory.eta_sweep_hi", 1e-2)?;
    let points = r.usize_or("theory.eta_sweep_points", 13)?;
    let etas: Vec<f64> = (0..points)
        .map(|i| {
            let t = i as f64 / (points.max(2) - 1) as f64;
            lo * (hi / lo).powf(t)
        })
        .collect();
    let descent = check_one_step_descent(&mu0, &pi, &etas)?;
    let descent_ok = descent.all_descend
        && descent
            .rows
            .iter()
            .all(|row| row.remainder_simple.is_finite());
    all_ok &= descent_ok;
    report.extend(descent.to_key_values());
    report.push(("descent_pass".into(), descent_ok.to_string()));
    let mut sweep_csv = String::from("eta,delta_f,grad_norm_sq,remainder_simple,remainder_curved\n");
    for row in &descent.rows {
        sweep_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.eta, row.delta_f, row.grad_norm_sq, row.remainder_simple, row.remainder_curved
        ));
    }
    std::fs::write(out_dir.join("descent_sweep.csv"), sweep_csv)?;

    // one-step W2 contraction on random pairs
    let pairs = r.usize_or("theory.contraction_pairs", 100)?;
    let mut pair_rng = rng::seeded_stream(seed, 0x7A);
    let mut pair_csv = String::from("pair,eta,lipschitz,kl,w2sq_before,w2sq_after,rhs,holds\n");
    let mut contraction_ok = true;
    for p in 0..pairs {
        let a = random_regular_state(d, &mut pair_rng)?;
        let b = random_regular_state(d, &mut pair_rng)?;
        let l = surrogate_lipschitz(&a, &b);
        let f = kl_gaussian(&a, &b);
        let eta = (f / (l * l)).min(1e-3);
        if eta <= 0.0 {
            continue;
        }
        let rep = check_w2_contraction(&a, &b, eta, l)?;
        contraction_ok &= rep.holds;
        pair_csv.push_str(&format!(
            "{p},{},{},{},{},{},{},{}\n",
            rep.eta, rep.lipschitz, rep.kl_mu, rep.w2_sq_before, rep.w2_sq_after, rep.rhs, rep.holds
        ));
    }
    all_ok &= contraction_ok;
    report.push(("contraction_pairs".into(), pairs.to_string()));
    report.push(("contraction_pass".into(), contraction_ok.to_string()));
    std::fs::write(out_dir.join("contraction_pairs.csv"), pair_csv)?;

    // noise-robustness sweep: one row per magnitude
    let magnitudes = r.f64_list_or("theory.noise_magnitudes", &[0.0, 0.05, 0.1, 0.2])?;
    let n_seeds = r.usize_or("theory.noise_seeds", 100)?;
    let noise_steps = r.usize_or("theory.noise_steps", 2000)?;
    let mut noise_csv = String::from("magnitude,seed_avg_kl,bound_rhs,holds\n");
    let mut noise_ok = true;
    for &magnitude in &magnitudes {
        let mut acc = 0.0;
        let mut bound = 0.0;
        for s in 0..n_seeds {
            let spec = PerturbationSpec {
                kind: if magnitude == 0.0 {
                    PerturbationKind::None
                } else {
                    PerturbationKind::ZeroMeanNoise
                },
                magnitude,
                lipschitz_cap: 0.0,
                seed: seed.wrapping_add(s as u64),
            };
            let rep = run_noisy(&mu0, &pi, &schedule, noise_steps, &spec)?;
            acc += rep.weighted_avg_kl;
            bound = rep.bound_rhs;
        }
        let avg = acc / n_seeds as f64;
        let holds = avg <= bound;
        noise_ok &= holds;
        noise_csv.push_str(&format!("{magnitude},{avg},{bound},{holds}\n"));
    }
    all_ok &= noise_ok;
    report.push(("noise_pass".into(), noise_ok.to_string()));
    report.push(("all_pass".into(), all_ok.to_string()));
    std::fs::write(out_dir.join("noise_sweep.csv"), noise_csv)?;

    io::write_key_values(out_dir.join("report.txt"), &report)?;
    io::write_key_values(out_dir.join("manifest.txt"), &r.manifest(&[]))?;

    if !quiet {
        for (k, v) in &report {
            if k.ends_with("_pass") {
                println!("{k}={v}");
            }
        }
        println!("theory check: {}", if all_ok { "PASS" } else { "FAIL" });
    }
    Ok(all_ok)
}

/// `compare <config>`: runs at least two of {wgd, mcmc, gvb} on the same
/// target and seed family; emits per-method KDE tables and sliced-W2
/// distances to reference samples when available.
pub fn cmd_compare(cfg: Config, out_dir: &Path, quiet: bool) -> Result<()> {
    let mut r = Resolver::new(cfg);
    let seed = r.u64_or("experiment.seed", 42)?;
    let methods_raw = r.str_or("compare.methods", "wgd,mcmc");
    let methods: Vec<String> = methods_raw
        .split(',')
        .map(|m| m.trim().to_string())
        .filter(|m| !m.is_empty())
        .collect();
    if methods.len() < 2 {
        bail!("config key 'compare.methods': need at least two methods, got '{methods_raw}'");
    }
    let built = build_target(&mut r, seed)?;
    let d = built.target.dim();
    std::fs::create_dir_all(out_dir)?;

    let reference = {
        let mut ref_rng = rng::seeded_stream(seed, 0x9F);
        let n = r.usize_or("compare.reference_samples", 20_000)?;
        built.target.sample_reference(n, &mut ref_rng)
    };

    let mut clouds: Vec<(String, ParticleCloud, f64)> = Vec::new();
    for method in &methods {
        let start = std::time::Instant::now();
        let cloud = match method.as_str() {
            "wgd" => run_wgd_for(&mut r, &built, seed)?.cloud,
            "mcmc" => {
                let mut mc = McmcConfig::standard(built.mu0_mean.clone(), seed.wrapping_add(1));
                mc.burn_in = r.usize_or("mcmc.burn_in", 10_000)?;
                mc.iters = r.usize_or("mcmc.iters", 10_000)?;
                adaptive_rw_mcmc(&built.target, &mc)?.0
            }
            "gvb" => {
                let steps = r.usize_or("gvb.steps", 6000)?;
                let mc_samples = r.usize_or("gvb.mc_samples", 32)?;
                let lr = r.f64_or("gvb.lr", 5e-3)?;
                let result = gaussian_vb(&built.target, steps, mc_samples, lr, seed.wrapping_add(2))?;
                let mut draw_rng = rng::seeded_stream(seed.wrapping_add(2), 0xD0);
                let n_draws = r.usize_or("gvb.draws", 10_000)?;
                result.state.sample(n_draws, &mut draw_rng)
            }
            other => bail!("config key 'compare.methods': unknown method '{other}'"),
        };
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        clouds.push((method.clone(), cloud, elapsed));
    }

    // per-method marginal KDE tables
    let kde_coords = d.min(8);
    for (method, cloud, _) in &clouds {
        for coord in 0..kde_coords {
            let table = kde_marginal(cloud, coord, None)?;
            io::write_kde_csv(out_dir.join(format!("kde_{method}_x{}.csv", coord + 1)), &table)?;
        }
    }

    // sliced W2 to the reference, when one exists
    let sw_cfg = SlicedW2Config {
        projections: r.usize_or("compare.projections", 128)?,
        seed,
    };
    let mut compare_csv = String::from("method,sliced_w2_to_reference,elapsed_ms\n");
    for (method, cloud, elapsed) in &clouds {
        let dist = match &reference {
            Some(reference) => format!("{}", sliced_w2(cloud, reference, &sw_cfg)?),
            None => String::new(),
        };
        compare_csv.push_str(&format!("{method},{dist},{elapsed}\n"));
    }
    std::fs::write(out_dir.join("compare.csv"), compare_csv)?;

    // pairwise marginal KDE L1 distances, smoothed with a common
    // bandwidth so that autocorrelated chains are not penalized for
    // their spikier automatic choice
    let mut l1_csv = String::from("coord,method_a,method_b,l1\n");
    for i in 0..clouds.len() {
        for j in (i + 1)..clouds.len() {
            for coord in 0..kde_coords {
                let ha = kde_marginal(&clouds[i].1, coord, None)?.bandwidth;
                let hb = kde_marginal(&clouds[j].1, coord, None)?.bandwidth;
                let h = ha.max(hb);
                let a = kde_marginal(&clouds[i].1, coord, Some(h))?;
                let b = kde_marginal(&clouds[j].1, coord, Some(h))?;
                l1_csv.push_str(&format!(
                    "{},{},{},{}\n",
                    coord + 1,
                    clouds[i].0,
                    clouds[j].0,
                    a.l1_distance(&b)
                ));
            }
        }
    }
    std::fs::write(out_dir.join("kde_l1.csv"), l1_csv)?;
    io::write_key_values(out_dir.join("manifest.txt"), &r.manifest(&[]))?;

    if !quiet {
        println!(
            "compare complete: methods [{}], artifacts in {}",
            methods.join(", "),
            out_dir.display()
        );
    }
    Ok(())
}

/// Exact oracle recursion matching the gaussian-oracle experiment, for
/// external validation of particle runs.
pub fn oracle_reference(
    mu0: &GaussianState,
    pi: &GaussianState,
    schedule: &StepSchedule,
    iters: usize,
) -> Result<(GaussianState, f64)> {
    let mut state = mu0.clone();
    for t in 0..iters {
        state = oracle_step(&state, pi, schedule.step_size(t))?;
    }
    let kl = kl_gaussian(&state, pi);
    let _ = w2_gaussian(&state, pi)?;
    Ok((state, kl))
}
