//! Sample objective, analytic parameter gradients and SGD fitting.

use super::model::{ScoreError, ScoreModel};
use crate::cloud::ParticleCloud;
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// SGD settings for [`fit_score`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Optional global-norm gradient clip; survives heavy-tailed
    /// intermediate clouds.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            seed: 0,
            grad_clip: Some(10.0),
        }
    }
}

/// Gradient of the objective with respect to every block parameter.
#[derive(Debug, Clone)]
pub struct ScoreModelGrad {
    pub blocks: Vec<BlockGrad>,
}

#[derive(Debug, Clone)]
pub struct BlockGrad {
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl ScoreModelGrad {
    fn zeros_like(model: &ScoreModel) -> Self {
        let d = model.dim();
        ScoreModelGrad {
            blocks: model
                .blocks()
                .iter()
                .map(|_| BlockGrad {
                    v: DMatrix::zeros(d, d),
                    w: DMatrix::zeros(d, d),
                    b: DVector::zeros(d),
                })
                .collect(),
        }
    }

    fn scale(&mut self, factor: f64) {
        for g in &mut self.blocks {
            g.v.scale_mut(factor);
            g.w.scale_mut(factor);
            g.b.scale_mut(factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut acc = 0.0;
        for g in &self.blocks {
            acc += g.v.iter().map(|x| x * x).sum::<f64>();
            acc += g.w.iter().map(|x| x * x).sum::<f64>();
            acc += g.b.iter().map(|x| x * x).sum::<f64>();
        }
        acc.sqrt()
    }
}

/// Which model the fit starts from.
pub enum ScoreInit {
    /// Near-identity random init with the given block count.
    Fresh { blocks: usize },
    /// Warm start, typically the previous iteration's model.
    Warm(ScoreModel),
}

/// Mean over the batch of `tr(∇s(x)) + 0.5 ||s(x)||^2`.
pub fn sm_loss(model: &ScoreModel, batch: &ParticleCloud) -> Result<f64, ScoreError> {
    sm_loss_and_grad_impl(model, batch, None)
}

/// Analytic gradient of [`sm_loss`] for every `V`, `W`, `b` entry.
pub fn sm_grad(model: &ScoreModel, batch: &ParticleCloud) -> Result<ScoreModelGrad, ScoreError> {
    let mut grad = ScoreModelGrad::zeros_like(model);
    sm_loss_and_grad_impl(model, batch, Some(&mut grad))?;
    Ok(grad)
}

/// Loss and gradient in one pass.
pub fn sm_loss_and_grad(
    model: &ScoreModel,
    batch: &ParticleCloud,
) -> Result<(f64, ScoreModelGrad), ScoreError> {
    let mut grad = ScoreModelGrad::zeros_like(model);
    let loss = sm_loss_and_grad_impl(model, batch, Some(&mut grad))?;
    Ok((loss, grad))
}

/// Shared buffers for one pass over a batch.
struct Scratch {
    ys: Vec<DVector<f64>>,
    ts: Vec<DVector<f64>>,
    ds: Vec<DVector<f64>>,
    a: DVector<f64>,
    u: DVector<f64>,
    cc: DVector<f64>,
    // multi-block machinery (unused when the model has one block)
    wt: Vec<DMatrix<f64>>,
    vd: DMatrix<f64>,
    jac: Vec<DMatrix<f64>>,
    prefix: Vec<DMatrix<f64>>,
    suffix: Vec<DMatrix<f64>>,
    mtmp: DMatrix<f64>,
    mw: DMatrix<f64>,
    mtv: DMatrix<f64>,
    q: DVector<f64>,
    coupling: DVector<f64>,
}

impl Scratch {
    fn new(model: &ScoreModel) -> Self {
        let d = model.dim();
        let l = model.blocks().len();
        let mat = || DMatrix::<f64>::zeros(d, d);
        let mut coupling = DVector::zeros(d);
        if l == 1 {
            let block = &model.blocks()[0];
            for m in 0..d {
                coupling[m] = block.v.column(m).dot(&block.w.column(m));
            }
        }
        Scratch {
            ys: (0..=l).map(|_| DVector::zeros(d)).collect(),
            ts: (0..l).map(|_| DVector::zeros(d)).collect(),
            ds: (0..l).map(|_| DVector::zeros(d)).collect(),
            a: DVector::zeros(d),
            u: DVector::zeros(d),
            cc: DVector::zeros(d),
            wt: if l > 1 {
                model.blocks().iter().map(|b| b.w.transpose()).collect()
            } else {
                Vec::new()
            },
            vd: mat(),
            jac: (0..l).map(|_| mat()).collect(),
            prefix: (0..l).map(|_| mat()).collect(),
            suffix: (0..l).map(|_| mat()).collect(),
            mtmp: mat(),
            mw: mat(),
            mtv: mat(),
            q: DVector::zeros(d),
            coupling,
        }
    }
}

fn sm_loss_and_grad_impl(
    model: &ScoreModel,
    batch: &ParticleCloud,
    mut grad: Option<&mut ScoreModelGrad>,
) -> Result<f64, ScoreError> {
    if batch.is_empty() {
        return Err(ScoreError::EmptyBatch);
    }
    if batch.dim() != model.dim() {
        return Err(ScoreError::DimMismatch {
            batch: batch.dim(),
            model: model.dim(),
        });
    }
    let d = model.dim();
    let l = model.blocks().len();
    let mut s = Scratch::new(model);
    let mut loss = 0.0;

    for x in batch.rows() {
        // forward, caching post-activation values per block
        s.ys[0].as_mut_slice().copy_from_slice(x);
        for (k, block) in model.blocks().iter().enumerate() {
            let (pre, rest) = s.ys.split_at_mut(k + 1);
            let yk = &pre[k];
            let yk1 = &mut rest[0];
            s.ts[k].gemv_tr(1.0, &block.w, yk, 0.0);
            s.ts[k] += &block.b;
            for m in 0..d {
                let t = s.ts[k][m].tanh();
                s.ts[k][m] = t;
                s.ds[k][m] = 1.0 - t * t;
            }
            yk1.copy_from(yk);
            yk1.gemv(1.0, &block.v, &s.ts[k], 1.0);
        }

        // Jacobian trace of the composition
        let trace = if l == 1 {
            d as f64 + s.ds[0].dot(&s.coupling)
        } else {
            for (k, block) in model.blocks().iter().enumerate() {
                s.vd.copy_from(&block.v);
                for m in 0..d {
                    let scale = s.ds[k][m];
                    s.vd.column_mut(m).scale_mut(scale);
                }
                s.jac[k].fill(0.0);
                s.jac[k].fill_diagonal(1.0);
                s.jac[k].gemm(1.0, &s.vd, &s.wt[k], 1.0);
            }
            s.prefix[0].fill(0.0);
            s.prefix[0].fill_diagonal(1.0);
            for k in 1..l {
                let (lo, hi) = s.prefix.split_at_mut(k);
                hi[0].gemm(1.0, &s.jac[k - 1], &lo[k - 1], 0.0);
            }
            s.suffix[l - 1].fill(0.0);
            s.suffix[l - 1].fill_diagonal(1.0);
            for k in (0..l - 1).rev() {
                let (lo, hi) = s.suffix.split_at_mut(k + 1);
                lo[k].gemm(1.0, &hi[0], &s.jac[k + 1], 0.0);
            }
            let mut tr = 0.0;
            for i in 0..d {
                for j in 0..d {
                    tr += s.jac[l - 1][(i, j)] * s.prefix[l - 1][(j, i)];
                }
            }
            tr
        };
        loss += trace + 0.5 * s.ys[l].norm_squared();

        let Some(grad) = grad.as_deref_mut() else {
            continue;
        };

        // reverse sweep; `a` carries d(loss)/d(y_k) from downstream terms
        s.a.copy_from(&s.ys[l]);
        for k in (0..l).rev() {
            let block = &model.blocks()[k];
            let g = &mut grad.blocks[k];

            // q_m = (V' M W)_mm and the direct d(trace)/d(V|W) terms
            if l == 1 {
                s.q.copy_from(&s.coupling);
                for m in 0..d {
                    let scale = s.ds[k][m];
                    for i in 0..d {
                        g.v[(i, m)] += block.w[(i, m)] * scale;
                        g.w[(i, m)] += block.v[(i, m)] * scale;
                    }
                }
            } else {
                s.mtmp.gemm(1.0, &s.prefix[k], &s.suffix[k], 0.0);
                // M = mtmp'; MW = mtmp' W and M'V = mtmp V
                s.mw.gemm_tr(1.0, &s.mtmp, &block.w, 0.0);
                s.mtv.gemm(1.0, &s.mtmp, &block.v, 0.0);
                for m in 0..d {
                    s.q[m] = block.v.column(m).dot(&s.mw.column(m));
                    let scale = s.ds[k][m];
                    for i in 0..d {
                        g.v[(i, m)] += s.mw[(i, m)] * scale;
                        g.w[(i, m)] += s.mtv[(i, m)] * scale;
                    }
                }
            }

            // norm-term and trace-activation contributions
            g.v.ger(1.0, &s.a, &s.ts[k], 1.0);
            s.u.gemv_tr(1.0, &block.v, &s.a, 0.0);
            for m in 0..d {
                s.cc[m] =
                    s.ds[k][m] * s.u[m] - 2.0 * s.ts[k][m] * s.ds[k][m] * s.q[m];
            }
            g.b += &s.cc;
            g.w.ger(1.0, &s.ys[k], &s.cc, 1.0);
            s.a.gemv(1.0, &block.w, &s.cc, 1.0);
        }
    }

    let inv_n = 1.0 / batch.len() as f64;
    if let Some(grad) = grad {
        grad.scale(inv_n);
    }
    Ok(loss * inv_n)
}

/// Fits a score model to the cloud by plain SGD on uniformly resampled
/// minibatches. Deterministic given the config seed; `steps = 0` returns
/// the initial model unchanged.
pub fn fit_score(
    cloud: &ParticleCloud,
    init: ScoreInit,
    config: &TrainConfig,
) -> Result<ScoreModel, ScoreError> {
    if cloud.len() < config.batch_size {
        return Err(ScoreError::BatchTooSmall {
            particles: cloud.len(),
            batch: config.batch_size,
        });
    }
    let mut rng = rng::seeded_stream(config.seed, 0x5C);
    let mut model = match init {
        ScoreInit::Fresh { blocks } => ScoreModel::fresh(cloud.dim(), blocks, &mut rng),
        ScoreInit::Warm(model) => {
            if model.dim() != cloud.dim() {
                return Err(ScoreError::DimMismatch {
                    batch: cloud.dim(),
                    model: model.dim(),
                });
            }
            model
        }
    };

    let d = cloud.dim();
    let mut batch = ParticleCloud::zeros(config.batch_size, d);
    for step in 0..config.steps {
        for i in 0..config.batch_size {
            let pick = rng.random_range(0..cloud.len());
            batch.row_mut(i).copy_from_slice(cloud.row(pick));
        }
        let (loss, mut grad) = sm_loss_and_grad(&model, &batch)?;
        if !loss.is_finite() {
            return Err(ScoreError::NonFiniteLoss { step });
        }
        if let Some(cap) = config.grad_clip {
            let norm = grad.global_norm();
            if norm > cap {
                grad.scale(cap / norm);
            }
        }
        let lr = config.learning_rate;
        for (block, g) in model.blocks_mut().iter_mut().zip(&grad.blocks) {
            block.v.axpy_assign(-lr, &g.v);
            block.w.axpy_assign(-lr, &g.w);
            block.b.axpy(-lr, &g.b, 1.0);
        }
    }
    Ok(model)
}

trait AxpyAssign {
    fn axpy_assign(&mut self, alpha: f64, other: &Self);
}

impl AxpyAssign for DMatrix<f64> {
    fn axpy_assign(&mut self, alpha: f64, other: &Self) {
        self.zip_apply(other, |s, o| *s += alpha * o);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn gaussian_cloud(n: usize, d: usize, seed: u64) -> ParticleCloud {
        let mut r = rng::seeded(seed);
        let mean = DVector::zeros(d);
        let cov = DMatrix::identity(d, d);
        ParticleCloud::gaussian(&mean, &cov, n, &mut r).unwrap()
    }

    #[test]
    fn zero_model_loss_closed_form() {
        let cloud = gaussian_cloud(500, 2, 1);
        let model = ScoreModel::zeroed(2, 1);
        let loss = sm_loss(&model, &cloud).unwrap();
        let mean_sq: f64 =
            cloud.rows().map(|x| x[0] * x[0] + x[1] * x[1]).sum::<f64>() / cloud.len() as f64;
        assert_abs_diff_eq!(loss, 2.0 + 0.5 * mean_sq, epsilon = 1e-13);
    }

    #[test]
    fn objective_at_true_score_is_minus_half_dim() {
        // harness: evaluate the objective directly for s(x) = -x, where
        // tr(∇s) = -d and 0.5 E||x||^2 = d/2, so the value is -d/2
        let d = 2;
        let cloud = gaussian_cloud(20_000, d, 2);
        let harness: f64 = cloud
            .rows()
            .map(|x| -(d as f64) + 0.5 * x.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / cloud.len() as f64;
        assert_abs_diff_eq!(harness, -(d as f64) / 2.0, epsilon = 0.05);
    }

    #[test]
    fn empty_batch_rejected() {
        let model = ScoreModel::zeroed(2, 1);
        let cloud = ParticleCloud::zeros(0, 2);
        assert!(matches!(sm_loss(&model, &cloud), Err(ScoreError::EmptyBatch)));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng::seeded(77);
        for (d, n_blocks) in [(1usize, 1usize), (2, 1), (2, 2), (3, 2), (3, 1)] {
            let model = ScoreModel::fresh(d, n_blocks, &mut r);
            let batch = gaussian_cloud(16, d, 1000 + d as u64);
            let grad = sm_grad(&model, &batch).unwrap();

            let check = |extract: &dyn Fn(&ScoreModel) -> f64,
                             perturb: &dyn Fn(&mut ScoreModel, f64),
                             analytic: f64,
                             label: String| {
                let h = 1e-5;
                let mut mp = model.clone();
                perturb(&mut mp, h);
                let fp = sm_loss(&mp, &batch).unwrap();
                let mut mm = model.clone();
                perturb(&mut mm, -h);
                let fm = sm_loss(&mm, &batch).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let err = (fd - analytic).abs() / fd.abs().max(1.0);
                assert!(
                    err < 1e-4,
                    "{label}: analytic {analytic} vs fd {fd} (rel {err})"
                );
                let _ = extract;
            };

            for k in 0..n_blocks {
                for i in 0..d {
                    for j in 0..d {
                        check(
                            &|m| m.blocks()[k].v[(i, j)],
                            &|m, h| m.blocks_mut()[k].v[(i, j)] += h,
                            grad.blocks[k].v[(i, j)],
                            format!("V[{k}][{i}{j}] d={d} blocks={n_blocks}"),
                        );
                        check(
                            &|m| m.blocks()[k].w[(i, j)],
                            &|m, h| m.blocks_mut()[k].w[(i, j)] += h,
                            grad.blocks[k].w[(i, j)],
                            format!("W[{k}][{i}{j}] d={d} blocks={n_blocks}"),
                        );
                    }
                    check(
                        &|m| m.blocks()[k].b[i],
                        &|m, h| m.blocks_mut()[k].b[i] += h,
                        grad.blocks[k].b[i],
                        format!("b[{k}][{i}] d={d} blocks={n_blocks}"),
                    );
                }
            }
        }
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let mut r = rng::seeded(6);
        let model = ScoreModel::fresh(2, 2, &mut r);
        let batch = gaussian_cloud(8, 2, 3);
        let mut doubled_rows: Vec<Vec<f64>> = batch.rows().map(|x| x.to_vec()).collect();
        doubled_rows.extend(batch.rows().map(|x| x.to_vec()));
        let doubled = ParticleCloud::from_rows(&doubled_rows).unwrap();
        let g1 = sm_grad(&model, &batch).unwrap();
        let g2 = sm_grad(&model, &doubled).unwrap();
        for (a, b) in g1.blocks.iter().zip(&g2.blocks) {
            assert!((&a.v - &b.v).abs().max() < 1e-13);
            assert!((&a.w - &b.w).abs().max() < 1e-13);
            assert!((&a.b - &b.b).abs().max() < 1e-13);
        }
    }

    #[test]
    fn minibatch_loss_is_unbiased_across_batch_sizes() {
        let cloud = gaussian_cloud(2000, 2, 9);
        let mut r = rng::seeded(10);
        let model = ScoreModel::fresh(2, 1, &mut r);
        let reps = 200;

        let sample_mean = |bs: usize, r: &mut rand_chacha::ChaCha8Rng| -> (f64, f64) {
            let mut vals = Vec::with_capacity(reps);
            let mut batch = ParticleCloud::zeros(bs, 2);
            for _ in 0..reps {
                for i in 0..bs {
                    let pick = r.random_range(0..cloud.len());
                    batch.row_mut(i).copy_from_slice(cloud.row(pick));
                }
                vals.push(sm_loss(&model, &batch).unwrap());
            }
            let mean = vals.iter().sum::<f64>() / reps as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
            (mean, (var / reps as f64).sqrt())
        };

        let (m_small, se_small) = sample_mean(50, &mut r);
        let (m_large, se_large) = sample_mean(200, &mut r);
        let z = (m_small - m_large).abs() / (se_small * se_small + se_large * se_large).sqrt();
        assert!(z < 1.96, "batch-size bias detected: z = {z}");
    }

    #[test]
    fn zero_steps_returns_init() {
        let cloud = gaussian_cloud(64, 2, 4);
        let mut r = rng::seeded(11);
        let init = ScoreModel::fresh(2, 2, &mut r);
        let cfg = TrainConfig {
            steps: 0,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let out = fit_score(&cloud, ScoreInit::Warm(init.clone()), &cfg).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn fit_is_deterministic() {
        let cloud = gaussian_cloud(512, 2, 12);
        let cfg = TrainConfig {
            steps: 50,
            batch_size: 64,
            seed: 99,
            ..TrainConfig::default()
        };
        let a = fit_score(&cloud, ScoreInit::Fresh { blocks: 2 }, &cfg).unwrap();
        let b = fit_score(&cloud, ScoreInit::Fresh { blocks: 2 }, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fit_rejects_small_clouds() {
        let cloud = gaussian_cloud(16, 2, 13);
        let cfg = TrainConfig {
            batch_size: 64,
            ..TrainConfig::default()
        };
        assert!(matches!(
            fit_score(&cloud, ScoreInit::Fresh { blocks: 1 }, &cfg),
            Err(ScoreError::BatchTooSmall { .. })
        ));
    }

    /// Training on standard normal data: the fitted map should approach
    /// s(x) = -x. The achieved error is the regression baseline for the
    /// acceptance suite.
    #[test]
    fn training_recovers_gaussian_score() {
        let cloud = gaussian_cloud(5000, 2, 21);
        let cfg = TrainConfig {
            steps: 3000,
            batch_size: 256,
            learning_rate: 3e-4,
            seed: 7,
            grad_clip: Some(10.0),
        };
        let trained = fit_score(&cloud, ScoreInit::Fresh { blocks: 1 }, &cfg).unwrap();

        let grid: Vec<[f64; 2]> = (-10..=10)
            .flat_map(|i| (-10..=10).map(move |j| [i as f64 / 5.0, j as f64 / 5.0]))
            .collect();
        let rmse = |model: &ScoreModel| -> f64 {
            let mut acc = 0.0;
            for x in &grid {
                let s = model.eval(x);
                acc += (s[0] + x[0]).powi(2) + (s[1] + x[1]).powi(2);
            }
            (acc / grid.len() as f64).sqrt()
        };
        let trained_rmse = rmse(&trained);
        assert!(trained_rmse < 0.1, "trained rmse {trained_rmse}");

        // the loss should sit near the ideal value -d/2 = -1
        let loss = sm_loss(&trained, &cloud).unwrap();
        assert!((loss + 1.0).abs() < 0.15, "loss {loss}");
    }

    /// On a target whose score the init does not match, training must
    /// shrink the error by at least an order of magnitude.
    #[test]
    fn training_improvement_over_untrained() {
        // N((3, 3), I): the fresh init guesses -x, off by the mean shift
        let mut r = rng::seeded(25);
        let mean = DVector::from_vec(vec![3.0, 3.0]);
        let cloud =
            ParticleCloud::gaussian(&mean, &DMatrix::identity(2, 2), 5000, &mut r).unwrap();

        let init = ScoreModel::fresh(2, 1, &mut rng::seeded_stream(7, 0x5C));
        let mut trained = init.clone();
        for (steps, lr) in [(4000usize, 3e-3), (4000, 1e-3), (4000, 3e-4)] {
            let cfg = TrainConfig {
                steps,
                batch_size: 256,
                learning_rate: lr,
                seed: 7,
                grad_clip: Some(10.0),
            };
            trained = fit_score(&cloud, ScoreInit::Warm(trained), &cfg).unwrap();
        }

        // held-out points around the cloud
        let mut holdout_rng = rng::seeded(26);
        let holdout =
            ParticleCloud::gaussian(&mean, &DMatrix::identity(2, 2), 512, &mut holdout_rng)
                .unwrap();
        let err = |model: &ScoreModel| -> f64 {
            let mut acc = 0.0;
            for x in holdout.rows() {
                let s = model.eval(x);
                acc += (s[0] + (x[0] - 3.0)).powi(2) + (s[1] + (x[1] - 3.0)).powi(2);
            }
            (acc / holdout.len() as f64).sqrt()
        };
        let init_err = err(&init);
        let trained_err = err(&trained);
        assert!(
            trained_err * 10.0 < init_err,
            "expected >=10x improvement: init {init_err}, trained {trained_err}"
        );
    }

    #[test]
    fn loss_decreases_on_average_during_training() {
        use crate::score_matching::TanhBlock;
        let cloud = gaussian_cloud(4000, 2, 30);
        // start from a near-identity model, far from the score
        let mut model =
            ScoreModel::new(vec![TanhBlock::random(2, &mut rng::seeded(31))]).unwrap();
        let mut losses = Vec::new();
        let mut r = rng::seeded(32);
        let mut batch = ParticleCloud::zeros(256, 2);
        for _ in 0..600 {
            for i in 0..256 {
                let pick = r.random_range(0..cloud.len());
                batch.row_mut(i).copy_from_slice(cloud.row(pick));
            }
            let (loss, grad) = sm_loss_and_grad(&model, &batch).unwrap();
            losses.push(loss);
            for (block, g) in model.blocks_mut().iter_mut().zip(&grad.blocks) {
                block.v.axpy_assign(-1e-3, &g.v);
                block.w.axpy_assign(-1e-3, &g.w);
                block.b.axpy(-1e-3, &g.b, 1.0);
            }
        }
        // averaged over 50-step windows, the loss trend is downward
        let window = 50;
        let first: f64 = losses[..window].iter().sum::<f64>() / window as f64;
        let last: f64 = losses[losses.len() - window..].iter().sum::<f64>() / window as f64;
        assert!(last < first, "first {first}, last {last}");
    }
}
