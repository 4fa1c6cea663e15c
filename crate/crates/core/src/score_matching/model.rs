//! The tanh-flow score model and its analytic Jacobian trace.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("model must contain at least one block")]
    NoBlocks,
    #[error("block {index} has shape inconsistent with dim {dim}")]
    BlockShape { index: usize, dim: usize },
    #[error("block {index} contains a non-finite parameter")]
    NonFiniteParam { index: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch dimension {batch} does not match model dimension {model}")]
    DimMismatch { batch: usize, model: usize },
    #[error("cloud has {particles} particles, fewer than batch size {batch}")]
    BatchTooSmall { particles: usize, batch: usize },
    #[error("non-finite loss at SGD step {step}")]
    NonFiniteLoss { step: usize },
    #[error("cannot parse score model: {0}")]
    Parse(String),
}

/// One flow block `y = x + V tanh(W'x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhBlock {
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl TanhBlock {
    pub fn zeros(dim: usize) -> Self {
        TanhBlock {
            v: DMatrix::zeros(dim, dim),
            w: DMatrix::zeros(dim, dim),
            b: DVector::zeros(dim),
        }
    }

    /// Near-identity init: V ~ N(0, 0.01/d), W ~ N(0, 1/d), b = 0, which
    /// keeps early flow steps small and the loss finite.
    pub fn random<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let sv = (0.01 / dim as f64).sqrt();
        let sw = (1.0 / dim as f64).sqrt();
        TanhBlock {
            v: DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal) * sv),
            w: DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal) * sw),
            b: DVector::zeros(dim),
        }
    }

    /// Sign-flip init: `W = g I`, `V = -(2/g) I` plus small noise, so the
    /// block realizes `y ~ -x` with the tanh in its linear regime. On
    /// standardized data this starts at the standard-normal score, which
    /// plain SGD then only has to correct; gradient descent cannot climb
    /// to the required `V` scale from a near-zero start.
    pub fn flip<R: Rng>(dim: usize, gain: f64, rng: &mut R) -> Self {
        let noise = 0.01;
        let mut v = DMatrix::from_fn(dim, dim, |_, _| {
            rng.sample::<f64, _>(StandardNormal) * noise
        });
        let mut w = DMatrix::from_fn(dim, dim, |_, _| {
            rng.sample::<f64, _>(StandardNormal) * noise
        });
        for i in 0..dim {
            v[(i, i)] -= 2.0 / gain;
            w[(i, i)] += gain;
        }
        TanhBlock {
            v,
            w,
            b: DVector::zeros(dim),
        }
    }

    fn check(&self, index: usize, dim: usize) -> Result<(), ScoreError> {
        if self.v.nrows() != dim
            || self.v.ncols() != dim
            || self.w.nrows() != dim
            || self.w.ncols() != dim
            || self.b.len() != dim
        {
            return Err(ScoreError::BlockShape { index, dim });
        }
        let finite = self.v.iter().all(|x| x.is_finite())
            && self.w.iter().all(|x| x.is_finite())
            && self.b.iter().all(|x| x.is_finite());
        if !finite {
            return Err(ScoreError::NonFiniteParam { index });
        }
        Ok(())
    }
}

/// Composition of tanh-flow blocks, applied left to right.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    blocks: Vec<TanhBlock>,
    dim: usize,
}

/// Reusable buffers for repeated evaluation.
pub struct EvalScratch {
    y: DVector<f64>,
    t: DVector<f64>,
}

impl ScoreModel {
    pub fn new(blocks: Vec<TanhBlock>) -> Result<Self, ScoreError> {
        let dim = blocks.first().ok_or(ScoreError::NoBlocks)?.v.nrows();
        for (i, block) in blocks.iter().enumerate() {
            block.check(i, dim)?;
        }
        Ok(ScoreModel { blocks, dim })
    }

    /// Fresh model: the first block starts at the standard-normal score
    /// (sign flip in the tanh linear regime), later blocks near the
    /// identity. Intended for standardized clouds.
    pub fn fresh<R: Rng>(dim: usize, n_blocks: usize, rng: &mut R) -> Self {
        let blocks = (0..n_blocks.max(1))
            .map(|k| {
                if k == 0 {
                    TanhBlock::flip(dim, 0.1, rng)
                } else {
                    TanhBlock::random(dim, rng)
                }
            })
            .collect();
        ScoreModel { blocks, dim }
    }

    pub fn zeroed(dim: usize, n_blocks: usize) -> Self {
        ScoreModel {
            blocks: (0..n_blocks.max(1)).map(|_| TanhBlock::zeros(dim)).collect(),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[TanhBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [TanhBlock] {
        &mut self.blocks
    }

    pub fn scratch(&self) -> EvalScratch {
        EvalScratch {
            y: DVector::zeros(self.dim),
            t: DVector::zeros(self.dim),
        }
    }

    /// Evaluates the composed map using caller-held buffers.
    pub fn eval_scratch(&self, scratch: &mut EvalScratch, x: &[f64], out: &mut [f64]) {
        scratch.y.as_mut_slice().copy_from_slice(x);
        for block in &self.blocks {
            // t = tanh(W'y + b)
            scratch.t.gemv_tr(1.0, &block.w, &scratch.y, 0.0);
            scratch.t += &block.b;
            scratch.t.apply(|v| *v = v.tanh());
            // y += V t
            scratch.y.gemv(1.0, &block.v, &scratch.t, 1.0);
        }
        out.copy_from_slice(scratch.y.as_slice());
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let mut scratch = self.scratch();
        self.eval_scratch(&mut scratch, x, out);
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }

    /// Analytic trace of the Jacobian `∇s(x)`.
    ///
    /// A single block has `∇y = I + V diag(1 - tanh^2(W'x + b)) W'`;
    /// compositions multiply the block Jacobians by the chain rule and
    /// the full product is traced.
    pub fn jacobian_trace(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut y = DVector::from_row_slice(x);
        if self.blocks.len() == 1 {
            let block = &self.blocks[0];
            let mut t = block.w.tr_mul(&y) + &block.b;
            t.apply(|v| *v = v.tanh());
            // tr(V diag(1-t^2) W') = sum_m (1-t_m^2) <V_col_m, W_col_m>
            let mut tr = d as f64;
            for m in 0..d {
                let coupling = block.v.column(m).dot(&block.w.column(m));
                tr += (1.0 - t[m] * t[m]) * coupling;
            }
            return tr;
        }
        let mut product = DMatrix::<f64>::identity(d, d);
        for block in &self.blocks {
            let mut t = block.w.tr_mul(&y) + &block.b;
            t.apply(|v| *v = v.tanh());
            let mut vd = block.v.clone();
            for m in 0..d {
                let scale = 1.0 - t[m] * t[m];
                vd.column_mut(m).scale_mut(scale);
            }
            let mut jac = DMatrix::<f64>::identity(d, d);
            jac.gemm(1.0, &vd, &block.w.transpose(), 1.0);
            product = jac * product;
            y.gemv(1.0, &block.v, &t, 1.0);
        }
        product.trace()
    }

    /// Versioned textual serialization: header, then row-major `V`, `W`,
    /// `b` per block. Values use the shortest round-tripping decimal
    /// form, so parsing restores them bit-exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("tanhflow-score v1\n");
        out.push_str(&format!("dim {}\n", self.dim));
        out.push_str(&format!("blocks {}\n", self.blocks.len()));
        for block in &self.blocks {
            push_matrix_row_major(&mut out, "V", &block.v);
            push_matrix_row_major(&mut out, "W", &block.w);
            out.push('b');
            for val in block.b.iter() {
                out.push(' ');
                out.push_str(&format!("{val}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ScoreError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| ScoreError::Parse("empty input".into()))?;
        if header.trim() != "tanhflow-score v1" {
            return Err(ScoreError::Parse(format!("unknown header '{header}'")));
        }
        let dim = parse_kv_line(lines.next(), "dim")?;
        let n_blocks = parse_kv_line(lines.next(), "blocks")?;
        let mut blocks = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let v = parse_matrix_line(lines.next(), "V", dim)?;
            let w = parse_matrix_line(lines.next(), "W", dim)?;
            let b_vals = parse_values_line(lines.next(), "b", dim)?;
            blocks.push(TanhBlock {
                v,
                w,
                b: DVector::from_vec(b_vals),
            });
        }
        ScoreModel::new(blocks)
    }

    pub fn save<P: AsRef<std::path::Path>>(&self, path: P) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn load<P: AsRef<std::path::Path>>(path: P) -> Result<Self, ScoreError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScoreError::Parse(format!("read failed: {e}")))?;
        Self::from_text(&text)
    }
}

fn push_matrix_row_major(out: &mut String, tag: &str, m: &DMatrix<f64>) {
    out.push_str(tag);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(' ');
            out.push_str(&format!("{}", m[(i, j)]));
        }
    }
    out.push('\n');
}

fn parse_kv_line(line: Option<&str>, key: &str) -> Result<usize, ScoreError> {
    let line = line.ok_or_else(|| ScoreError::Parse(format!("missing '{key}' line")))?;
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next()) {
        (Some(k), Some(v)) if k == key => v
            .parse()
            .map_err(|_| ScoreError::Parse(format!("bad value in '{line}'"))),
        _ => Err(ScoreError::Parse(format!("expected '{key} <n>', got '{line}'"))),
    }
}

fn parse_values_line(line: Option<&str>, tag: &str, count: usize) -> Result<Vec<f64>, ScoreError> {
    let line = line.ok_or_else(|| ScoreError::Parse(format!("missing '{tag}' line")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(ScoreError::Parse(format!("expected '{tag}' line, got '{line}'")));
    }
    let vals: Result<Vec<f64>, _> = parts.map(|p| p.parse::<f64>()).collect();
    let vals = vals.map_err(|_| ScoreError::Parse(format!("bad number in '{tag}' line")))?;
    if vals.len() != count {
        return Err(ScoreError::Parse(format!(
            "'{tag}' line has {} values, expected {count}",
            vals.len()
        )));
    }
    Ok(vals)
}

fn parse_matrix_line(line: Option<&str>, tag: &str, dim: usize) -> Result<DMatrix<f64>, ScoreError> {
    let vals = parse_values_line(line, tag, dim * dim)?;
    Ok(DMatrix::from_row_slice(dim, dim, &vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdiff;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn zero_parameters_is_identity() {
        let model = ScoreModel::zeroed(3, 1);
        let x = [0.4, -1.2, 2.0];
        let s = model.eval(&x);
        assert_eq!(s, x.to_vec());

        let two = ScoreModel::zeroed(3, 2);
        assert_eq!(two.eval(&x), x.to_vec());
    }

    #[test]
    fn single_block_closed_form() {
        // V = -2I, W = I, b = 0: s(x) = x - 2 tanh(x) elementwise
        let d = 2;
        let block = TanhBlock {
            v: DMatrix::identity(d, d) * -2.0,
            w: DMatrix::identity(d, d),
            b: DVector::zeros(d),
        };
        let model = ScoreModel::new(vec![block]).unwrap();
        for x0 in [-2.0, -0.5, 0.0, 0.7, 1.9] {
            for x1 in [-1.3, 0.2, 2.4] {
                let s = model.eval(&[x0, x1]);
                assert_abs_diff_eq!(s[0], x0 - 2.0 * x0.tanh(), epsilon = 1e-14);
                assert_abs_diff_eq!(s[1], x1 - 2.0 * x1.tanh(), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn trace_zero_parameters_equals_dim() {
        for d in [1usize, 2, 5] {
            let model = ScoreModel::zeroed(d, 2);
            assert_abs_diff_eq!(model.jacobian_trace(&vec![0.3; d]), d as f64, epsilon = 1e-14);
        }
    }

    #[test]
    fn trace_scalar_closed_form() {
        // d=1: trace = 1 + v w (1 - tanh^2(w x + b)), b = 0
        let (v, w) = (0.7, -1.3);
        let block = TanhBlock {
            v: DMatrix::from_element(1, 1, v),
            w: DMatrix::from_element(1, 1, w),
            b: DVector::zeros(1),
        };
        let model = ScoreModel::new(vec![block]).unwrap();
        for x in [-1.0, 0.0, 0.4, 2.2] {
            let expected = 1.0 + v * w * (1.0 - (w * x).tanh().powi(2));
            assert_abs_diff_eq!(model.jacobian_trace(&[x]), expected, epsilon = 1e-13);
            let fd = fdiff::jacobian_trace(|y| model.eval(y), &[x], 1e-6);
            assert_abs_diff_eq!(model.jacobian_trace(&[x]), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn trace_matches_finite_differences() {
        let mut r = rng::seeded(41);
        for d in [1usize, 2, 5] {
            for _ in 0..17 {
                let n_blocks = 1 + (r.random::<u32>() % 2) as usize;
                let model = ScoreModel::fresh(d, n_blocks, &mut r);
                let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
                let analytic = model.jacobian_trace(&x);
                let fd = fdiff::jacobian_trace(|y| model.eval(y), &x, 1e-5);
                let rel = (analytic - fd).abs() / fd.abs().max(1.0);
                assert!(rel < 1e-4, "d={d} blocks={n_blocks}: {analytic} vs {fd}");
            }
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mut r = rng::seeded(5);
        let model = ScoreModel::fresh(3, 2, &mut r);
        let restored = ScoreModel::from_text(&model.to_text()).unwrap();
        assert_eq!(model, restored);
    }

    #[test]
    fn parse_rejects_malformed_input() {
        assert!(ScoreModel::from_text("bogus").is_err());
        assert!(ScoreModel::from_text("tanhflow-score v1\ndim 2\nblocks 1\nV 1 2 3\n").is_err());
    }
}
