//! Matrix-form replay of the recursion, used only to cross-check the
//! node-level simulator.
//!
//! Rows of every matrix are nodes:
//!
//! ```text
//! Q      = Q(X - Xhat)            (row-wise)
//! Xhat' = Xhat + Q
//! W      = X + (A - I) Xhat'
//! y'     = A y
//! Z      = diag(y')^{-1} W
//! X'     = W - eta (dF(Z; xi) + N)
//! ```
//!
//! `(A - I) Xhat'` is evaluated as `(X - Xhat') + A Xhat'` with the product
//! summed over all columns in ascending order. Zero entries of `A` add
//! `+0.0`, which leaves a sum that started at `+0.0` unchanged, so the
//! result matches the neighbor-only sums of the simulator bit for bit.

use crate::error::{Error, Result};
use crate::privacy::{clip_in_place, draw_noise};
use crate::problems::sample_index;
use crate::rng::NodeStreams;

use super::EngineConfig;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn zip_with(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// `lhs * self` for a square row-major `lhs` of size `rows`.
    fn left_mul(&self, lhs: &[f64]) -> Mat {
        let n = self.rows;
        let mut out = Mat::zeros(n, self.cols);
        for i in 0..n {
            for j in 0..n {
                let a = lhs[i * n + j];
                for k in 0..self.cols {
                    out.data[i * self.cols + k] += a * self.data[j * self.cols + k];
                }
            }
        }
        out
    }
}

/// States after each of the `T` rounds.
#[derive(Debug, Clone)]
pub struct OracleTrajectory {
    pub x: Vec<Mat>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Mat>,
    pub xhat: Vec<Mat>,
}

pub fn matrix_oracle(config: &EngineConfig) -> Result<OracleTrajectory> {
    config.validate()?;
    let n = config.n();
    let d = config.problem.dim();
    let a = config.mixing.as_slice();
    let compressor = config.effective_compressor();
    let problem = &config.problem;
    let mut streams: Vec<NodeStreams> = (0..n).map(|i| NodeStreams::new(config.seed, i)).collect();

    let mut x = Mat::zeros(n, d);
    if let Some(init) = &config.init {
        for (i, row) in init.iter().enumerate() {
            x.row_mut(i).copy_from_slice(row);
        }
    }
    let mut xhat = Mat::zeros(n, d);
    let mut y = vec![1.0; n];
    let mut out = OracleTrajectory { x: Vec::new(), y: Vec::new(), z: Vec::new(), xhat: Vec::new() };

    for _ in 0..config.t {
        let gap = x.zip_with(&xhat, |p, q| p - q);
        let mut q = Mat::zeros(n, d);
        for (i, st) in streams.iter_mut().enumerate() {
            let msg = compressor.compress(gap.row(i), &mut st.compression)?;
            q.row_mut(i).copy_from_slice(&msg.payload);
        }
        xhat = xhat.zip_with(&q, |h, c| h + c);
        let mixed = xhat.left_mul(a);
        let w = x.zip_with(&xhat, |p, h| p - h).zip_with(&mixed, |p, m| p + m);

        let mut y_next = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                y_next[i] += a[i * n + j] * y[j];
            }
        }
        y = y_next;

        let mut z = Mat::zeros(n, d);
        let mut x_next = Mat::zeros(n, d);
        let mut grad = vec![0.0; d];
        for i in 0..n {
            if !(y[i] > 0.0) {
                return Err(Error::NonPositiveWeight { t: out.x.len() + 1, node: i, y: y[i] });
            }
            z.row_mut(i).iter_mut().zip(w.row(i)).for_each(|(zk, wk)| *zk = wk / y[i]);
            let local = &problem.partition.locals[i].samples;
            let k = sample_index(local.len(), &mut streams[i].sampling);
            problem.objective.grad_into(z.row(i), &local[k], &mut grad);
            if let Some(bound) = config.clip {
                clip_in_place(&mut grad, bound);
            }
            let noise = draw_noise(config.sigma_sq, d, &mut streams[i].noise);
            for k in 0..d {
                x_next.data[i * d + k] = w.row(i)[k] - config.eta * (grad[k] + noise[k]);
            }
        }
        x = x_next;
        out.x.push(x.clone());
        out.y.push(y.clone());
        out.z.push(z);
        out.xhat.push(xhat.clone());
    }
    Ok(out)
}
