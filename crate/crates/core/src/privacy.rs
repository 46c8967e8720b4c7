//! Gaussian noise calibration and gradient clipping.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Privacy budget and the constants that turn it into a noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    pub epsilon: f64,
    pub delta: f64,
    /// Clipping bound on per-sample gradients.
    pub clip_g: f64,
    pub c1: f64,
    pub c2: f64,
    /// Local sample count per node.
    pub j: usize,
    /// Total iterations.
    pub t: usize,
    /// Model dimension.
    pub d: usize,
    /// When false the run injects no noise and is not private.
    pub enabled: bool,
}

/// Outcome of the `epsilon < c1 T / J^2` check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BudgetCheck {
    Ok,
    Warning(String),
}

impl BudgetCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, BudgetCheck::Ok)
    }
}

impl PrivacySpec {
    /// Per-coordinate noise variance the run uses: the calibrated value, or 0
    /// when noise is disabled.
    pub fn effective_sigma_sq(&self) -> Result<f64> {
        if self.enabled {
            sigma_sq(self)
        } else {
            Ok(0.0)
        }
    }
}

/// `sigma^2 = T c2^2 G^2 ln(1/delta) / (J^2 epsilon^2)`.
pub fn sigma_sq(spec: &PrivacySpec) -> Result<f64> {
    if !(spec.delta > 0.0 && spec.delta < 1.0) {
        return Err(Error::Config(format!("delta {} outside (0, 1)", spec.delta)));
    }
    if !(spec.epsilon > 0.0) || !spec.epsilon.is_finite() {
        return Err(Error::Config(format!("epsilon {} must be positive", spec.epsilon)));
    }
    if spec.j == 0 || spec.t == 0 {
        return Err(Error::Config("J and T must be at least 1".into()));
    }
    if !(spec.clip_g > 0.0) || !(spec.c2 > 0.0) {
        return Err(Error::Config("clip_G and c2 must be positive".into()));
    }
    let j = spec.j as f64;
    Ok(spec.t as f64 * spec.c2 * spec.c2 * spec.clip_g * spec.clip_g * (1.0 / spec.delta).ln()
        / (j * j * spec.epsilon * spec.epsilon))
}

/// Warns when `epsilon >= c1 T / J^2`; never aborts.
pub fn check_budget_admissible(spec: &PrivacySpec) -> BudgetCheck {
    let j = spec.j as f64;
    let bound = spec.c1 * spec.t as f64 / (j * j);
    if spec.epsilon < bound {
        BudgetCheck::Ok
    } else {
        BudgetCheck::Warning(format!(
            "epsilon {} is not below c1*T/J^2 = {bound:e}; the noise calibration is used as-is",
            spec.epsilon
        ))
    }
}

/// `g * min(1, G / ||g||)`.
pub fn clip_gradient(g: &[f64], bound: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, bound);
    out
}

pub fn clip_in_place(g: &mut [f64], bound: f64) {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > bound {
        let scale = bound / norm;
        g.iter_mut().for_each(|x| *x *= scale);
    }
}

/// `d` i.i.d. `N(0, sigma_sq)` draws. A zero variance returns zeros without
/// touching `rng`.
pub fn draw_noise<R: Rng + ?Sized>(sigma_sq: f64, d: usize, rng: &mut R) -> Vec<f64> {
    if sigma_sq == 0.0 {
        return vec![0.0; d];
    }
    let normal = Normal::new(0.0, sigma_sq.sqrt()).expect("finite non-negative variance");
    (0..d).map(|_| normal.sample(rng)).collect()
}
