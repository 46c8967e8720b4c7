//! Admissibility of the compression level and the error-feedback bound.
//!
//! With `rho = omega^2 (1 + gamma^2)`, the residual compression error
//! `U^t = ||X^t - Xhat^{t+1}||^2` stays below `zeta eta^2` as long as
//! `rho <= 1 / (10 + 40 C^2 / (1 - lambda)^2)`, where
//!
//! ```text
//! zeta = 10 rho (n (G^2 + d sigma^2) + 4 C^2 n (G^2 + d sigma^2) / (1 - lambda)^2)
//! ```

use serde::{Deserialize, Serialize};

use crate::compression::CompressorSpec;
use crate::error::Result;
use crate::topology::SpectralConstants;

use super::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaCheck {
    pub omega_sq: f64,
    pub rho: f64,
    pub threshold: f64,
    /// `rho / threshold`; at most 1 when admissible.
    pub ratio: f64,
    pub ok: bool,
}

/// Compares `rho = omega^2 (1 + gamma^2)` with `(10 + 40 C^2 / (1 - lambda)^2)^-1`.
/// The boundary is admissible.
pub fn check_omega_admissible(spec: &CompressorSpec, consts: &SpectralConstants) -> Result<OmegaCheck> {
    let omega_sq = spec.omega_sq()?;
    Ok(omega_check(omega_sq, consts))
}

pub(crate) fn omega_check(omega_sq: f64, consts: &SpectralConstants) -> OmegaCheck {
    let rho = omega_sq * (1.0 + consts.gamma * consts.gamma);
    let gap = 1.0 - consts.lambda;
    let threshold = 1.0 / (10.0 + 40.0 * consts.c * consts.c / (gap * gap));
    OmegaCheck { omega_sq, rho, threshold, ratio: rho / threshold, ok: rho <= threshold }
}

/// `zeta` for the error-feedback bound.
pub fn zeta(rho: f64, n: usize, clip_g: f64, d: usize, sigma_sq: f64, c: f64, lambda: f64) -> f64 {
    let energy = n as f64 * (clip_g * clip_g + d as f64 * sigma_sq);
    let gap = 1.0 - lambda;
    10.0 * rho * (energy + 4.0 * c * c * energy / (gap * gap))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorFeedbackReport {
    pub zeta: f64,
    /// `zeta eta^2`.
    pub bound: f64,
    /// `max_t U^t / (zeta eta^2)`; infinite when the bound is 0 but `U^t` is not.
    pub max_ratio: f64,
    /// Round attaining the maximum.
    pub worst_t: usize,
    /// Rounds where `U^t` exceeds the bound.
    pub violations: Vec<usize>,
}

impl ErrorFeedbackReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `U^t <= zeta eta^2` along one trajectory.
///
/// The bound is an expectation; applying it to a single run is stricter.
#[allow(clippy::too_many_arguments)]
pub fn error_feedback_diagnostic(
    records: &[RunRecord],
    omega_sq: f64,
    consts: &SpectralConstants,
    n: usize,
    clip_g: f64,
    d: usize,
    sigma_sq: f64,
    eta: f64,
) -> ErrorFeedbackReport {
    let rho = omega_sq * (1.0 + consts.gamma * consts.gamma);
    let zeta = zeta(rho, n, clip_g, d, sigma_sq, consts.c, consts.lambda);
    let bound = zeta * eta * eta;
    let mut max_ratio: f64 = 0.0;
    let mut worst_t = records.first().map_or(0, |r| r.t);
    let mut violations = Vec::new();
    for r in records {
        let ratio = if bound > 0.0 {
            r.u_t / bound
        } else if r.u_t == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if ratio > max_ratio {
            max_ratio = ratio;
            worst_t = r.t;
        }
        if r.u_t > bound {
            violations.push(r.t);
        }
    }
    ErrorFeedbackReport { zeta, bound, max_ratio, worst_t, violations }
}
