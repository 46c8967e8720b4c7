//! Step size, horizon and noise level prescribed by the utility theorem.
//!
//! ```text
//! T     = floor(J^2 eps^2 / (c2^2 d ln(1/delta)))        (at least 1)
//! eta   = 1 / (J eps / (c2 sqrt(n d ln(1/delta))) + L)
//! sigma^2 = T c2^2 G^2 ln(1/delta) / (J^2 eps^2)
//! ```
//!
//! The theorem additionally assumes `J >= c2 sqrt(d ln(1/delta)) n^{5/2} / eps`
//! and `eps < c1 T / J^2`; both are reported, neither is enforced.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::privacy::{check_budget_admissible, sigma_sq, PrivacySpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleInputs {
    pub epsilon: f64,
    pub delta: f64,
    pub j: usize,
    pub n: usize,
    pub d: usize,
    pub c1: f64,
    pub c2: f64,
    pub clip_g: f64,
    /// Smoothness constant `L`.
    pub smoothness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    #[serde(rename = "T")]
    pub t: usize,
    pub eta: f64,
    pub sigma_sq: f64,
    /// Smallest `J` the theorem asks for.
    pub j_required: f64,
    pub j_condition: bool,
    pub epsilon_condition: bool,
}

pub fn theoretical_schedule(inp: &ScheduleInputs) -> Result<Schedule> {
    if !(inp.delta > 0.0 && inp.delta < 1.0) {
        return Err(Error::Config(format!("delta {} outside (0, 1)", inp.delta)));
    }
    if !(inp.epsilon > 0.0 && inp.c2 > 0.0 && inp.smoothness >= 0.0 && inp.clip_g > 0.0)
        || inp.j == 0
        || inp.n == 0
        || inp.d == 0
    {
        return Err(Error::Config("schedule inputs must be positive".into()));
    }
    let log_inv_delta = (1.0 / inp.delta).ln();
    let (j, n, d) = (inp.j as f64, inp.n as f64, inp.d as f64);
    let raw_t = j * j * inp.epsilon * inp.epsilon / (inp.c2 * inp.c2 * d * log_inv_delta);
    let t = if raw_t.is_finite() { (raw_t.floor() as usize).max(1) } else { 1 };
    let eta = 1.0 / (j * inp.epsilon / (inp.c2 * (n * d * log_inv_delta).sqrt()) + inp.smoothness);
    let spec = PrivacySpec {
        epsilon: inp.epsilon,
        delta: inp.delta,
        clip_g: inp.clip_g,
        c1: inp.c1,
        c2: inp.c2,
        j: inp.j,
        t,
        d: inp.d,
        enabled: true,
    };
    let j_required = inp.c2 * (d * log_inv_delta).sqrt() * n.powf(2.5) / inp.epsilon;
    Ok(Schedule {
        t,
        eta,
        sigma_sq: sigma_sq(&spec)?,
        j_required,
        j_condition: j >= j_required,
        epsilon_condition: check_budget_admissible(&spec).is_ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> ScheduleInputs {
        ScheduleInputs {
            epsilon: 0.5,
            delta: 1e-4,
            j: 1000,
            n: 10,
            d: 10,
            c1: 1.0,
            c2: 1.0,
            clip_g: 1.5,
            smoothness: 1.0,
        }
    }

    #[test]
    fn worked_example() {
        let s = theoretical_schedule(&inputs()).unwrap();
        // 250000 / (10 ln 1e4) = 2714.34
        assert_eq!(s.t, 2714);
        // 1 / (500 / sqrt(100 ln 1e4) + 1)
        assert!((s.eta - 0.057_223_769_183_233_37).abs() < 1e-12, "{}", s.eta);
        // 2714 * 2.25 * ln(1e4) / (1e6 * 0.25)
        assert!((s.sigma_sq - 0.224_971_773_925_890_27).abs() < 1e-12);
        assert!(!s.j_condition);
        assert!(!s.epsilon_condition);
    }

    #[test]
    fn horizon_floors_at_one() {
        let s = theoretical_schedule(&ScheduleInputs { d: usize::MAX / 2, ..inputs() }).unwrap();
        assert_eq!(s.t, 1);
        let s = theoretical_schedule(&ScheduleInputs { delta: 1e-300, j: 1, ..inputs() }).unwrap();
        assert_eq!(s.t, 1);
    }

    #[test]
    fn rejects_bad_delta() {
        assert!(theoretical_schedule(&ScheduleInputs { delta: 1.0, ..inputs() }).is_err());
        assert!(theoretical_schedule(&ScheduleInputs { delta: 0.0, ..inputs() }).is_err());
    }

    #[test]
    fn j_condition_can_hold() {
        let s = theoretical_schedule(&ScheduleInputs { n: 1, j: 100_000, ..inputs() }).unwrap();
        assert!(s.j_condition);
    }
}
