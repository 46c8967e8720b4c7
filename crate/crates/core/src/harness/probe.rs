//! How the stationarity metric moves with the network size.
//!
//! For each `n`, the probe runs the theory schedule over several seeds and
//! averages `(1/T) sum_t ||grad f(xbar^t)||^2`. Private runs are expected to
//! improve as `n` grows; the probe reports ratios between consecutive sizes
//! rather than fitting a rate, since the constants in the bound are unknown.

use serde::Serialize;

use crate::engine::run;
use crate::error::{Error, Result};

use super::config::{Config, ScheduleMode};
use super::grid::mean_std;

pub const MIN_PROBE_SEEDS: usize = 5;

#[derive(Debug, Clone, Serialize)]
pub struct ProbeRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub eta: f64,
    pub sigma_sq: f64,
    /// Seed mean of the time-averaged squared gradient norm.
    pub metric_mean: f64,
    pub metric_std: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeTable {
    pub rows: Vec<ProbeRow>,
    /// `metric(n_{k+1}) / metric(n_k)`.
    pub ratios: Vec<f64>,
}

impl ProbeTable {
    /// True when the metric strictly decreases along the sizes probed.
    pub fn decreasing(&self) -> bool {
        self.ratios.iter().all(|&r| r < 1.0)
    }
}

/// Runs `base` with each `n` in `sizes` and `seeds` seeds per size.
pub fn utility_probe(base: &Config, sizes: &[usize], seeds: usize) -> Result<ProbeTable> {
    if sizes.len() < 2 {
        return Err(Error::Config("the probe needs at least two network sizes".into()));
    }
    if seeds < MIN_PROBE_SEEDS {
        return Err(Error::Config(format!("the probe needs at least {MIN_PROBE_SEEDS} seeds")));
    }
    if !base.privacy.enabled {
        return Err(Error::Config("the probe only applies to private runs".into()));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut cfg = base.clone();
        cfg.topology.n = n;
        cfg.run.schedule = ScheduleMode::Theory;
        let resolved = cfg.resolve()?;
        if resolved.engine.sigma_sq == 0.0 {
            return Err(Error::Config("the probe only applies to private runs".into()));
        }
        let metrics = (0..seeds)
            .map(|s| {
                let mut engine = resolved.engine.clone();
                engine.seed = base.run.seed + s as u64;
                let out = run(engine)?;
                if let Some(e) = out.failure {
                    return Err(e);
                }
                let total: f64 = out.records.iter().map(|r| r.grad_norm_sq_avg).sum();
                Ok(total / out.records.len() as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        let (metric_mean, metric_std) = mean_std(&metrics);
        rows.push(ProbeRow {
            n,
            t: resolved.engine.t,
            eta: resolved.engine.eta,
            sigma_sq: resolved.engine.sigma_sq,
            metric_mean,
            metric_std,
            seeds,
        });
    }
    let ratios = rows.windows(2).map(|w| w[1].metric_mean / w[0].metric_mean).collect();
    Ok(ProbeTable { rows, ratios })
}
