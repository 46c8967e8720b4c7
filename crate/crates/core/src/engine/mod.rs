//! Synchronous simulation of DP-CSGP.
//!
//! One round at node `i`:
//!
//! 1. `q_i = Q(x_i - xhat_i)`
//! 2. send `(q_i, y_i)` to every out-neighbor
//! 3. `xhat_j += q_j` for every in-neighbor replica and for the own estimate
//! 4. `w_i = x_i - xhat_i + sum_j a_ij xhat_j`
//! 5. `y_i = sum_j a_ij y_j`
//! 6. `z_i = w_i / y_i`
//! 7. draw a local sample, take the clipped gradient at `z_i`, draw noise
//! 8. `x_i = w_i - eta (grad + noise)`
//!
//! Every phase completes at all nodes before the next begins. Sums over
//! in-neighbors run in ascending node order starting from `0.0`; the matrix
//! oracle in [`oracle`] uses the same order so the two agree bitwise.

pub mod diagnostics;
pub mod oracle;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::compression::{CompressorKind, CompressorSpec};
use crate::error::{Error, Result};
use crate::privacy::{clip_in_place, draw_noise};
use crate::problems::{sample_index, Objective, Partition, Sample};
use crate::rng::NodeStreams;
use crate::topology::MixingMatrix;

pub use diagnostics::{check_omega_admissible, error_feedback_diagnostic, zeta, ErrorFeedbackReport, OmegaCheck};
pub use oracle::{matrix_oracle, OracleTrajectory};

pub const DEFAULT_OVERFLOW_GUARD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "dp-csgp")]
    DpCsgp,
    /// Same recursion with exact (identity) communication.
    #[serde(rename = "exact-sgp-baseline")]
    ExactSgpBaseline,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::DpCsgp => "dp-csgp",
            Algorithm::ExactSgpBaseline => "exact-sgp-baseline",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp-csgp" => Ok(Algorithm::DpCsgp),
            "exact-sgp-baseline" => Ok(Algorithm::ExactSgpBaseline),
            _ => Err(Error::Config(format!("unknown algorithm `{s}`"))),
        }
    }
}

/// Objective, local datasets and held-out test samples.
#[derive(Debug, Clone)]
pub struct Problem {
    pub objective: Objective,
    pub partition: Partition,
    pub test: Vec<Sample>,
}

impl Problem {
    pub fn n(&self) -> usize {
        self.partition.locals.len()
    }

    pub fn j(&self) -> usize {
        self.partition.j()
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    /// Global objective at `x`: the mean loss over every node's samples.
    pub fn loss(&self, x: &[f64]) -> f64 {
        self.objective.mean_loss(x, self.partition.all_samples())
    }

    pub fn full_grad(&self, x: &[f64]) -> Vec<f64> {
        self.objective.mean_grad(x, self.partition.all_samples())
    }

    pub fn test_accuracy(&self, x: &[f64]) -> Option<f64> {
        self.objective.accuracy(x, &self.test)
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub eta: f64,
    pub t: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub overflow_guard: f64,
    pub mixing: Arc<MixingMatrix>,
    pub compressor: CompressorSpec,
    /// Per-coordinate noise variance; 0 disables noise.
    pub sigma_sq: f64,
    /// Gradient clipping bound; `None` disables clipping.
    pub clip: Option<f64>,
    pub problem: Arc<Problem>,
    /// Non-zero initial models, one per node. `None` starts from zero.
    pub init: Option<Vec<Vec<f64>>>,
}

impl EngineConfig {
    /// Compressor the run actually uses: the baseline always sends exact vectors.
    pub fn effective_compressor(&self) -> CompressorSpec {
        match self.algorithm {
            Algorithm::DpCsgp => self.compressor,
            Algorithm::ExactSgpBaseline => CompressorSpec {
                kind: CompressorKind::Identity,
                d: self.compressor.d,
                float_width: self.compressor.float_width,
            },
        }
    }

    pub fn n(&self) -> usize {
        self.mixing.n()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("step size {} must be positive", self.eta)));
        }
        if self.t == 0 {
            return Err(Error::Config("T must be at least 1".into()));
        }
        if !(self.sigma_sq >= 0.0) {
            return Err(Error::Config(format!("noise variance {} must be non-negative", self.sigma_sq)));
        }
        if let Some(g) = self.clip {
            if !(g > 0.0) {
                return Err(Error::Config(format!("clipping bound {g} must be positive")));
            }
        }
        if !(self.overflow_guard > 0.0) {
            return Err(Error::Config("overflow guard must be positive".into()));
        }
        let n = self.n();
        if self.problem.n() != n {
            return Err(Error::Config(format!(
                "problem has {} local datasets but the graph has {n} nodes",
                self.problem.n()
            )));
        }
        if self.problem.j() == 0 {
            return Err(Error::Config("local datasets are empty".into()));
        }
        let d = self.problem.dim();
        if self.compressor.d != d {
            return Err(Error::Dimension { expected: d, got: self.compressor.d });
        }
        self.compressor.validate()?;
        if let Some(init) = &self.init {
            if init.len() != n {
                return Err(Error::Config(format!("init has {} rows for {n} nodes", init.len())));
            }
            if let Some(row) = init.iter().find(|r| r.len() != d) {
                return Err(Error::Dimension { expected: d, got: row.len() });
            }
        }
        Ok(())
    }
}

/// Per-node variables.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: usize,
    pub x: Vec<f64>,
    /// Push-sum weight.
    pub y: f64,
    /// De-biased model `w / y`.
    pub z: Vec<f64>,
    /// Own estimate `xhat_i`, as every out-neighbor also holds it.
    pub xhat_self: Vec<f64>,
    /// Replicas `xhat_j` of in-neighbors, self excluded.
    pub xhat_in: BTreeMap<usize, Vec<f64>>,
    streams: NodeStreams,
}

/// Metrics for one round, computed from the simulator's global view.
///
/// Round `t` maps `x^t` to `x^{t+1}`; averages refer to the models after
/// the round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub t: usize,
    /// `||grad f(xbar)||^2` at the post-round average.
    pub grad_norm_sq_avg: f64,
    /// `max_i ||z_i - xbar||^2` with `xbar` the average entering the round.
    pub consensus_err: f64,
    /// `||X^t - Xhat^{t+1}||_F^2`, the residual compression error.
    pub u_t: f64,
    pub bits_cum: u64,
    /// Cumulative bits without the `gsgd` norm.
    pub bits_paper_convention: u64,
    pub loss_avg: f64,
    pub test_acc: Option<f64>,
    /// `sum_i y_i` after the round.
    pub weight_sum: f64,
    /// Relative residual of `xbar' - xbar + eta/n sum_i (g_i + N_i) = 0`.
    pub average_identity_residual: f64,
}

/// A node-level simulation in progress.
pub struct Simulator {
    config: EngineConfig,
    compressor: CompressorSpec,
    in_neighbors: Vec<Vec<usize>>,
    states: Vec<NodeState>,
    t: usize,
    bits_cum: u64,
    bits_paper: u64,
    check_replicas: bool,
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn average(rows: impl Iterator<Item = impl AsRef<[f64]>>, n: usize, d: usize) -> Vec<f64> {
    let mut acc = vec![0.0; d];
    for r in rows {
        acc.iter_mut().zip(r.as_ref()).for_each(|(a, v)| *a += v);
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

impl Simulator {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n();
        let d = config.problem.dim();
        let graph = config.mixing.graph();
        let in_neighbors: Vec<Vec<usize>> = (0..n).map(|i| graph.in_neighbors(i)).collect();
        let states = (0..n)
            .map(|i| {
                let x = config.init.as_ref().map_or_else(|| vec![0.0; d], |init| init[i].clone());
                NodeState {
                    id: i,
                    z: x.clone(),
                    x,
                    y: 1.0,
                    xhat_self: vec![0.0; d],
                    xhat_in: in_neighbors[i].iter().filter(|&&j| j != i).map(|&j| (j, vec![0.0; d])).collect(),
                    streams: NodeStreams::new(config.seed, i),
                }
            })
            .collect();
        Ok(Self {
            compressor: config.effective_compressor(),
            config,
            in_neighbors,
            states,
            t: 0,
            bits_cum: 0,
            bits_paper: 0,
            check_replicas: true,
        })
    }

    /// Turns the per-round replica comparison on or off.
    pub fn set_replica_checks(&mut self, on: bool) {
        self.check_replicas = on;
    }

    pub fn states(&self) -> &[NodeState] {
        &self.states
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Rounds completed so far.
    pub fn rounds(&self) -> usize {
        self.t
    }

    pub fn average_model(&self) -> Vec<f64> {
        average(self.states.iter().map(|s| &s.x), self.states.len(), self.config.problem.dim())
    }

    /// Runs one synchronous round.
    pub fn step(&mut self) -> Result<RunRecord> {
        let n = self.states.len();
        let d = self.config.problem.dim();
        let t = self.t + 1;
        let eta = self.config.eta;
        let mixing = Arc::clone(&self.config.mixing);
        let problem = Arc::clone(&self.config.problem);
        let graph = mixing.graph();

        let avg_before = self.average_model();

        // (1) compress the gap between model and own estimate
        let mut messages = Vec::with_capacity(n);
        for s in &mut self.states {
            let gap: Vec<f64> = s.x.iter().zip(&s.xhat_self).map(|(x, h)| x - h).collect();
            messages.push(self.compressor.compress(&gap, &mut s.streams.compression)?);
        }
        let weights_before: Vec<f64> = self.states.iter().map(|s| s.y).collect();

        // (2) charge every true out-edge for q_j and y_j
        let fw = self.compressor.float_width;
        for (j, msg) in messages.iter().enumerate() {
            let edges = (graph.out_degree(j) - 1) as u64;
            self.bits_cum += edges * (msg.bits + fw);
            self.bits_paper += edges * (self.compressor.bits_paper_convention() + fw);
        }

        // (3) every holder of xhat_j adds q_j
        for s in &mut self.states {
            let own = &messages[s.id].payload;
            s.xhat_self.iter_mut().zip(own).for_each(|(h, q)| *h += q);
            for (j, replica) in s.xhat_in.iter_mut() {
                replica.iter_mut().zip(&messages[*j].payload).for_each(|(h, q)| *h += q);
            }
        }
        if self.check_replicas {
            self.verify_replicas(t)?;
        }

        let u_t: f64 =
            self.states.iter().map(|s| s.x.iter().zip(&s.xhat_self).map(|(x, h)| (x - h) * (x - h)).sum::<f64>()).sum();

        // (4)-(6) mix estimates and weights, de-bias
        let mut mixed = Vec::with_capacity(n);
        for s in &self.states {
            let i = s.id;
            let mut acc = vec![0.0; d];
            for &j in &self.in_neighbors[i] {
                let a = mixing.weight(i, j);
                let est = if j == i { &s.xhat_self } else { &s.xhat_in[&j] };
                acc.iter_mut().zip(est).for_each(|(c, h)| *c += a * h);
            }
            let w: Vec<f64> = s.x.iter().zip(&s.xhat_self).zip(&acc).map(|((x, h), c)| (x - h) + c).collect();
            let mut y = 0.0;
            for &j in &self.in_neighbors[i] {
                y += mixing.weight(i, j) * weights_before[j];
            }
            mixed.push((w, y));
        }

        // (7)-(8) private local step at the de-biased point
        let mut update_sum = vec![0.0; d];
        let mut scale: f64 = 0.0;
        let mut grad = vec![0.0; d];
        for (s, (w, y)) in self.states.iter_mut().zip(mixed) {
            if !(y > 0.0) {
                return Err(Error::NonPositiveWeight { t, node: s.id, y });
            }
            let z: Vec<f64> = w.iter().map(|v| v / y).collect();
            let local = &problem.partition.locals[s.id].samples;
            let k = sample_index(local.len(), &mut s.streams.sampling);
            problem.objective.grad_into(&z, &local[k], &mut grad);
            if let Some(bound) = self.config.clip {
                clip_in_place(&mut grad, bound);
            }
            let noise = draw_noise(self.config.sigma_sq, d, &mut s.streams.noise);
            let x: Vec<f64> = w.iter().zip(&grad).zip(&noise).map(|((wk, g), nz)| wk - eta * (g + nz)).collect();
            for ((u, g), nz) in update_sum.iter_mut().zip(&grad).zip(&noise) {
                *u += g + nz;
            }
            scale = scale.max(norm_sq(&s.x)).max(norm_sq(&s.xhat_self)).max(norm_sq(&w)).max(norm_sq(&x));
            let norm = norm_sq(&x).sqrt();
            if !(norm <= self.config.overflow_guard) {
                return Err(Error::Divergence { t, node: s.id, norm });
            }
            s.x = x;
            s.y = y;
            s.z = z;
        }
        self.t = t;

        let avg_after = self.average_model();
        let residual: f64 = avg_after
            .iter()
            .zip(&avg_before)
            .zip(&update_sum)
            .map(|((a, b), u)| {
                let r = a - b + eta / n as f64 * u;
                r * r
            })
            .sum::<f64>()
            .sqrt();
        let scale = scale.sqrt().max(eta * norm_sq(&update_sum).sqrt() / n as f64);
        let average_identity_residual = if scale > 0.0 { residual / scale } else { residual };

        let consensus_err = self
            .states
            .iter()
            .map(|s| s.z.iter().zip(&avg_before).map(|(z, a)| (z - a) * (z - a)).sum::<f64>())
            .fold(0.0, f64::max);
        let full = problem.full_grad(&avg_after);

        Ok(RunRecord {
            t,
            grad_norm_sq_avg: norm_sq(&full),
            consensus_err,
            u_t,
            bits_cum: self.bits_cum,
            bits_paper_convention: self.bits_paper,
            loss_avg: problem.loss(&avg_after),
            test_acc: problem.test_accuracy(&avg_after),
            weight_sum: self.states.iter().map(|s| s.y).sum(),
            average_identity_residual,
        })
    }

    fn verify_replicas(&self, t: usize) -> Result<()> {
        for holder in &self.states {
            for (owner, replica) in &holder.xhat_in {
                let own = &self.states[*owner].xhat_self;
                if replica.iter().zip(own).any(|(a, b)| a.to_bits() != b.to_bits()) {
                    return Err(Error::ReplicaMismatch { t, owner: *owner, holder: holder.id });
                }
            }
        }
        Ok(())
    }
}

/// Records of a run, and the error that stopped it early, if any.
#[derive(Debug)]
pub struct RunOutcome {
    pub records: Vec<RunRecord>,
    pub failure: Option<Error>,
    pub final_average: Vec<f64>,
}

impl RunOutcome {
    pub fn last(&self) -> Option<&RunRecord> {
        self.records.last()
    }
}

/// Runs `config.t` rounds. Validation errors are returned directly; a
/// failure mid-run keeps the records produced before it.
pub fn run(config: EngineConfig) -> Result<RunOutcome> {
    let mut sim = Simulator::new(config)?;
    let total = sim.config().t;
    let mut records = Vec::with_capacity(total);
    let mut failure = None;
    for _ in 0..total {
        match sim.step() {
            Ok(r) => records.push(r),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    Ok(RunOutcome { records, failure, final_average: sim.average_model() })
}

/// The uncompressed private push-sum baseline: `run` with identity compression.
pub fn baseline_exact_sgp(mut config: EngineConfig) -> Result<RunOutcome> {
    config.algorithm = Algorithm::ExactSgpBaseline;
    run(config)
}

#[cfg(test)]
mod tests;
