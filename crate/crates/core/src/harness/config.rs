//! Run configuration files.
//!
//! A config is a TOML document with the sections `topology`, `compression`,
//! `privacy`, `problem`, `run` and optionally `grid`:
//!
//! ```toml
//! [topology]
//! kind = "exponential"
//! n = 10
//!
//! [compression]
//! kind = "rand"
//! a = 0.5
//!
//! [privacy]
//! epsilon = 0.5
//! delta = 1e-4
//! clip_G = 1.0
//!
//! [problem]
//! kind = "logistic"
//! d = 20
//! J = 500
//!
//! [run]
//! eta = 0.05
//! T = 300
//! seed = 1
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::compression::{CompressorKind, CompressorSpec, DEFAULT_FLOAT_WIDTH};
use crate::engine::{check_omega_admissible, Algorithm, EngineConfig, OmegaCheck, Problem, DEFAULT_OVERFLOW_GUARD};
use crate::error::{Error, Result};
use crate::privacy::{check_budget_admissible, sigma_sq, BudgetCheck, PrivacySpec};
use crate::problems::{load_csv, partition, synthesize, Objective, ProblemKind, Sample};
use crate::topology::{
    build_graph, build_mixing, estimate_constants, load_edge_list, GraphKind, SpectralConstants, DEFAULT_HORIZON,
};

use super::schedule::{theoretical_schedule, Schedule, ScheduleInputs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    /// `ring`, `complete`, `exponential` or `custom`.
    pub kind: String,
    pub n: usize,
    /// Edge-list file for `custom` graphs, one `j i` pair per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<PathBuf>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionSection {
    /// `identity`, `rand` or `gsgd`; `rand_<a>` and `gsgd_<b>` are accepted too.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<u32>,
    #[serde(default = "default_float_width")]
    pub float_width: u64,
}

fn default_float_width() -> u64 {
    DEFAULT_FLOAT_WIDTH
}

impl Default for CompressionSection {
    fn default() -> Self {
        Self { kind: "identity".into(), a: None, b: None, float_width: DEFAULT_FLOAT_WIDTH }
    }
}

impl CompressionSection {
    pub fn compressor_kind(&self) -> Result<CompressorKind> {
        match self.kind.as_str() {
            "rand" => Ok(CompressorKind::Rand {
                a: self.a.ok_or_else(|| Error::Config("compression.a is required for rand".into()))?,
            }),
            "gsgd" => Ok(CompressorKind::Gsgd {
                b: self.b.ok_or_else(|| Error::Config("compression.b is required for gsgd".into()))?,
            }),
            other => other.parse(),
        }
    }

    pub fn from_kind(kind: CompressorKind, float_width: u64) -> Self {
        match kind {
            CompressorKind::Identity => Self { kind: "identity".into(), a: None, b: None, float_width },
            CompressorKind::Rand { a } => Self { kind: "rand".into(), a: Some(a), b: None, float_width },
            CompressorKind::Gsgd { b } => Self { kind: "gsgd".into(), a: None, b: Some(b), float_width },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySection {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub epsilon: f64,
    pub delta: f64,
    #[serde(rename = "clip_G")]
    pub clip_g: f64,
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "one")]
    pub c2: f64,
    /// Clip per-sample gradients at `clip_G`.
    #[serde(default = "yes")]
    pub clip: bool,
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// `quadratic`, `logistic`, `mlp2` or `zero`.
    pub kind: String,
    /// Model dimension (`quadratic`, `zero`) or feature count (`logistic`, `mlp2`).
    pub d: usize,
    #[serde(rename = "J")]
    pub j: usize,
    #[serde(default)]
    pub reg: f64,
    #[serde(default)]
    pub synth_seed: u64,
    /// Hidden width of `mlp2`.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    /// Optional feature/label CSV replacing the synthetic training set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_csv: Option<PathBuf>,
}

fn default_hidden() -> usize {
    8
}

fn default_test_size() -> usize {
    1000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    /// `run.eta` and `run.T` as written.
    Manual,
    /// Step size and horizon from the utility theorem.
    Theory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_guard")]
    pub overflow_guard: f64,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleMode,
    /// Overrides the objective's smoothness estimate in theory schedules.
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<f64>,
}

fn default_algorithm() -> Algorithm {
    Algorithm::DpCsgp
}

fn default_guard() -> f64 {
    DEFAULT_OVERFLOW_GUARD
}

fn default_schedule() -> ScheduleMode {
    ScheduleMode::Manual
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default)]
    pub epsilons: Vec<f64>,
    /// Compressor names such as `identity`, `rand_0.5`, `gsgd_8`.
    #[serde(default)]
    pub compressors: Vec<String>,
    #[serde(default)]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_repeats() -> usize {
    5
}

fn default_out() -> PathBuf {
    PathBuf::from("grid_out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub topology: TopologySection,
    #[serde(default)]
    pub compression: CompressionSection,
    pub privacy: PrivacySection,
    pub problem: ProblemSection,
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
}

/// Everything decided while turning a config into an engine config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config: Config,
    pub n: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub d: usize,
    pub eta: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub sigma_sq: f64,
    pub private: bool,
    pub smoothness: f64,
    pub dropped_samples: usize,
    pub omega_sq: f64,
    pub bits_per_message: u64,
    pub spectral_constants: Option<SpectralConstants>,
    pub spectral_error: Option<String>,
    pub omega_check: Option<OmegaCheck>,
    pub budget_check: BudgetCheck,
    pub schedule: Option<Schedule>,
    /// Label of the grid cell this run belongs to, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// An engine config ready to run plus its metadata.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub engine: EngineConfig,
    pub metadata: RunMetadata,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        // relative data paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        rebase(&mut cfg.topology.edges);
        rebase(&mut cfg.problem.csv);
        rebase(&mut cfg.problem.test_csv);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn graph_kind(&self) -> Result<GraphKind> {
        match self.topology.kind.as_str() {
            "ring" => Ok(GraphKind::Ring),
            "complete" => Ok(GraphKind::Complete),
            "exponential" => Ok(GraphKind::Exponential),
            "custom" => {
                let path = self
                    .topology
                    .edges
                    .as_ref()
                    .ok_or_else(|| Error::Config("topology.edges is required for custom graphs".into()))?;
                Ok(GraphKind::Custom(load_edge_list(path)?))
            }
            other => Err(Error::Config(format!("unknown topology kind `{other}`"))),
        }
    }

    fn build_problem(&self, n: usize) -> Result<(Problem, usize)> {
        let p = &self.problem;
        let kind: ProblemKind = p.kind.parse()?;
        if p.d == 0 {
            return Err(Error::Config("problem.d must be positive".into()));
        }
        if p.reg < 0.0 {
            return Err(Error::Config("problem.reg must be non-negative".into()));
        }
        let (train, test): (Vec<Sample>, Vec<Sample>) = match &p.csv {
            Some(path) => {
                let train = load_csv(path)?;
                let test = match &p.test_csv {
                    Some(t) => load_csv(t)?,
                    None => Vec::new(),
                };
                (train, test)
            }
            None => {
                if p.j == 0 {
                    return Err(Error::Config("problem.J must be positive".into()));
                }
                let s = synthesize(kind, p.d, p.hidden, n * p.j, p.test_size, p.synth_seed);
                (s.train, s.test)
            }
        };
        let parts = partition(&train, n, p.synth_seed)?;
        let dropped = parts.dropped;
        let objective = match kind {
            ProblemKind::Quadratic => Objective::quadratic(p.d),
            ProblemKind::Zero => Objective::zero(p.d),
            ProblemKind::Logistic => Objective::logistic(p.d, p.reg, parts.all_samples()),
            ProblemKind::Mlp2 => {
                let all: Vec<Sample> = parts.all_samples().cloned().collect();
                Objective::mlp2(p.d, p.hidden, p.reg, &all, p.synth_seed)
            }
        };
        Ok((Problem { objective, partition: parts, test }, dropped))
    }

    /// Validates the config and builds everything a run needs.
    pub fn resolve(&self) -> Result<Resolved> {
        let graph = build_graph(&self.graph_kind()?, self.topology.n)?;
        let mixing = build_mixing(&graph)?;
        let n = mixing.n();
        let (problem, dropped) = self.build_problem(n)?;
        let d = problem.dim();
        let j = problem.j();
        let compressor =
            CompressorSpec::with_float_width(self.compression.compressor_kind()?, d, self.compression.float_width)?;

        let pv = &self.privacy;
        let smoothness = self.run.smoothness.unwrap_or(problem.objective.smoothness);
        let (eta, t, schedule) = match self.run.schedule {
            ScheduleMode::Manual => {
                let eta = self.run.eta.ok_or_else(|| Error::Config("run.eta is required".into()))?;
                let t = self.run.t.ok_or_else(|| Error::Config("run.T is required".into()))?;
                (eta, t, None)
            }
            ScheduleMode::Theory => {
                let s = theoretical_schedule(&ScheduleInputs {
                    epsilon: pv.epsilon,
                    delta: pv.delta,
                    j,
                    n,
                    d,
                    c1: pv.c1,
                    c2: pv.c2,
                    clip_g: pv.clip_g,
                    smoothness,
                })?;
                (s.eta, s.t, Some(s))
            }
        };
        let spec = PrivacySpec {
            epsilon: pv.epsilon,
            delta: pv.delta,
            clip_g: pv.clip_g,
            c1: pv.c1,
            c2: pv.c2,
            j,
            t,
            d,
            enabled: pv.enabled,
        };
        // validate the budget even when noise is off
        let calibrated = sigma_sq(&spec)?;
        let sigma = if pv.enabled { calibrated } else { 0.0 };

        let (spectral_constants, spectral_error) = match estimate_constants(&mixing, self.topology.horizon) {
            Ok(k) => (Some(k), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let omega_check = match &spectral_constants {
            Some(k) => Some(check_omega_admissible(&compressor, k)?),
            None => None,
        };

        let engine = EngineConfig {
            eta,
            t,
            algorithm: self.run.algorithm,
            seed: self.run.seed,
            overflow_guard: self.run.overflow_guard,
            mixing: Arc::new(mixing),
            compressor,
            sigma_sq: sigma,
            clip: pv.clip.then_some(pv.clip_g),
            problem: Arc::new(problem),
            init: None,
        };
        engine.validate()?;
        let effective = engine.effective_compressor();
        let metadata = RunMetadata {
            config: self.clone(),
            n,
            j,
            d,
            eta,
            t,
            sigma_sq: sigma,
            private: pv.enabled,
            smoothness,
            dropped_samples: dropped,
            omega_sq: effective.omega_sq()?,
            bits_per_message: effective.bits(),
            spectral_constants,
            spectral_error,
            omega_check,
            budget_check: check_budget_admissible(&spec),
            schedule,
            cell: None,
            failure: None,
        };
        Ok(Resolved { engine, metadata })
    }
}
