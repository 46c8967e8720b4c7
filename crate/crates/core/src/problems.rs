//! Finite-sum objectives and their local datasets.
//!
//! Each node holds `J` samples and minimizes the average per-sample loss.
//! The global objective is the average of the local ones, which for equal
//! `J` is the mean over every sample in the network.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::data_stream;

/// One training example. Quadratic samples carry their target vector in
/// `target` and no features; classifiers carry a single `+1`/`-1` label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Quadratic,
    Logistic,
    Mlp2,
    /// Constant zero loss. Only useful for watching the gossip dynamics alone.
    Zero,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::Logistic => "logistic",
            ProblemKind::Mlp2 => "mlp2",
            ProblemKind::Zero => "zero",
        };
        f.write_str(s)
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(ProblemKind::Quadratic),
            "logistic" => Ok(ProblemKind::Logistic),
            "mlp2" => Ok(ProblemKind::Mlp2),
            "zero" => Ok(ProblemKind::Zero),
            _ => Err(Error::Config(format!("unknown problem kind `{s}`"))),
        }
    }
}

/// A per-sample loss together with its model dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub kind: ProblemKind,
    /// Input feature count (`mlp2`, `logistic`) or model dimension (`quadratic`, `zero`).
    pub inputs: usize,
    /// Hidden width of the `mlp2` network.
    pub hidden: usize,
    pub reg: f64,
    /// Smoothness estimate, used only to build step-size schedules.
    pub smoothness: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Objective {
    pub fn quadratic(d: usize) -> Self {
        Self { kind: ProblemKind::Quadratic, inputs: d, hidden: 0, reg: 0.0, smoothness: 1.0 }
    }

    pub fn zero(d: usize) -> Self {
        Self { kind: ProblemKind::Zero, inputs: d, hidden: 0, reg: 0.0, smoothness: 1.0 }
    }

    /// Logistic regression; `L = max ||feat||^2 / 4 + reg` over `data`.
    pub fn logistic<'a>(d: usize, reg: f64, data: impl IntoIterator<Item = &'a Sample>) -> Self {
        let max_sq = data.into_iter().map(|s| norm_sq(&s.features)).fold(0.0, f64::max);
        Self { kind: ProblemKind::Logistic, inputs: d, hidden: 0, reg, smoothness: 0.25 * max_sq + reg }
    }

    /// Two-layer tanh network with a scalar output. `L` is estimated from
    /// gradient differences at random nearby points.
    pub fn mlp2(inputs: usize, hidden: usize, reg: f64, data: &[Sample], seed: u64) -> Self {
        let mut obj = Self { kind: ProblemKind::Mlp2, inputs, hidden, reg, smoothness: 1.0 };
        obj.smoothness = obj.estimate_smoothness(data, seed).max(reg).max(1e-6);
        obj
    }

    /// Model dimension.
    pub fn dim(&self) -> usize {
        match self.kind {
            ProblemKind::Mlp2 => self.hidden * self.inputs + 2 * self.hidden + 1,
            _ => self.inputs,
        }
    }

    fn check(&self, x: &[f64], sample: &Sample) -> Result<()> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::Dimension { expected: d, got: x.len() });
        }
        let (expected, got) = match self.kind {
            ProblemKind::Quadratic => (d, sample.target.len()),
            ProblemKind::Zero => return Ok(()),
            _ => {
                if sample.target.len() != 1 {
                    return Err(Error::Dimension { expected: 1, got: sample.target.len() });
                }
                (self.inputs, sample.features.len())
            }
        };
        if expected != got {
            return Err(Error::Dimension { expected, got });
        }
        Ok(())
    }

    /// Hidden activations and output of the network.
    fn forward(&self, x: &[f64], feat: &[f64]) -> (Vec<f64>, f64) {
        let (h, p) = (self.hidden, self.inputs);
        let (w1, rest) = x.split_at(h * p);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h);
        let act: Vec<f64> = (0..h).map(|k| (dot(&w1[k * p..(k + 1) * p], feat) + b1[k]).tanh()).collect();
        let out = dot(w2, &act) + b2[0];
        (act, out)
    }

    /// Scalar prediction for classifiers; the margin for `logistic`.
    pub fn predict(&self, x: &[f64], feat: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Logistic => dot(x, feat),
            ProblemKind::Mlp2 => self.forward(x, feat).1,
            _ => 0.0,
        }
    }

    pub fn loss(&self, x: &[f64], sample: &Sample) -> Result<f64> {
        self.check(x, sample)?;
        Ok(self.loss_unchecked(x, sample))
    }

    fn loss_unchecked(&self, x: &[f64], s: &Sample) -> f64 {
        let ridge = 0.5 * self.reg * norm_sq(x);
        match self.kind {
            ProblemKind::Quadratic => 0.5 * x.iter().zip(&s.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            ProblemKind::Logistic => softplus(-s.target[0] * dot(x, &s.features)) + ridge,
            ProblemKind::Mlp2 => {
                let r = self.forward(x, &s.features).1 - s.target[0];
                0.5 * r * r + ridge
            }
            ProblemKind::Zero => 0.0,
        }
    }

    pub fn grad(&self, x: &[f64], sample: &Sample) -> Result<Vec<f64>> {
        self.check(x, sample)?;
        let mut g = vec![0.0; x.len()];
        self.grad_into(x, sample, &mut g);
        Ok(g)
    }

    /// Writes the per-sample gradient into `g`. Dimensions must already agree.
    pub fn grad_into(&self, x: &[f64], s: &Sample, g: &mut [f64]) {
        match self.kind {
            ProblemKind::Quadratic => {
                for ((gi, xi), bi) in g.iter_mut().zip(x).zip(&s.target) {
                    *gi = xi - bi;
                }
            }
            ProblemKind::Logistic => {
                let y = s.target[0];
                let coef = -y * sigmoid(-y * dot(x, &s.features));
                for ((gi, xi), fi) in g.iter_mut().zip(x).zip(&s.features) {
                    *gi = coef * fi + self.reg * xi;
                }
            }
            ProblemKind::Mlp2 => {
                let (h, p) = (self.hidden, self.inputs);
                let (act, out) = self.forward(x, &s.features);
                let r = out - s.target[0];
                let w2 = &x[h * p + h..h * p + 2 * h];
                for k in 0..h {
                    let delta = r * w2[k] * (1.0 - act[k] * act[k]);
                    for (gi, fi) in g[k * p..(k + 1) * p].iter_mut().zip(&s.features) {
                        *gi = delta * fi;
                    }
                    g[h * p + k] = delta;
                    g[h * p + h + k] = r * act[k];
                }
                g[h * p + 2 * h] = r;
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += self.reg * xi;
                }
            }
            ProblemKind::Zero => g.iter_mut().for_each(|gi| *gi = 0.0),
        }
    }

    /// Average loss over `samples`.
    pub fn mean_loss<'a>(&self, x: &[f64], samples: impl IntoIterator<Item = &'a Sample>) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for s in samples {
            total += self.loss_unchecked(x, s);
            count += 1;
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }

    /// Average gradient over `samples`.
    pub fn mean_grad<'a>(&self, x: &[f64], samples: impl IntoIterator<Item = &'a Sample>) -> Vec<f64> {
        let mut total = vec![0.0; x.len()];
        let mut g = vec![0.0; x.len()];
        let mut count = 0usize;
        for s in samples {
            self.grad_into(x, s, &mut g);
            total.iter_mut().zip(&g).for_each(|(t, gi)| *t += gi);
            count += 1;
        }
        if count > 0 {
            total.iter_mut().for_each(|t| *t /= count as f64);
        }
        total
    }

    /// Fraction of samples whose label sign matches the prediction sign.
    /// `None` for objectives without labels.
    pub fn accuracy(&self, x: &[f64], samples: &[Sample]) -> Option<f64> {
        match self.kind {
            ProblemKind::Logistic | ProblemKind::Mlp2 if !samples.is_empty() => {
                let hits =
                    samples.iter().filter(|s| (self.predict(x, &s.features) >= 0.0) == (s.target[0] >= 0.0)).count();
                Some(hits as f64 / samples.len() as f64)
            }
            _ => None,
        }
    }

    fn estimate_smoothness(&self, data: &[Sample], seed: u64) -> f64 {
        if data.is_empty() {
            return 1.0;
        }
        let mut rng = data_stream(seed ^ 0x4c);
        let d = self.dim();
        let mut best: f64 = 0.0;
        let mut ga = vec![0.0; d];
        let mut gb = vec![0.0; d];
        for _ in 0..200 {
            let s = &data[rng.gen_range(0..data.len())];
            let xa: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let xb: Vec<f64> = xa
                .iter()
                .map(|v| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    v + 1e-3 * e
                })
                .collect();
            self.grad_into(&xa, s, &mut ga);
            self.grad_into(&xb, s, &mut gb);
            let num: f64 = ga.iter().zip(&gb).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let den: f64 = xa.iter().zip(&xb).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            best = best.max(num / den);
        }
        best
    }
}

/// Uniform draw of a local sample index in `0..j`.
pub fn sample_index<R: Rng + ?Sized>(j: usize, rng: &mut R) -> usize {
    rng.gen_range(0..j)
}

#[derive(Debug, Clone)]
pub struct LocalDataset {
    pub node_id: usize,
    pub samples: Vec<Sample>,
}

impl LocalDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub locals: Vec<LocalDataset>,
    /// Samples left over after the even split.
    pub dropped: usize,
}

impl Partition {
    /// Samples per node.
    pub fn j(&self) -> usize {
        self.locals.first().map_or(0, |l| l.len())
    }

    pub fn all_samples(&self) -> impl Iterator<Item = &Sample> {
        self.locals.iter().flat_map(|l| l.samples.iter())
    }
}

/// Shuffles `global` once with `seed` and hands out contiguous blocks of
/// `floor(len / n)` samples.
pub fn partition(global: &[Sample], n: usize, seed: u64) -> Result<Partition> {
    if n == 0 || global.len() < n {
        return Err(Error::Config(format!("cannot split {} samples across {n} nodes", global.len())));
    }
    let mut order: Vec<usize> = (0..global.len()).collect();
    order.shuffle(&mut data_stream(seed));
    let j = global.len() / n;
    let locals = (0..n)
        .map(|node_id| LocalDataset {
            node_id,
            samples: order[node_id * j..(node_id + 1) * j].iter().map(|&k| global[k].clone()).collect(),
        })
        .collect();
    Ok(Partition { locals, dropped: global.len() - j * n })
}

/// Synthetic training and test data for a problem kind.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Generates `train` training and `test` held-out samples.
///
/// - quadratic: targets `mu + N(0, I)` around a fixed random center `mu`.
/// - logistic: two Gaussian blobs at `+-mu` with `||mu|| = 2`; the last
///   feature is a constant 1 acting as the intercept.
/// - mlp2: uniform inputs in `[-1, 1]^d`, labels from the sign of a fixed
///   random tanh teacher network.
pub fn synthesize(kind: ProblemKind, d: usize, hidden: usize, train: usize, test: usize, seed: u64) -> Synthetic {
    let mut rng = data_stream(seed);
    let normal = |rng: &mut rand_chacha::ChaCha20Rng| -> f64 { StandardNormal.sample(rng) };
    let mut draw: Box<dyn FnMut(&mut rand_chacha::ChaCha20Rng) -> Sample> = match kind {
        ProblemKind::Quadratic | ProblemKind::Zero => {
            let mu: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            Box::new(move |r| Sample { features: Vec::new(), target: mu.iter().map(|m| m + normal(r)).collect() })
        }
        ProblemKind::Logistic => {
            let raw = d.saturating_sub(1).max(1);
            let dir: Vec<f64> = (0..raw).map(|_| normal(&mut rng)).collect();
            let scale = 2.0 / norm_sq(&dir).sqrt();
            let mu: Vec<f64> = dir.iter().map(|v| v * scale).collect();
            Box::new(move |r| {
                let y = if r.gen::<bool>() { 1.0 } else { -1.0 };
                let mut features: Vec<f64> = mu.iter().map(|m| y * m + normal(r)).collect();
                features.truncate(d.saturating_sub(1));
                if d >= 1 {
                    features.push(1.0);
                }
                Sample { features, target: vec![y] }
            })
        }
        ProblemKind::Mlp2 => {
            let teacher_hidden = hidden.max(2);
            let w1: Vec<f64> = (0..teacher_hidden * d).map(|_| 2.0 * normal(&mut rng)).collect();
            let w2: Vec<f64> = (0..teacher_hidden).map(|_| normal(&mut rng)).collect();
            Box::new(move |r| {
                let features: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
                let out: f64 =
                    (0..teacher_hidden).map(|k| w2[k] * dot(&w1[k * d..(k + 1) * d], &features).tanh()).sum();
                Sample { features, target: vec![if out >= 0.0 { 1.0 } else { -1.0 }] }
            })
        }
    };
    let train = (0..train).map(|_| draw(&mut rng)).collect();
    let test = (0..test).map(|_| draw(&mut rng)).collect();
    Synthetic { train, test }
}

/// Loads a feature/label CSV: header row, comma-separated, label in the
/// last column. Labels are mapped to `+1` when positive, `-1` otherwise.
pub fn load_csv(path: &Path) -> Result<Vec<Sample>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse(format!("csv row {}: {e}", row + 2)))?;
        let Some((&label, features)) = vals.split_last() else {
            return Err(Error::Parse(format!("csv row {} is empty", row + 2)));
        };
        out.push(Sample { features: features.to_vec(), target: vec![if label > 0.0 { 1.0 } else { -1.0 }] });
    }
    Ok(out)
}
