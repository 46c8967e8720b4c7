//! Contractive compression operators with exact bit accounting.
//!
//! Two lossy schemes are provided next to the identity:
//!
//! - `rand_a` keeps a uniformly random subset of `floor(a d)` coordinates
//!   and zeroes the rest. Positions are recoverable from a seed shared once,
//!   so only the kept values are charged.
//! - `gsgd_b` quantizes each coordinate to one of `2^(b-1) + 1` levels of
//!   `|v_i| / ||v||` with random dithering, plus a sign bit.
//!
//! Every operator satisfies `E ||Q(x) - x||^2 <= omega^2 ||x||^2` with
//! `omega^2 < 1`.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::CountingRng;

pub const DEFAULT_FLOAT_WIDTH: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CompressorKind {
    Identity,
    /// Keep a random `a` fraction of coordinates.
    Rand {
        a: f64,
    },
    /// Dithered quantization with `b` bits per coordinate.
    Gsgd {
        b: u32,
    },
}

impl fmt::Display for CompressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompressorKind::Identity => write!(f, "identity"),
            CompressorKind::Rand { a } => write!(f, "rand_{a}"),
            CompressorKind::Gsgd { b } => write!(f, "gsgd_{b}"),
        }
    }
}

impl FromStr for CompressorKind {
    type Err = Error;

    /// Parses `identity`, `rand_<a>` or `gsgd_<b>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown compressor `{s}`"));
        if s == "identity" {
            return Ok(CompressorKind::Identity);
        }
        if let Some(a) = s.strip_prefix("rand_") {
            return Ok(CompressorKind::Rand { a: a.parse().map_err(|_| bad())? });
        }
        if let Some(b) = s.strip_prefix("gsgd_") {
            return Ok(CompressorKind::Gsgd { b: b.parse().map_err(|_| bad())? });
        }
        Err(bad())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressorSpec {
    pub kind: CompressorKind,
    /// Vector dimension.
    pub d: usize,
    /// Bits per raw scalar.
    pub float_width: u64,
}

/// Decoded output of one compression plus its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedMessage {
    pub payload: Vec<f64>,
    /// Cost of the encoded form, counting everything the decoder needs.
    pub bits: u64,
    /// Words drawn from the random stream.
    pub rng_draws: u64,
}

impl CompressorSpec {
    pub fn new(kind: CompressorKind, d: usize) -> Result<Self> {
        Self::with_float_width(kind, d, DEFAULT_FLOAT_WIDTH)
    }

    pub fn with_float_width(kind: CompressorKind, d: usize, float_width: u64) -> Result<Self> {
        let spec = Self { kind, d, float_width };
        spec.validate()?;
        Ok(spec)
    }

    pub fn identity(d: usize) -> Self {
        Self { kind: CompressorKind::Identity, d, float_width: DEFAULT_FLOAT_WIDTH }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("compressor dimension must be positive".into()));
        }
        if self.float_width == 0 {
            return Err(Error::Config("float_width must be positive".into()));
        }
        match self.kind {
            CompressorKind::Identity => {}
            CompressorKind::Rand { a } => {
                if !(a > 0.0 && a <= 1.0) {
                    return Err(Error::Config(format!("rand fraction {a} outside (0, 1]")));
                }
            }
            CompressorKind::Gsgd { b } => {
                if !(2..=52).contains(&b) {
                    return Err(Error::Config(format!("gsgd bits {b} outside [2, 52]")));
                }
                let w = self.omega_sq_formula();
                if w >= 1.0 {
                    return Err(Error::InadmissibleCompression { omega_sq: w });
                }
            }
        }
        Ok(())
    }

    /// Number of coordinates `rand_a` keeps, `floor(a d)`.
    ///
    /// A relative slack of 1e-9 absorbs representation error such as
    /// `0.29 * 100 = 28.999999999999996`.
    pub fn kept(&self) -> usize {
        match self.kind {
            CompressorKind::Rand { a } => ((a * self.d as f64) * (1.0 + 1e-9)).floor() as usize,
            _ => self.d,
        }
        .min(self.d)
    }

    fn omega_sq_formula(&self) -> f64 {
        match self.kind {
            CompressorKind::Identity => 0.0,
            // 1 - a when a d is integral; the kept count is floored otherwise
            CompressorKind::Rand { .. } => 1.0 - self.kept() as f64 / self.d as f64,
            CompressorKind::Gsgd { b } => {
                let levels = 2f64.powi(b as i32 - 1);
                let d = self.d as f64;
                (d / (levels * levels)).min(d.sqrt() / levels)
            }
        }
    }

    /// Contraction coefficient `omega^2`.
    pub fn omega_sq(&self) -> Result<f64> {
        self.validate()?;
        Ok(self.omega_sq_formula())
    }

    /// Bits for one message, norm included for `gsgd`.
    pub fn bits(&self) -> u64 {
        let d = self.d as u64;
        match self.kind {
            CompressorKind::Identity => self.float_width * d,
            CompressorKind::Rand { .. } => self.float_width * self.kept() as u64,
            CompressorKind::Gsgd { b } => d * b as u64 + self.float_width,
        }
    }

    /// Bits for one message without the `gsgd` norm, the accounting that
    /// charges `(b - 1) + 1` bits per coordinate and nothing else.
    pub fn bits_paper_convention(&self) -> u64 {
        match self.kind {
            CompressorKind::Gsgd { b } => self.d as u64 * b as u64,
            _ => self.bits(),
        }
    }

    /// Compresses `v`, drawing randomness from `rng`.
    pub fn compress<R: RngCore + ?Sized>(&self, v: &[f64], rng: &mut R) -> Result<CompressedMessage> {
        if v.len() != self.d {
            return Err(Error::Dimension { expected: self.d, got: v.len() });
        }
        let mut rng = CountingRng::new(rng);
        let payload = match self.kind {
            CompressorKind::Identity => v.to_vec(),
            CompressorKind::Rand { .. } => {
                let k = self.kept();
                if k == self.d {
                    v.to_vec()
                } else {
                    let mut out = vec![0.0; self.d];
                    for i in index::sample(&mut rng, self.d, k) {
                        out[i] = v[i];
                    }
                    out
                }
            }
            CompressorKind::Gsgd { b } => {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    vec![0.0; self.d]
                } else {
                    let levels = 2f64.powi(b as i32 - 1);
                    let unit = norm / levels;
                    v.iter()
                        .map(|&x| {
                            let u: f64 = rng.gen();
                            let level = (levels * x.abs() / norm + u).floor();
                            let sign = if x >= 0.0 { 1.0 } else { -1.0 };
                            sign * unit * level
                        })
                        .collect()
                }
            }
        };
        Ok(CompressedMessage { payload, bits: self.bits(), rng_draws: rng.draws() })
    }
}

impl fmt::Display for CompressorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (d={}, float_width={})", self.kind, self.d, self.float_width)
    }
}

/// Test vectors used to probe the contraction bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Battery {
    Gaussian,
    Sparse,
    Constant,
    Spike,
}

impl Battery {
    pub const ALL: [Battery; 4] = [Battery::Gaussian, Battery::Sparse, Battery::Constant, Battery::Spike];

    fn draw<R: Rng + ?Sized>(self, d: usize, rng: &mut R) -> Vec<f64> {
        match self {
            Battery::Gaussian => (0..d).map(|_| StandardNormal.sample(rng)).collect(),
            Battery::Sparse => {
                let mut v = vec![0.0; d];
                let nnz = (d / 10).max(1);
                for i in index::sample(rng, d, nnz) {
                    v[i] = StandardNormal.sample(rng);
                }
                if v.iter().all(|&x| x == 0.0) {
                    v[0] = 1.0;
                }
                v
            }
            Battery::Constant => vec![1.0; d],
            Battery::Spike => {
                let mut v = vec![0.0; d];
                v[rng.gen_range(0..d)] = 1.0;
                v
            }
        }
    }
}

/// Mean relative compression error for one battery.
#[derive(Debug, Clone, Copy)]
pub struct BatteryResult {
    pub battery: Battery,
    pub mean: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone)]
pub struct ContractionReport {
    pub omega_sq: f64,
    pub batteries: Vec<BatteryResult>,
}

impl ContractionReport {
    /// Largest battery mean.
    pub fn worst(&self) -> f64 {
        self.batteries.iter().map(|b| b.mean).fold(0.0, f64::max)
    }

    /// Every battery mean is within three standard errors of `omega^2`.
    pub fn within_bound(&self) -> bool {
        self.batteries.iter().all(|b| b.mean <= self.omega_sq + 3.0 * b.std_err + 1e-12)
    }
}

/// Estimates `E ||Q(x) - x||^2 / ||x||^2` on each battery.
pub fn empirical_contraction<R: Rng + ?Sized>(
    spec: &CompressorSpec,
    samples: usize,
    rng: &mut R,
) -> Result<ContractionReport> {
    let omega_sq = spec.omega_sq()?;
    let batteries = Battery::ALL
        .iter()
        .map(|&battery| {
            let ratios = (0..samples)
                .map(|_| {
                    let x = battery.draw(spec.d, rng);
                    relative_error(spec, &x, rng)
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean, std_err) = mean_and_std_err(&ratios);
            Ok(BatteryResult { battery, mean, std_err })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ContractionReport { omega_sq, batteries })
}

/// `||Q(x) - x||^2 / ||x||^2` for a single draw.
pub fn relative_error<R: RngCore + ?Sized>(spec: &CompressorSpec, x: &[f64], rng: &mut R) -> Result<f64> {
    let q = spec.compress(x, rng)?;
    let err: f64 = q.payload.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    let norm: f64 = x.iter().map(|v| v * v).sum();
    Ok(if norm == 0.0 { 0.0 } else { err / norm })
}

pub(crate) fn mean_and_std_err(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::data_stream;

    fn spec(kind: CompressorKind, d: usize) -> CompressorSpec {
        CompressorSpec::new(kind, d).unwrap()
    }

    #[test]
    fn omega_values() {
        assert_eq!(spec(CompressorKind::Rand { a: 0.5 }, 10).omega_sq().unwrap(), 0.5);
        assert_eq!(spec(CompressorKind::Gsgd { b: 3 }, 4).omega_sq().unwrap(), 0.25);
        assert_eq!(CompressorSpec::identity(7).omega_sq().unwrap(), 0.0);
    }

    #[test]
    fn gsgd_with_too_few_bits_is_rejected() {
        // d = 100, b = 2: min(100/4, 10/2) = 5
        let err = CompressorSpec::new(CompressorKind::Gsgd { b: 2 }, 100).unwrap_err();
        assert!(matches!(err, Error::InadmissibleCompression { .. }));
    }

    #[test]
    fn invalid_specs() {
        assert!(CompressorSpec::new(CompressorKind::Rand { a: 0.0 }, 4).is_err());
        assert!(CompressorSpec::new(CompressorKind::Rand { a: 1.5 }, 4).is_err());
        assert!(CompressorSpec::new(CompressorKind::Gsgd { b: 1 }, 4).is_err());
        assert!(CompressorSpec::new(CompressorKind::Identity, 0).is_err());
    }

    #[test]
    fn kept_count_survives_representation_error() {
        assert_eq!(spec(CompressorKind::Rand { a: 0.29 }, 100).kept(), 29);
        assert_eq!(spec(CompressorKind::Rand { a: 0.5 }, 5).kept(), 2);
    }

    #[test]
    fn names_round_trip() {
        for s in ["identity", "rand_0.5", "gsgd_8"] {
            assert_eq!(s.parse::<CompressorKind>().unwrap().to_string(), s);
        }
        assert!("topk_3".parse::<CompressorKind>().is_err());
        assert!("rand_x".parse::<CompressorKind>().is_err());
    }

    #[test]
    fn full_fraction_is_identity() {
        let s = spec(CompressorKind::Rand { a: 1.0 }, 6);
        let v = vec![1.0, -2.0, 3.5, 0.0, 4.0, -0.25];
        let m = s.compress(&v, &mut data_stream(0)).unwrap();
        assert_eq!(m.payload, v);
        assert_eq!(m.bits, 32 * 6);
    }

    #[test]
    fn gsgd_zero_vector() {
        let s = spec(CompressorKind::Gsgd { b: 4 }, 5);
        let m = s.compress(&[0.0; 5], &mut data_stream(0)).unwrap();
        assert_eq!(m.payload, vec![0.0; 5]);
        assert_eq!(m.bits, 5 * 4 + 32);
        assert_eq!(s.bits_paper_convention(), 20);
    }

    #[test]
    fn rand_half_of_ones_drops_exactly_two() {
        let s = spec(CompressorKind::Rand { a: 0.5 }, 4);
        let mut rng = data_stream(3);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..200 {
            let m = s.compress(&[1.0; 4], &mut rng).unwrap();
            assert_eq!(m.payload.iter().filter(|&&x| x == 1.0).count(), 2);
            assert_eq!(m.payload.iter().filter(|&&x| x == 0.0).count(), 2);
            let err: f64 = m.payload.iter().map(|x| (x - 1.0) * (x - 1.0)).sum();
            assert_eq!(err, 2.0);
            assert_eq!(m.bits, 64);
            seen.insert(m.payload.iter().map(|&x| x as u8).collect::<Vec<_>>());
        }
        // all C(4,2) = 6 subsets show up
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn dimension_mismatch() {
        let s = CompressorSpec::identity(3);
        assert!(matches!(s.compress(&[1.0], &mut data_stream(0)), Err(Error::Dimension { expected: 3, got: 1 })));
    }

    #[test]
    fn identity_contraction_is_zero() {
        let r = empirical_contraction(&CompressorSpec::identity(8), 1000, &mut data_stream(1)).unwrap();
        assert_eq!(r.worst(), 0.0);
    }

    #[test]
    fn rand_half_constant_vector() {
        let s = spec(CompressorKind::Rand { a: 0.5 }, 10);
        let r = empirical_contraction(&s, 1000, &mut data_stream(2)).unwrap();
        let constant = r.batteries.iter().find(|b| b.battery == Battery::Constant).unwrap();
        // exactly 5 of 10 ones survive every draw
        assert_eq!(constant.mean, 0.5);
        assert!(r.within_bound());
    }

    #[test]
    fn gsgd_small_contraction() {
        let s = spec(CompressorKind::Gsgd { b: 3 }, 4);
        let r = empirical_contraction(&s, 5000, &mut data_stream(4)).unwrap();
        assert!(r.within_bound(), "{r:?}");
        assert!(r.worst() <= 0.25 + 0.01);
    }
}
