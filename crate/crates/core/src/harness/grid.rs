//! Seed-replicated experiment grids and their summaries.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::compression::CompressorKind;
use crate::engine::{run, Algorithm, RunRecord};
use crate::error::{Error, Result};

use super::config::{CompressionSection, Config, Resolved, RunMetadata};
use super::output::{read_metadata, read_records, write_metadata, write_records_file};

/// Offset between the seed ranges of consecutive cells.
pub const CELL_SEED_STRIDE: u64 = 10_007;

/// Number of points on the shared bit axis of the accuracy-vs-bits curves.
pub const CURVE_POINTS: usize = 101;

#[derive(Debug, Clone)]
pub struct ExperimentGrid {
    pub base: Config,
    pub epsilons: Vec<f64>,
    pub compressors: Vec<CompressorKind>,
    pub algorithms: Vec<Algorithm>,
    pub repeats: usize,
    pub out: PathBuf,
}

/// One combination of grid axes.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub index: usize,
    pub label: String,
    pub config: Config,
}

impl ExperimentGrid {
    /// Reads the `grid` section of `cfg`; empty axes fall back to the base config.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let g = cfg.grid.clone().ok_or_else(|| Error::Config("config has no [grid] section".into()))?;
        let compressors = g.compressors.iter().map(|c| c.parse()).collect::<Result<Vec<_>>>()?;
        let mut base = cfg.clone();
        base.grid = None;
        Ok(Self { base, epsilons: g.epsilons, compressors, algorithms: g.algorithms, repeats: g.repeats, out: g.out })
    }

    pub fn cells(&self) -> Result<Vec<GridCell>> {
        let epsilons = if self.epsilons.is_empty() { vec![self.base.privacy.epsilon] } else { self.epsilons.clone() };
        let algorithms =
            if self.algorithms.is_empty() { vec![self.base.run.algorithm] } else { self.algorithms.clone() };
        let compressors = if self.compressors.is_empty() {
            vec![self.base.compression.compressor_kind()?]
        } else {
            self.compressors.clone()
        };
        let fw = self.base.compression.float_width;
        let mut cells = Vec::new();
        for &eps in &epsilons {
            for &alg in &algorithms {
                // the baseline ignores the compressor axis
                let kinds: Vec<CompressorKind> = match alg {
                    Algorithm::DpCsgp => compressors.clone(),
                    Algorithm::ExactSgpBaseline => vec![CompressorKind::Identity],
                };
                for kind in kinds {
                    let mut config = self.base.clone();
                    config.privacy.epsilon = eps;
                    config.run.algorithm = alg;
                    config.compression = CompressionSection::from_kind(kind, fw);
                    let label = format!("{alg}|{kind}|eps={eps}");
                    cells.push(GridCell { index: cells.len(), label, config });
                }
            }
        }
        Ok(cells)
    }

    /// Seed of repeat `repeat` in cell `cell`.
    pub fn seed(&self, cell: usize, repeat: usize) -> u64 {
        self.base.run.seed + cell as u64 * CELL_SEED_STRIDE + repeat as u64
    }
}

/// Short content hash of a resolved config, seed included.
pub fn config_hash(cfg: &Config) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(&Sha256::digest(json.as_bytes())[..6])
}

fn with_seed(resolved: &Resolved, seed: u64) -> Resolved {
    let mut r = resolved.clone();
    r.engine.seed = seed;
    r.metadata.config.run.seed = seed;
    r
}

/// Runs a resolved config and writes `<stem>.csv` then `<stem>.json` into
/// `dir`. The JSON sidecar is written last and marks the run complete.
pub fn execute_to(dir: &Path, stem: &str, resolved: &Resolved) -> Result<(Vec<RunRecord>, RunMetadata)> {
    let outcome = run(resolved.engine.clone())?;
    let mut meta = resolved.metadata.clone();
    meta.failure = outcome.failure.as_ref().map(|e| e.to_string());
    write_records_file(&dir.join(format!("{stem}.csv")), &outcome.records)?;
    write_metadata(&dir.join(format!("{stem}.json")), &meta)?;
    Ok((outcome.records, meta))
}

/// What happened to each run of a grid.
#[derive(Debug, Clone, Default)]
pub struct GridReport {
    pub executed: usize,
    pub skipped: usize,
    pub failed: Vec<String>,
    pub summary: Summary,
}

/// Runs every cell and seed, skipping runs whose outputs already exist,
/// then writes `summary.csv` and `curves.csv` into the output directory.
pub fn run_grid(grid: &ExperimentGrid) -> Result<GridReport> {
    std::fs::create_dir_all(&grid.out)?;
    let cells = grid.cells()?;
    let resolved = cells
        .iter()
        .map(|c| {
            let mut r = c.config.resolve()?;
            r.metadata.cell = Some(c.label.clone());
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::new();
    for (cell, r) in cells.iter().zip(&resolved) {
        for rep in 0..grid.repeats {
            let job = with_seed(r, grid.seed(cell.index, rep));
            let stem = format!("cell{:03}_rep{rep:02}_{}", cell.index, config_hash(&job.metadata.config));
            jobs.push((stem, job));
        }
    }

    let results: Vec<(bool, Option<String>)> = jobs
        .par_iter()
        .map(|(stem, job)| {
            if grid.out.join(format!("{stem}.json")).exists() && grid.out.join(format!("{stem}.csv")).exists() {
                return (false, None);
            }
            match execute_to(&grid.out, stem, job) {
                Ok((_, meta)) => (true, meta.failure.map(|f| format!("{stem}: {f}"))),
                Err(e) => (true, Some(format!("{stem}: {e}"))),
            }
        })
        .collect();

    let summary = analyze(&grid.out)?;
    summary.write(&grid.out.join("summary.csv"), &grid.out.join("curves.csv"))?;
    Ok(GridReport {
        executed: results.iter().filter(|r| r.0).count(),
        skipped: results.iter().filter(|r| !r.0).count(),
        failed: results.into_iter().filter_map(|r| r.1).collect(),
        summary,
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub cell: String,
    pub runs: usize,
    pub failed: usize,
    pub final_loss_mean: f64,
    pub final_loss_std: f64,
    pub final_acc_mean: f64,
    pub final_acc_std: f64,
    pub final_grad_norm_sq_mean: f64,
    pub final_grad_norm_sq_std: f64,
    pub bits_cum_mean: f64,
    pub bits_cum_std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub cell: String,
    pub metric: String,
    pub bits: f64,
    pub mean: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub curves: Vec<CurvePoint>,
}

impl Summary {
    pub fn row(&self, cell: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.cell == cell)
    }

    pub fn write(&self, summary: &Path, curves: &Path) -> Result<()> {
        let to_err = |e: csv::Error| Error::Parse(e.to_string());
        let mut w = csv::Writer::from_path(summary).map_err(to_err)?;
        for r in &self.rows {
            w.serialize(r).map_err(to_err)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(curves).map_err(to_err)?;
        for p in &self.curves {
            w.serialize(p).map_err(to_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Piecewise-linear interpolation of `(x, y)` points sorted by `x`.
/// `None` outside the covered range.
pub fn interpolate(points: &[(f64, f64)], x: f64) -> Option<f64> {
    let first = points.first()?;
    let last = points.last()?;
    if x < first.0 || x > last.0 {
        return None;
    }
    let k = points.partition_point(|p| p.0 < x);
    if k < points.len() && points[k].0 == x {
        return Some(points[k].1);
    }
    let (x0, y0) = points[k - 1];
    let (x1, y1) = points[k];
    Some(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
}

struct LoadedRun {
    meta: RunMetadata,
    records: Vec<RunRecord>,
}

fn group_key(meta: &RunMetadata) -> String {
    meta.cell.clone().unwrap_or_else(|| {
        let mut cfg = meta.config.clone();
        cfg.run.seed = 0;
        format!(
            "{}|{}|eps={}|{}",
            cfg.run.algorithm,
            cfg.compression.compressor_kind().map(|k| k.to_string()).unwrap_or_default(),
            cfg.privacy.epsilon,
            config_hash(&cfg)
        )
    })
}

/// Aggregates every `<stem>.json` + `<stem>.csv` pair in `dir`.
pub fn analyze(dir: &Path) -> Result<Summary> {
    let mut stems: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json") && p.with_extension("csv").exists())
        .collect();
    stems.sort();

    let mut groups: BTreeMap<String, (usize, Vec<LoadedRun>)> = BTreeMap::new();
    for (order, path) in stems.iter().enumerate() {
        let meta = read_metadata(path)?;
        let records = read_records(&path.with_extension("csv"))?;
        let key = group_key(&meta);
        groups.entry(key).or_insert_with(|| (order, Vec::new())).1.push(LoadedRun { meta, records });
    }
    let mut groups: Vec<(String, (usize, Vec<LoadedRun>))> = groups.into_iter().collect();
    groups.sort_by_key(|g| g.1 .0);

    let mut summary = Summary::default();
    let max_bits = groups
        .iter()
        .flat_map(|g| g.1 .1.iter())
        .filter_map(|r| r.records.last().map(|l| l.bits_cum))
        .max()
        .unwrap_or(0) as f64;

    for (cell, (_, runs)) in &groups {
        let ok: Vec<&LoadedRun> = runs.iter().filter(|r| r.meta.failure.is_none() && !r.records.is_empty()).collect();
        let finals: Vec<&RunRecord> = ok.iter().filter_map(|r| r.records.last()).collect();
        let col = |f: &dyn Fn(&RunRecord) -> f64| mean_std(&finals.iter().map(|r| f(r)).collect::<Vec<_>>());
        let (loss_m, loss_s) = col(&|r| r.loss_avg);
        let (acc_m, acc_s) = col(&|r| r.test_acc.unwrap_or(f64::NAN));
        let (g_m, g_s) = col(&|r| r.grad_norm_sq_avg);
        let (b_m, b_s) = col(&|r| r.bits_cum as f64);
        summary.rows.push(SummaryRow {
            cell: cell.clone(),
            runs: runs.len(),
            failed: runs.len() - ok.len(),
            final_loss_mean: loss_m,
            final_loss_std: loss_s,
            final_acc_mean: acc_m,
            final_acc_std: acc_s,
            final_grad_norm_sq_mean: g_m,
            final_grad_norm_sq_std: g_s,
            bits_cum_mean: b_m,
            bits_cum_std: b_s,
        });

        let has_acc = ok.iter().all(|r| r.records.iter().all(|x| x.test_acc.is_some()));
        let metric = if has_acc { "test_acc" } else { "loss_avg" };
        let series: Vec<Vec<(f64, f64)>> = ok
            .iter()
            .map(|r| {
                r.records
                    .iter()
                    .map(|x| (x.bits_cum as f64, if has_acc { x.test_acc.unwrap_or(f64::NAN) } else { x.loss_avg }))
                    .collect()
            })
            .collect();
        if max_bits > 0.0 {
            for k in 0..CURVE_POINTS {
                let bits = max_bits * k as f64 / (CURVE_POINTS - 1) as f64;
                let vals: Vec<f64> = series.iter().filter_map(|s| interpolate(s, bits)).collect();
                if !vals.is_empty() {
                    summary.curves.push(CurvePoint {
                        cell: cell.clone(),
                        metric: metric.to_string(),
                        bits,
                        mean: vals.iter().sum::<f64>() / vals.len() as f64,
                        runs: vals.len(),
                    });
                }
            }
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation() {
        let pts = [(0.0, 0.0), (2.0, 1.0), (4.0, 5.0)];
        assert_eq!(interpolate(&pts, 1.0), Some(0.5));
        assert_eq!(interpolate(&pts, 2.0), Some(1.0));
        assert_eq!(interpolate(&pts, 3.0), Some(3.0));
        assert_eq!(interpolate(&pts, 4.0), Some(5.0));
        assert_eq!(interpolate(&pts, 4.5), None);
        assert_eq!(interpolate(&[], 0.0), None);
    }

    #[test]
    fn mean_and_std() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
