//! Per-run CSV files and JSON metadata sidecars.

use std::io::Write;
use std::path::Path;

use crate::engine::RunRecord;
use crate::error::{Error, Result};

use super::config::RunMetadata;

pub const CSV_HEADER: [&str; 8] =
    ["t", "grad_norm_sq_avg", "consensus_err", "U_t", "bits_cum", "bits_paper_convention", "loss_avg", "test_acc"];

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

pub fn write_records<W: Write>(out: W, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            r.grad_norm_sq_avg.to_string(),
            r.consensus_err.to_string(),
            r.u_t.to_string(),
            r.bits_cum.to_string(),
            r.bits_paper_convention.to_string(),
            r.loss_avg.to_string(),
            r.test_acc.map_or_else(String::new, |a| a.to_string()),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_file(path: &Path, records: &[RunRecord]) -> Result<()> {
    write_records(std::fs::File::create(path)?, records)
}

/// Reads a run CSV back. Diagnostic fields that are not written
/// (`weight_sum`, `average_identity_residual`) come back as NaN.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(Error::Parse(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let f = |k: usize| -> Result<f64> {
            field(k).parse().map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
        };
        let u = |k: usize| -> Result<u64> {
            field(k).parse().map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
        };
        out.push(RunRecord {
            t: u(0)? as usize,
            grad_norm_sq_avg: f(1)?,
            consensus_err: f(2)?,
            u_t: f(3)?,
            bits_cum: u(4)?,
            bits_paper_convention: u(5)?,
            loss_avg: f(6)?,
            test_acc: if field(7).is_empty() { None } else { Some(f(7)?) },
            weight_sum: f64::NAN,
            average_identity_residual: f64::NAN,
        });
    }
    Ok(out)
}

pub fn write_metadata(path: &Path, meta: &RunMetadata) -> Result<()> {
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_metadata(path: &Path) -> Result<RunMetadata> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
