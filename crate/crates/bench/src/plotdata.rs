//! Two-column `(t, value)` export of one metric from a run CSV.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;

use crate::output::{fmt_float, CSV_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Transform {
    None,
    Log10,
    Ln,
}

/// A problem with the request itself (as opposed to an I/O failure).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Writes `t,<metric>` rows, keeping every `stride`-th data row. Rows with an
/// empty value, or a non-positive value under a log transform, are skipped.
pub fn export(
    csv_path: &Path,
    metric: &str,
    transform: Transform,
    stride: usize,
    out: &mut dyn Write,
) -> Result<usize> {
    if stride == 0 {
        bail!(UsageError("stride must be at least 1".into()));
    }
    let mut reader = csv::Reader::from_path(csv_path)
        .with_context(|| format!("opening {}", csv_path.display()))?;
    let headers = reader.headers()?.clone();
    let col = match headers
        .iter()
        .position(|h| h == metric)
        .filter(|_| metric != "t")
    {
        Some(c) => c,
        None => {
            let available: Vec<_> = CSV_HEADER.iter().filter(|h| **h != "t").copied().collect();
            bail!(UsageError(format!(
                "unknown metric '{metric}'; available: {}",
                available.join(", ")
            )));
        }
    };
    let mut rows = Vec::new();
    let mut any_value = false;
    let mut skipped = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let raw = rec.get(col).unwrap_or("");
        if raw.is_empty() {
            continue;
        }
        any_value = true;
        if i % stride != 0 {
            continue;
        }
        let v: f64 = raw
            .parse()
            .with_context(|| format!("row {}: bad value '{raw}'", i + 1))?;
        let v = match transform {
            Transform::None => v,
            Transform::Log10 | Transform::Ln if v.is_nan() || v <= 0.0 => {
                skipped += 1;
                continue;
            }
            Transform::Log10 => v.log10(),
            Transform::Ln => v.ln(),
        };
        rows.push((rec.get(0).unwrap_or("").to_string(), v));
    }
    if !any_value {
        bail!(UsageError(format!(
            "column '{metric}' is empty in this run"
        )));
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} non-positive values under the log transform");
    }
    writeln!(out, "t,{metric}")?;
    for (t, v) in &rows {
        writeln!(out, "{t},{}", fmt_float(*v))?;
    }
    Ok(rows.len())
}
