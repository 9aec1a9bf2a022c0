//! CSV sample ingestion and numeric artifact emission.

use std::path::Path;

use anyhow::{bail, Context, Result};
use sbridge_core::SampleSet;

/// A parsed sample file plus how many non-finite rows were dropped.
#[derive(Debug)]
pub struct IngestedSamples {
    pub samples: SampleSet,
    pub skipped: usize,
    pub columns: Vec<String>,
}

/// Parse a header-first CSV of points. Rows with non-finite entries are
/// skipped (the count is reported in the manifest); rows with the wrong
/// column count are hard errors naming the line.
pub fn ingest_samples(path: &Path) -> Result<IngestedSamples> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let columns: Vec<String> = reader
        .headers()
        .with_context(|| format!("cannot read header of {}", path.display()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let dim = columns.len();
    if dim == 0 {
        bail!("{}: empty header", path.display());
    }
    let mut samples = SampleSet::new(dim);
    let mut skipped = 0usize;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header occupies line 1
        let record = record.with_context(|| format!("{} line {line}", path.display()))?;
        if record.len() != dim {
            bail!(
                "{} line {line}: {} fields, expected {dim}",
                path.display(),
                record.len()
            );
        }
        let mut row = Vec::with_capacity(dim);
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .with_context(|| format!("{} line {line}: bad number `{field}`", path.display()))?;
            row.push(v);
        }
        if row.iter().all(|v| v.is_finite()) {
            samples.push(&row);
        } else {
            skipped += 1;
        }
    }
    if samples.is_empty() {
        bail!("{}: no usable rows", path.display());
    }
    Ok(IngestedSamples {
        samples,
        skipped,
        columns,
    })
}

/// 17 significant digits: enough for an exact `f64` text round-trip.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a CSV with the given header and rows of numbers.
pub fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row.iter().map(|&v| fmt(v)))?;
    }
    writer.flush()?;
    Ok(())
}

/// Emit a sample set with coordinate-named columns.
#[cfg(test)]
fn write_samples(path: &Path, samples: &SampleSet, columns: &[String]) -> Result<()> {
    let header: Vec<&str> = columns.iter().map(|c| c.as_str()).collect();
    write_csv(path, &header, samples.iter().map(|p| p.to_vec()))
}
