//! CSV and JSON interchange formats.
//!
//! Design CSV: header `row,col,y,x1,...,xp`; row and col are arbitrary
//! strings, y is exactly 0 or 1, features are decimal floats. The
//! `intercept` ingestion flag prepends an all-ones column that never
//! appears in the file. Floats are written in shortest round-trip form,
//! so save followed by load is bit-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::covariance::CovReport;
use crate::design::{validate_and_compact, CrossedDesign, LevelMaps, RawObservation};
use crate::error::{Error, Result};
use crate::schall::OuterIteration;

/// Parsed design plus the metadata needed to write results back out.
pub struct IngestedDesign {
    pub design: CrossedDesign,
    pub level_maps: LevelMaps,
    /// One name per design column, "intercept" first when prepended.
    pub feature_names: Vec<String>,
}

/// Reads a design CSV, optionally prepending the intercept column.
pub fn read_design_csv(path: &Path, intercept: bool) -> Result<IngestedDesign> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 3
        || headers.get(0) != Some("row")
        || headers.get(1) != Some("col")
        || headers.get(2) != Some("y")
    {
        return Err(Error::InvalidConfig(format!(
            "{}: header must start with row,col,y",
            path.display()
        )));
    }
    let mut feature_names: Vec<String> = Vec::new();
    if intercept {
        feature_names.push("intercept".into());
    }
    feature_names.extend(headers.iter().skip(3).map(String::from));

    let mut raw = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::InvalidConfig(format!(
                "{}: record {} has {} fields, expected {}",
                path.display(),
                line + 2,
                record.len(),
                headers.len()
            )));
        }
        let parse = |idx: usize| -> Result<f64> {
            record[idx].trim().parse::<f64>().map_err(|_| {
                Error::InvalidConfig(format!(
                    "{}: record {}: '{}' is not a number",
                    path.display(),
                    line + 2,
                    &record[idx]
                ))
            })
        };
        let mut features = Vec::with_capacity(feature_names.len());
        if intercept {
            features.push(1.0);
        }
        for idx in 3..headers.len() {
            features.push(parse(idx)?);
        }
        raw.push(RawObservation {
            row_key: record[0].to_string(),
            col_key: record[1].to_string(),
            y: parse(2)?,
            features,
        });
    }
    let (design, level_maps) = validate_and_compact(&raw)?;
    Ok(IngestedDesign { design, level_maps, feature_names })
}

/// Writes a design back to CSV. `skip_leading_features` drops that many
/// leading columns (1 to omit a prepended intercept).
pub fn write_design_csv(
    path: &Path,
    design: &CrossedDesign,
    maps: &LevelMaps,
    skip_leading_features: usize,
) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    let p = design.n_features();
    write!(out, "row,col,y")?;
    for q in 0..p - skip_leading_features {
        write!(out, ",x{}", q + 1)?;
    }
    writeln!(out)?;
    for n in 0..design.n_obs() {
        write!(
            out,
            "{},{},{}",
            maps.row_levels[design.row_of()[n] as usize],
            maps.col_levels[design.col_of()[n] as usize],
            design.y()[n]
        )?;
        for q in skip_leading_features..p {
            write!(out, ",{}", design.x_row(n)[q])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// One estimated coefficient with its sandwich standard error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
}

/// Serialized result of a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOutput {
    pub converged: bool,
    pub outer_iterations: usize,
    pub epsilon: f64,
    pub coefficients: Vec<CoefficientEstimate>,
    pub sigma2_a: f64,
    pub sigma2_b: f64,
    /// Dispersion as used in the weights (clamped below).
    pub phi: f64,
    /// Dispersion as estimated; a lack-of-fit indicator.
    pub phi_unclamped: f64,
    pub trace: Vec<OuterIteration>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<CovReport>,
}

/// Writes a value as pretty JSON with a trailing newline. The encoding is
/// deterministic (struct field order, shortest-round-trip floats), so
/// deserializing and re-serializing reproduces the bytes.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut data = serde_json::to_vec_pretty(value)?;
    data.push(b'\n');
    std::fs::write(path, data)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let data = std::fs::read(path)?;
    Ok(serde_json::from_slice(&data)?)
}

/// Writes benchmark records as `fitter,S,N,metric,value,replicate`.
pub fn write_bench_csv(path: &Path, records: &[crate::simulate::BenchRecord]) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "fitter,S,N,metric,value,replicate")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.fitter, r.s, r.n, r.metric, r.value, r.replicate
        )?;
    }
    out.flush()?;
    Ok(())
}
