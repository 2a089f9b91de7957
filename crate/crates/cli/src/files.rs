//! Input parsing and atomic output.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gmwb_core::model::{ParameterPoint, PREDICTOR_COUNT, PREDICTOR_NAMES};
use serde::de::DeserializeOwned;

pub const VALUE_COLUMN: &str = "value";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "NaN".to_string()
    }
}

/// Writes `contents` to a sibling temporary file and renames it over `path`,
/// so the destination is either complete or untouched.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| e.error)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One CSV row: the eleven predictors and an optional trailing value.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub point: ParameterPoint,
    pub value: Option<f64>,
}

pub fn data_header(last: &str) -> String {
    let mut h = PREDICTOR_NAMES.join(",");
    h.push(',');
    h.push_str(last);
    h
}

pub fn render_rows<'a>(last: &str, rows: impl Iterator<Item = (&'a ParameterPoint, f64)>) -> String {
    let mut out = data_header(last);
    out.push('\n');
    for (p, v) in rows {
        for x in p.to_array() {
            out.push_str(&fmt17(x));
            out.push(',');
        }
        out.push_str(&fmt17(v));
        out.push('\n');
    }
    out
}

/// Reads a predictor CSV. The value column is required when `need_value`.
pub fn read_rows(path: &Path, need_value: bool) -> Result<Vec<Row>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let has_value = names.len() == PREDICTOR_COUNT + 1 && names[PREDICTOR_COUNT] == VALUE_COLUMN;
    if names.len() < PREDICTOR_COUNT || names[..PREDICTOR_COUNT] != PREDICTOR_NAMES || (names.len() > PREDICTOR_COUNT && !has_value) {
        bail!(
            "{}: header must be `{}`",
            path.display(),
            data_header(VALUE_COLUMN)
        );
    }
    if need_value && !has_value {
        bail!("{}: missing `{VALUE_COLUMN}` column", path.display());
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        let nums = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .with_context(|| format!("{}: row {} has a non-numeric field", path.display(), i + 1))?;
        rows.push(Row {
            point: ParameterPoint::from_slice(&nums[..PREDICTOR_COUNT]),
            value: has_value.then(|| nums[PREDICTOR_COUNT]),
        });
    }
    Ok(rows)
}
