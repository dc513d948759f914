//! CSV input and output for panels, schemas and result tables.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::transform::{apply_transform, build_target, remove_outliers, TransformCode};

/// Seventeen significant digits; parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn parse_cell(path: &Path, cell: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| {
        parse_err(
            path,
            format!("row {row}, column {col}: '{cell}' is not a number"),
        )
    })?;
    if !v.is_finite() {
        return Err(parse_err(
            path,
            format!("row {row}, column {col}: value is not finite"),
        ));
    }
    Ok(v)
}

/// Reads a numeric CSV with a header row.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = open(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(path, e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                format!(
                    "row {} has {} fields, expected {}",
                    i + 1,
                    rec.len(),
                    header.len()
                ),
            ));
        }
        for (cell, name) in rec.iter().zip(&header) {
            values.push(parse_cell(path, cell, i + 1, name)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(path, "no data rows"));
    }
    Ok((
        header.clone(),
        DMatrix::from_row_slice(rows, header.len(), &values),
    ))
}

pub fn write_matrix_csv(path: &Path, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    let rows: Vec<Vec<String>> = (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| format_float(*v)).collect())
        .collect();
    write_rows(path, header, &rows)
}

pub fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(header).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => parse_err(path, format!("{other:?}")),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e.to_string()))?;
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| Error::io(path, e))
}

/// Dated panel: first CSV column holds date strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub dates: Vec<String>,
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

impl Panel {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.values.column(j).iter().copied().collect())
    }
}

pub fn read_panel(path: &Path) -> Result<Panel> {
    let mut rdr = open(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(path, e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    if header.len() < 2 {
        return Err(parse_err(
            path,
            "panel needs a date column and at least one series",
        ));
    }
    let names = header[1..].to_vec();
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                format!(
                    "row {} has {} fields, expected {}",
                    i + 1,
                    rec.len(),
                    header.len()
                ),
            ));
        }
        dates.push(rec[0].to_string());
        for (cell, name) in rec.iter().skip(1).zip(&names) {
            values.push(parse_cell(path, cell, i + 1, name)?);
        }
    }
    if dates.is_empty() {
        return Err(parse_err(path, "no data rows"));
    }
    let values = DMatrix::from_row_slice(dates.len(), names.len(), &values);
    Ok(Panel {
        dates,
        names,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaEntry {
    pub column: String,
    pub code: TransformCode,
    /// Whether the series enters the factor extraction.
    pub factor: bool,
}

#[derive(Deserialize)]
struct SchemaRow {
    column: String,
    code: u8,
    factor: u8,
}

/// Reads `column,code,factor` rows; `factor` is 0 or 1.
pub fn read_schema(path: &Path) -> Result<Vec<SchemaEntry>> {
    let mut rdr = open(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<SchemaRow>().enumerate() {
        let row = row.map_err(|e| parse_err(path, format!("row {}: {e}", i + 1)))?;
        let code = TransformCode::try_from(row.code)
            .map_err(|e| parse_err(path, format!("row {}: {e}", i + 1)))?;
        if row.factor > 1 {
            return Err(parse_err(
                path,
                format!("row {}: factor flag must be 0 or 1", i + 1),
            ));
        }
        out.push(SchemaEntry {
            column: row.column,
            code,
            factor: row.factor == 1,
        });
    }
    Ok(out)
}

/// Stationary target and predictors on a common date range.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPanel {
    pub dates: Vec<String>,
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub factor_flags: Vec<bool>,
}

impl PreparedPanel {
    /// Columns flagged for factor extraction.
    pub fn factor_block(&self) -> DMatrix<f64> {
        let cols: Vec<usize> = (0..self.x.ncols())
            .filter(|j| self.factor_flags[*j])
            .collect();
        DMatrix::from_fn(self.x.nrows(), cols.len(), |i, c| self.x[(i, cols[c])])
    }
}

/// Transforms every schema column, cleans outliers in the predictors and
/// trims all series to the latest common start.
///
/// With `price_target` the target column is read as a price level and
/// replaced by `400 ln(P_t / P_{t-1})`; otherwise its schema code applies.
pub fn prepare_panel(
    panel: &Panel,
    schema: &[SchemaEntry],
    target: &str,
    price_target: bool,
    kappa: f64,
) -> Result<PreparedPanel> {
    let raw_target = panel
        .column(target)
        .ok_or_else(|| Error::invalid(format!("target column '{target}' not in panel")))?;
    let target_code = schema.iter().find(|e| e.column == target).map(|e| e.code);
    let (y, y_offset) = if price_target {
        (build_target(&raw_target, 1)?, 1)
    } else {
        let code = target_code.unwrap_or(TransformCode::Level);
        (apply_transform(&raw_target, code)?, code.order())
    };

    let mut series = Vec::new();
    for entry in schema.iter().filter(|e| e.column != target) {
        let raw = panel.column(&entry.column).ok_or_else(|| {
            Error::invalid(format!("schema column '{}' not in panel", entry.column))
        })?;
        let transformed = apply_transform(&raw, entry.code)
            .map_err(|e| Error::invalid(format!("column '{}': {e}", entry.column)))?;
        let cleaned = remove_outliers(&transformed, kappa)
            .map_err(|e| Error::invalid(format!("column '{}': {e}", entry.column)))?;
        series.push((entry, cleaned, entry.code.order()));
    }

    let start = series
        .iter()
        .map(|s| s.2)
        .chain(std::iter::once(y_offset))
        .max()
        .unwrap_or(0);
    let n = panel.dates.len() - start;
    let x = DMatrix::from_fn(n, series.len(), |i, j| {
        let (_, s, order) = &series[j];
        s[i + start - order]
    });
    Ok(PreparedPanel {
        dates: panel.dates[start..].to_vec(),
        y: y[start - y_offset..].to_vec(),
        x,
        names: series.iter().map(|s| s.0.column.clone()).collect(),
        factor_flags: series.iter().map(|s| s.0.factor).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 0.0] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(format_float(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn panel_preparation_aligns() {
        let dir = tempfile::tempdir().unwrap();
        let panel_path = dir.path().join("panel.csv");
        let mut text = String::from("date,P,a,b\n");
        for t in 0..12 {
            let tf = t as f64;
            text.push_str(&format!(
                "q{t},{},{},{}\n",
                100.0 * 1.01f64.powf(tf),
                tf.sin(),
                10.0 + tf
            ));
        }
        std::fs::write(&panel_path, text).unwrap();
        let schema_path = dir.path().join("schema.csv");
        std::fs::write(&schema_path, "column,code,factor\nP,5,0\na,1,1\nb,3,0\n").unwrap();
        let panel = read_panel(&panel_path).unwrap();
        let schema = read_schema(&schema_path).unwrap();
        let prep = prepare_panel(&panel, &schema, "P", true, 4.5).unwrap();
        assert_eq!(prep.y.len(), 10);
        assert_eq!(prep.dates[0], "q2");
        assert_eq!(prep.x.ncols(), 2);
        assert!((prep.y[0] - 400.0 * 1.01f64.ln()).abs() < 1e-9);
        assert_eq!(prep.x[(0, 0)], 2f64.sin());
        assert_eq!(prep.x[(0, 1)], 0.0);
        assert_eq!(prep.factor_block().ncols(), 1);
        assert!(prepare_panel(&panel, &schema, "missing", true, 4.5).is_err());
    }

    #[test]
    fn bad_cells_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "a,b\n1,2\n3,x\n").unwrap();
        let err = read_matrix_csv(&p).unwrap_err();
        assert!(err.to_string().contains("row 2, column b"), "{err}");
        assert!(matches!(
            read_matrix_csv(&dir.path().join("none.csv")),
            Err(Error::Io { .. })
        ));
    }
}
