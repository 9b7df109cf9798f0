//! CSV and JSON files read and written by the command-line front end.
//!
//! All tables have a header row and use `,` separators and `\n` line
//! endings. Floats are written in shortest round-trip form, so re-reading a
//! file reproduces the values bit for bit. JSON documents carry a
//! `schema_version` field.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RowLabel;
use crate::isotonic::PartialOrder;
use crate::problems::Dataset;
use crate::qp::FitResult;

pub const SCHEMA_VERSION: u32 = 1;

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?)
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

fn parse_f64(field: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::InvalidInput(format!("line {line}, column {column}: not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(Error::InvalidInput(format!("line {line}, column {column}: non-finite value")));
    }
    Ok(v)
}

/// A numeric table: header names and row-major values.
fn read_numeric(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let row = rec
            .iter()
            .zip(&header)
            .map(|(f, h)| parse_f64(f, line, h))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Observations with a `y` column; every other column is a design
/// coordinate, in file order.
pub fn read_dataset(path: &Path, sigma: Option<f64>) -> Result<Dataset> {
    let (header, rows) = read_numeric(path)?;
    let y_col = header
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| Error::InvalidInput(format!("{}: no `y` column", path.display())))?;
    let n = rows.len();
    let d = header.len() - 1;
    if n == 0 {
        return Err(Error::InvalidInput(format!("{}: no observations", path.display())));
    }
    let x_cols: Vec<usize> = (0..header.len()).filter(|&c| c != y_col).collect();
    let x = if d == 0 {
        // Without design columns, observations are indexed 1..n.
        DMatrix::from_fn(n, 1, |i, _| (i + 1) as f64)
    } else {
        DMatrix::from_fn(n, d, |i, j| rows[i][x_cols[j]])
    };
    let y = DVector::from_fn(n, |i, _| rows[i][y_col]);
    Dataset::new(x, y, sigma)
}

#[derive(Debug, Deserialize)]
struct EdgeRecord {
    lower: usize,
    upper: usize,
}

/// Order edges `lower,upper` meaning `θ_lower ≤ θ_upper` (0-based).
pub fn read_edges(path: &Path, n: usize) -> Result<PartialOrder> {
    let mut rdr = reader(path)?;
    let mut edges = Vec::new();
    for rec in rdr.deserialize() {
        let e: EdgeRecord = rec?;
        edges.push((e.lower, e.upper));
    }
    PartialOrder::new(n, edges)
}

pub fn write_edges(path: &Path, order: &PartialOrder) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["lower", "upper"])?;
    for &(i, j) in order.edges() {
        w.write_record([i.to_string(), j.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// A dense matrix, one row per record, after a header row.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let (header, rows) = read_numeric(path)?;
    Ok(DMatrix::from_fn(rows.len(), header.len(), |i, j| rows[i][j]))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>, prefix: &str) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record((1..=m.ncols()).map(|j| format!("{prefix}{j}")))?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = writer(path)?;
    let d = data.d();
    let mut header: Vec<String> = (1..=d).map(|j| format!("x_{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.y[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Fitted values read back from a fit table.
#[derive(Debug, Clone, PartialEq)]
pub struct FitColumns {
    pub y: DVector<f64>,
    pub theta: DVector<f64>,
    /// Auxiliary blocks, concatenated in observation order.
    pub xi: Option<DVector<f64>>,
}

/// `index,y,theta_hat` and, when the auxiliary vector splits into one block
/// per observation, `xi_1..xi_k`. Other auxiliary vectors are written with
/// [`write_coefficients`].
pub fn write_fit(path: &Path, y: &DVector<f64>, fit: &FitResult) -> Result<()> {
    let n = y.len();
    let blocks = fit
        .xi_hat
        .as_ref()
        .filter(|xi| !xi.is_empty() && xi.len() % n == 0)
        .map(|xi| (xi, xi.len() / n));
    let mut w = writer(path)?;
    let mut header = vec!["index".to_string(), "y".into(), "theta_hat".into()];
    if let Some((_, k)) = blocks {
        header.extend((1..=k).map(|j| format!("xi_{j}")));
    }
    w.write_record(&header)?;
    for i in 0..n {
        let mut rec = vec![i.to_string(), y[i].to_string(), fit.theta_hat[i].to_string()];
        if let Some((xi, k)) = blocks {
            rec.extend((0..k).map(|j| xi[i * k + j].to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Whether [`write_fit`] stores the auxiliary vector inside the fit table.
pub fn xi_in_fit_table(n: usize, fit: &FitResult) -> bool {
    fit.xi_hat.as_ref().is_some_and(|xi| !xi.is_empty() && xi.len() % n == 0)
}

pub fn read_fit(path: &Path) -> Result<FitColumns> {
    let (header, rows) = read_numeric(path)?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("{}: no `{name}` column", path.display())))
    };
    let (yc, tc) = (col("y")?, col("theta_hat")?);
    let xi_cols: Vec<usize> = (0..header.len()).filter(|&c| header[c].starts_with("xi_")).collect();
    let n = rows.len();
    let y = DVector::from_fn(n, |i, _| rows[i][yc]);
    let theta = DVector::from_fn(n, |i, _| rows[i][tc]);
    let xi = (!xi_cols.is_empty()).then(|| {
        DVector::from_iterator(n * xi_cols.len(), rows.iter().flat_map(|r| xi_cols.iter().map(move |&c| r[c])))
    });
    Ok(FitColumns { y, theta, xi })
}

#[derive(Serialize, Deserialize)]
struct CoefficientRecord {
    index: usize,
    value: f64,
}

pub fn write_coefficients(path: &Path, xi: &DVector<f64>) -> Result<()> {
    let mut w = writer(path)?;
    for (index, &value) in xi.iter().enumerate() {
        w.serialize(CoefficientRecord { index, value })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coefficients(path: &Path) -> Result<DVector<f64>> {
    let mut rdr = reader(path)?;
    let mut values = Vec::new();
    for (k, rec) in rdr.deserialize().enumerate() {
        let r: CoefficientRecord = rec?;
        if r.index != k {
            return Err(Error::InvalidInput(format!("coefficient index {} out of order", r.index)));
        }
        values.push(r.value);
    }
    Ok(DVector::from_vec(values))
}

/// `row,label,slack,dual` for every active row. Slack is `c_i − ⟨row_i, point⟩`.
pub fn write_active_set(
    path: &Path,
    fit: &FitResult,
    residuals: &DVector<f64>,
    labels: Option<&[RowLabel]>,
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["row", "label", "slack", "dual"])?;
    for &i in &fit.active.indices {
        let label = labels.map_or_else(|| format!("row({i})"), |l| l[i].to_string());
        let dual = fit.duals.get(i).copied().unwrap_or(0.0);
        w.write_record([i.to_string(), label, (0.0 - residuals[i]).to_string(), dual.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One serializable record per row.
pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = reader(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty-printed JSON object with `schema_version` first.
pub fn write_json<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(
        &mut w,
        &Versioned {
            schema_version: SCHEMA_VERSION,
            body,
        },
    )?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
