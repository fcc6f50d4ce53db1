//! CSV ingestion and output. Lines starting with `#` are comments; writers use
//! them to embed the run configuration.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cell, CellStatus, GridDataset};
use crate::error::{Error, Result};
use crate::predictor::Predictions;

/// Column layout of a dataset file.
///
/// Status assignment: with a `mask` column, `1` marks a test cell and `0` a
/// training cell (missing if it has no response). With a `truth` column, a
/// cell with a response trains, a cell with only truth is a test cell, and a
/// cell with neither is missing. Without either, cells lacking a response are
/// prediction targets with unknown truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub lon: String,
    pub lat: String,
    pub response: String,
    pub mask: Option<String>,
    pub truth: Option<String>,
    pub delimiter: char,
    /// Cell contents treated as a null response.
    pub null_values: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            lon: "lon".into(),
            lat: "lat".into(),
            response: "response".into(),
            mask: None,
            truth: None,
            delimiter: ',',
            null_values: vec!["".into(), "NA".into(), "NaN".into(), "nan".into()],
        }
    }
}

fn reader<R: Read>(r: R, delimiter: char, headers: bool) -> Result<csv::Reader<R>> {
    if !delimiter.is_ascii() {
        return Err(Error::Parameter(format!("delimiter {delimiter:?} must be a single ASCII character")));
    }
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter as u8)
        .has_headers(headers)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(r))
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line, message: format!("{other:?}") },
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .or_else(|| headers.iter().position(|h| h.eq_ignore_ascii_case(name)))
        .ok_or_else(|| Error::Structure(format!("column {name:?} not found in header {:?}", headers.iter().collect::<Vec<_>>())))
}

fn parse_coord(field: &str, name: &str, line: usize) -> Result<f64> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse { line, message: format!("{name} {field:?} is not a finite number") }),
    }
}

fn parse_nullable(field: &str, name: &str, line: usize, nulls: &[String]) -> Result<Option<f64>> {
    if nulls.iter().any(|n| n == field) {
        return Ok(None);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Parse { line, message: format!("{name} {field:?} is neither a number nor a null marker") }),
    }
}

fn parse_flag(field: &str, line: usize) -> Result<bool> {
    match field {
        "1" | "true" | "TRUE" => Ok(true),
        "0" | "false" | "FALSE" => Ok(false),
        _ => Err(Error::Parse { line, message: format!("mask value {field:?} is not 0 or 1") }),
    }
}

/// Sorted distinct values, merging those closer than a relative tolerance.
fn axis(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-9 * scale;
    let mut out: Vec<f64> = Vec::new();
    for x in v {
        if out.last().is_none_or(|last| x - last > tol) {
            out.push(x);
        }
    }
    out
}

fn axis_position(axis: &[f64], x: f64) -> usize {
    let i = axis.partition_point(|a| *a < x);
    match (i.checked_sub(1), axis.get(i)) {
        (Some(p), Some(&next)) if (x - axis[p]).abs() < (next - x).abs() => p,
        (Some(p), None) => p,
        _ => i,
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<GridDataset> {
    let file = File::open(path)?;
    load_csv_from(file, schema, &path.display().to_string())
}

/// Parse a dataset from any reader; the grid is inferred from the distinct
/// longitudes (columns) and latitudes (rows), which must form a complete
/// rectangle with one row per cell.
pub fn load_csv_from<R: Read>(r: R, schema: &CsvSchema, label: &str) -> Result<GridDataset> {
    let mut rdr = reader(r, schema.delimiter, true)?;
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let lon_col = column(&headers, &schema.lon)?;
    let lat_col = column(&headers, &schema.lat)?;
    let resp_col = column(&headers, &schema.response)?;
    let mask_col = schema.mask.as_deref().map(|m| column(&headers, m)).transpose()?;
    let truth_col = schema.truth.as_deref().map(|t| column(&headers, t)).transpose()?;

    let mut parsed = Vec::new();
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record).map_err(csv_error)? {
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let lon = parse_coord(&record[lon_col], &schema.lon, line)?;
        let lat = parse_coord(&record[lat_col], &schema.lat, line)?;
        let response = parse_nullable(&record[resp_col], &schema.response, line, &schema.null_values)?;
        let truth = match truth_col {
            Some(c) => parse_nullable(&record[c], &headers[c], line, &schema.null_values)?,
            None => None,
        };
        let cell = match (mask_col, truth_col) {
            (Some(c), _) => {
                if parse_flag(&record[c], line)? {
                    Cell { lon, lat, response: response.or(truth), status: CellStatus::Test }
                } else {
                    let status = if response.is_some() { CellStatus::Train } else { CellStatus::Missing };
                    Cell { lon, lat, response, status }
                }
            }
            (None, Some(_)) => match (response, truth) {
                (Some(_), _) => Cell { lon, lat, response, status: CellStatus::Train },
                (None, Some(_)) => Cell { lon, lat, response: truth, status: CellStatus::Test },
                (None, None) => Cell { lon, lat, response: None, status: CellStatus::Missing },
            },
            (None, None) => {
                let status = if response.is_some() { CellStatus::Train } else { CellStatus::Test };
                Cell { lon, lat, response, status }
            }
        };
        parsed.push((line, cell));
    }
    if parsed.is_empty() {
        return Err(Error::Structure("dataset has no rows".into()));
    }

    let lons = axis(&parsed.iter().map(|(_, c)| c.lon).collect::<Vec<_>>());
    let lats = axis(&parsed.iter().map(|(_, c)| c.lat).collect::<Vec<_>>());
    let (rows, cols) = (lats.len(), lons.len());
    if rows * cols != parsed.len() {
        return Err(Error::Structure(format!(
            "{} rows do not form a complete {rows}x{cols} grid of distinct latitudes and longitudes",
            parsed.len()
        )));
    }
    let mut cells: Vec<Option<Cell>> = vec![None; rows * cols];
    for (line, cell) in parsed {
        let slot = axis_position(&lats, cell.lat) * cols + axis_position(&lons, cell.lon);
        if cells[slot].replace(cell).is_some() {
            return Err(Error::Structure(format!("line {line} repeats grid cell ({}, {})", cell.lon, cell.lat)));
        }
    }
    let cells = cells.into_iter().map(|c| c.expect("complete grid")).collect();
    GridDataset::new(rows, cols, cells, label)
}

/// Row-major 0/1 flags for a `rows x cols` grid, any line layout, no header.
pub fn read_mask(path: &Path, rows: usize, cols: usize) -> Result<Vec<bool>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(File::open(path)?);
    let mut flags = Vec::with_capacity(rows * cols);
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        for f in rec.iter().filter(|f| !f.is_empty()) {
            flags.push(parse_flag(f, line)?);
        }
    }
    if flags.len() != rows * cols {
        return Err(Error::Structure(format!("mask has {} entries for a {rows}x{cols} grid", flags.len())));
    }
    Ok(flags)
}

/// One held-out truth value with its location in original coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub lon: f64,
    pub lat: f64,
    pub value: f64,
}

/// Read a `lon,lat,truth` file.
pub fn read_truth<R: Read>(r: R) -> Result<Vec<TruthRow>> {
    let mut rdr = reader(r, ',', true)?;
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let (lon, lat, truth) = (column(&headers, "lon")?, column(&headers, "lat")?, column(&headers, "truth")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        out.push(TruthRow {
            lon: parse_coord(&rec[lon], "lon", line)?,
            lat: parse_coord(&rec[lat], "lat", line)?,
            value: parse_coord(&rec[truth], "truth", line)?,
        });
    }
    Ok(out)
}

fn write_comments<W: Write>(w: &mut W, comments: &str) -> Result<()> {
    for line in comments.lines() {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

fn flush<W: Write>(wtr: csv::Writer<W>) -> Result<()> {
    wtr.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?.flush()?;
    Ok(())
}

fn write_row<W: Write>(wtr: &mut csv::Writer<W>, fields: &[String]) -> Result<()> {
    wtr.write_record(fields).map_err(csv_error)
}

pub fn write_truth<W: Write>(mut w: W, rows: &[TruthRow], comments: &str) -> Result<()> {
    write_comments(&mut w, comments)?;
    let mut wtr = csv_writer(w);
    write_row(&mut wtr, &["lon".into(), "lat".into(), "truth".into()])?;
    for r in rows {
        write_row(&mut wtr, &[r.lon.to_string(), r.lat.to_string(), r.value.to_string()])?;
    }
    flush(wtr)
}

/// Write `lon,lat,response,truth` in grid order. Test cells carry their truth
/// only in the `truth` column, so reloading with `truth = "truth"` restores
/// the statuses.
pub fn write_dataset_csv<W: Write>(mut w: W, dataset: &GridDataset, comments: &str) -> Result<()> {
    write_comments(&mut w, comments)?;
    let mut wtr = csv_writer(w);
    write_row(&mut wtr, &["lon".into(), "lat".into(), "response".into(), "truth".into()])?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in dataset.cells() {
        let (resp, truth) = match c.status {
            CellStatus::Train => (c.response, c.response),
            CellStatus::Test => (None, c.response),
            CellStatus::Missing => (None, None),
        };
        write_row(&mut wtr, &[c.lon.to_string(), c.lat.to_string(), fmt(resp), fmt(truth)])?;
    }
    flush(wtr)
}

/// Write `lon,lat,mean,variance,lo,hi`, one row per prediction.
pub fn write_predictions<W: Write>(mut w: W, locations: &[(f64, f64)], preds: &Predictions, comments: &str) -> Result<()> {
    if locations.len() != preds.len() {
        return Err(Error::Alignment(format!("{} locations for {} predictions", locations.len(), preds.len())));
    }
    write_comments(&mut w, comments)?;
    let mut wtr = csv_writer(w);
    write_row(&mut wtr, &["lon", "lat", "mean", "variance", "lo", "hi"].map(String::from))?;
    for ((lon, lat), p) in locations.iter().zip(&preds.items) {
        write_row(
            &mut wtr,
            &[lon.to_string(), lat.to_string(), p.mean.to_string(), p.variance.to_string(), p.lo.to_string(), p.hi.to_string()],
        )?;
    }
    flush(wtr)
}

/// A parsed predictions file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionRows {
    pub lon: Vec<f64>,
    pub lat: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

pub fn read_predictions<R: Read>(r: R) -> Result<PredictionRows> {
    let mut rdr = reader(r, ',', true)?;
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let names = ["lon", "lat", "mean", "variance", "lo", "hi"];
    let cols: Vec<usize> = names.iter().map(|n| column(&headers, n)).collect::<Result<_>>()?;
    let mut out = PredictionRows::default();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let v: Vec<f64> = cols.iter().zip(names).map(|(&c, n)| parse_coord(&rec[c], n, line)).collect::<Result<_>>()?;
        out.lon.push(v[0]);
        out.lat.push(v[1]);
        out.mean.push(v[2]);
        out.variance.push(v[3]);
        out.lo.push(v[4]);
        out.hi.push(v[5]);
    }
    Ok(out)
}
