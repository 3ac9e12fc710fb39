//! CSV input and CSV/JSON output for the command-line tool.
//!
//! Observation files have the header `x1,...,xd,z`; query files `x1,...,xd`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bench::{BenchRow, CSV_HEADER};
use crate::kernels::Point;
use crate::kriging::Prediction;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{path}: {message}")]
    Header { path: PathBuf, message: String },
    #[error("writing output: {0}")]
    Write(String),
}

/// Observations read from a CSV file. `dim` is `None` for a file with no
/// header.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub dim: Option<usize>,
    pub points: Vec<Point>,
    pub values: Vec<f64>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

fn coordinate_columns(path: &Path, header: &[String]) -> Result<usize, DataError> {
    for (i, name) in header.iter().enumerate() {
        if name.trim() != format!("x{}", i + 1) {
            return Err(DataError::Header {
                path: path.to_path_buf(),
                message: format!("expected column `x{}`, found `{}`", i + 1, name.trim()),
            });
        }
    }
    if header.is_empty() {
        return Err(DataError::Header { path: path.to_path_buf(), message: "no coordinate columns".into() });
    }
    Ok(header.len())
}

/// Header names and `(line, fields)` rows.
type Table = (Vec<String>, Vec<(u64, Vec<f64>)>);

/// Rows of a headed CSV file, with line numbers. `Ok(None)` for an empty file.
fn read_rows(path: &Path, reader: impl Read) -> Result<Option<Table>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = match rdr.headers() {
        Ok(h) => h.iter().map(str::to_string).collect(),
        Err(e) => return Err(DataError::Parse { path: path.to_path_buf(), line: 1, message: e.to_string() }),
    };
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Ok(None);
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != header.len() {
            return Err(DataError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let values = record
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(DataError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("`{f}` is not a finite number"),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((line, values));
    }
    Ok(Some((header, rows)))
}

fn to_point(path: &Path, line: u64, coords: Vec<f64>) -> Result<Point, DataError> {
    Point::new(coords).map_err(|e| DataError::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    })
}

pub fn parse_observations(path: &Path, reader: impl Read) -> Result<Observations, DataError> {
    let Some((header, rows)) = read_rows(path, reader)? else {
        return Ok(Observations { dim: None, points: Vec::new(), values: Vec::new() });
    };
    if header.last().map(|h| h.trim()) != Some("z") {
        return Err(DataError::Header {
            path: path.to_path_buf(),
            message: "last column must be `z`".into(),
        });
    }
    let dim = coordinate_columns(path, &header[..header.len() - 1])?;
    let mut points = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    for (line, mut row) in rows {
        values.push(row.pop().expect("nonempty row"));
        points.push(to_point(path, line, row)?);
    }
    Ok(Observations { dim: Some(dim), points, values })
}

pub fn parse_queries(path: &Path, reader: impl Read) -> Result<(usize, Vec<Point>), DataError> {
    let Some((header, rows)) = read_rows(path, reader)? else {
        return Err(DataError::Header { path: path.to_path_buf(), message: "empty query file".into() });
    };
    let dim = coordinate_columns(path, &header)?;
    let points =
        rows.into_iter().map(|(line, row)| to_point(path, line, row)).collect::<Result<Vec<_>, _>>()?;
    Ok((dim, points))
}

pub fn read_observations(path: &Path) -> Result<Observations, DataError> {
    parse_observations(path, File::open(path).map_err(io_err(path))?)
}

pub fn read_queries(path: &Path) -> Result<(usize, Vec<Point>), DataError> {
    parse_queries(path, File::open(path).map_err(io_err(path))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    x: &'a [f64],
    mean: f64,
    variance: f64,
}

pub fn write_predictions(
    out: impl Write,
    format: OutputFormat,
    queries: &[Point],
    predictions: &[Prediction],
) -> Result<(), DataError> {
    let werr = |e: &dyn std::fmt::Display| DataError::Write(e.to_string());
    match format {
        OutputFormat::Json => {
            let records: Vec<PredictionRecord<'_>> = queries
                .iter()
                .zip(predictions)
                .map(|(q, p)| PredictionRecord { x: q.coords(), mean: p.mean, variance: p.variance })
                .collect();
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &records).map_err(|e| werr(&e))?;
            writeln!(out).map_err(|e| werr(&e))?;
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            let d = queries.first().map_or(0, Point::dim);
            let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
            header.push("mean".into());
            header.push("variance".into());
            w.write_record(&header).map_err(|e| werr(&e))?;
            for (q, p) in queries.iter().zip(predictions) {
                let mut rec: Vec<String> = q.coords().iter().map(|c| c.to_string()).collect();
                rec.push(p.mean.to_string());
                rec.push(p.variance.to_string());
                w.write_record(&rec).map_err(|e| werr(&e))?;
            }
            w.flush().map_err(|e| werr(&e))?;
        }
    }
    Ok(())
}

pub fn write_bench_rows(out: impl Write, rows: &[BenchRow]) -> Result<(), DataError> {
    let werr = |e: &dyn std::fmt::Display| DataError::Write(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(|e| werr(&e))?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.k.to_string(),
            format!("{:.6e}", r.update_time_s),
            format!("{:.6e}", r.refit_time_s),
            format!("{:.3}", r.speedup),
        ])
        .map_err(|e| werr(&e))?;
    }
    w.flush().map_err(|e| werr(&e))?;
    Ok(())
}
