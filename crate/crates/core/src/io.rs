//! CSV and JSON file formats shared by every stage.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Formats a real with 15 significant digits, trimming trailing zeros.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        let decimals = (14 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        if s == "-0" {
            "0".to_string()
        } else {
            s
        }
    } else {
        format!("{x:.14e}")
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes raw CSV lines; each inner vector is one row of already-formatted cells.
pub fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = create(path)?;
    let mut emit = |cells: &[String]| -> std::io::Result<()> {
        let line: Vec<String> = cells.iter().map(|c| quote(c)).collect();
        writeln!(w, "{}", line.join(","))
    };
    emit(header).map_err(|e| Error::io(path, e))?;
    for r in rows {
        emit(r).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn quote(cell: &str) -> String {
    if cell.contains([',', '"', '\n']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

/// Time-indexed table: first column `time`, one column per series.
pub fn write_time_table(
    path: &Path,
    times: &[f64],
    columns: &[String],
    values: &DMatrix<f64>,
) -> Result<()> {
    if values.nrows() != times.len() || values.ncols() != columns.len() {
        return Err(Error::DimensionMismatch(format!(
            "table {}x{} vs {} times and {} columns",
            values.nrows(),
            values.ncols(),
            times.len(),
            columns.len()
        )));
    }
    let mut header = vec!["time".to_string()];
    header.extend(columns.iter().cloned());
    let rows: Vec<Vec<String>> = times
        .iter()
        .enumerate()
        .map(|(i, t)| {
            std::iter::once(fmt_sig(*t))
                .chain(values.row(i).iter().map(|v| fmt_sig(*v)))
                .collect()
        })
        .collect();
    write_rows(path, &header, &rows)
}

pub fn read_time_table(path: &Path) -> Result<(Vec<f64>, Vec<String>, DMatrix<f64>)> {
    let label = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 2 {
        return Err(Error::Parse {
            path: label,
            line: 1,
            message: "expected a time column and at least one series".into(),
        });
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut times = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                path: label,
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let mut row = Vec::with_capacity(rec.len());
        for field in rec.iter() {
            row.push(parse_f64(field, &label, line)?);
        }
        times.push(row[0]);
        data.extend_from_slice(&row[1..]);
    }
    if times.is_empty() {
        return Err(Error::NoRecords(label));
    }
    let m = DMatrix::from_row_slice(times.len(), columns.len(), &data);
    Ok((times, columns, m))
}

/// Square matrix with a region-id header row.
pub fn write_labeled_matrix(path: &Path, labels: &[String], m: &DMatrix<f64>) -> Result<()> {
    let rows: Vec<Vec<String>> = m
        .row_iter()
        .map(|r| r.iter().map(|v| fmt_sig(*v)).collect())
        .collect();
    write_rows(path, labels, &rows)
}

pub fn read_labeled_matrix(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let label = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let labels: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut data = Vec::new();
    let mut nrows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != labels.len() {
            return Err(Error::Parse {
                path: label,
                line: i + 2,
                message: format!("expected {} fields, found {}", labels.len(), rec.len()),
            });
        }
        for field in rec.iter() {
            data.push(parse_f64(field, &label, i + 2)?);
        }
        nrows += 1;
    }
    Ok((labels.clone(), DMatrix::from_row_slice(nrows, labels.len(), &data)))
}

fn parse_f64(field: &str, path: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_string(),
        line,
        message: format!("not a number: {field:?}"),
    })
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.display().to_string(),
            line,
            message: format!("{other:?}"),
        },
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}
