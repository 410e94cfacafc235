//! File formats.
//!
//! - Matrix: first line `rows cols`, then one line per row of
//!   whitespace-separated doubles. Values are written in shortest round-trip
//!   form, so reading a written file gives back identical bits.
//! - Observations: CSV with header `i,j,value`, 0-based indices.
//! - Split: CSV with header `set,i,j`. The first record is `grid,N,L`; every
//!   other record has set `train` or `test`, in sampling order.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{Entry, ObservationVector, SampleSplit};

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Parse the matrix format; `origin` names the source in error messages.
pub fn parse_matrix(text: &str, origin: &Path) -> Result<DMatrix<f64>> {
    let mut tokens = text.split_whitespace();
    let mut dim = |what: &str| -> Result<usize> {
        let tok = tokens
            .next()
            .ok_or_else(|| Error::parse(origin, format!("missing {what} in header")))?;
        tok.parse()
            .map_err(|_| Error::parse(origin, format!("bad {what} `{tok}` in header")))
    };
    let rows = dim("row count")?;
    let cols = dim("column count")?;
    let values = tokens
        .map(|t| t.parse::<f64>().map_err(|_| Error::parse(origin, format!("bad value `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != rows * cols {
        return Err(Error::parse(
            origin,
            format!("header says {rows}x{cols} but {} values follow", values.len()),
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, format_matrix(m)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text, path)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::parse(path, format!("{other:?}")),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRecord {
    i: usize,
    j: usize,
    value: f64,
}

pub fn write_observations(path: &Path, split: &SampleSplit, obs: &ObservationVector) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for (&(i, j), &value) in split.train().iter().zip(obs.values().iter()) {
        w.serialize(ObservationRecord { i, j, value }).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Observed `(entry, value)` pairs in file order.
pub fn read_observations(path: &Path) -> Result<Vec<(Entry, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize::<ObservationRecord>()
        .map(|rec| rec.map(|o| ((o.i, o.j), o.value)).map_err(|e| csv_error(path, e)))
        .collect()
}

/// Values for the training entries of `split`, looked up from observation records.
pub fn observations_for_split(records: &[(Entry, f64)], split: &SampleSplit, origin: &Path) -> Result<ObservationVector> {
    let lookup: std::collections::HashMap<Entry, f64> = records.iter().copied().collect();
    let values = split
        .train()
        .iter()
        .map(|e| {
            lookup.get(e).copied().ok_or_else(|| {
                Error::DimensionMismatch(format!(
                    "{}: no observation for training entry ({}, {})",
                    origin.display(),
                    e.0,
                    e.1
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ObservationVector::new(split, DVector::from_vec(values))
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitRecord {
    set: String,
    i: usize,
    j: usize,
}

pub fn write_split(path: &Path, split: &SampleSplit) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut put = |set: &str, (i, j): Entry| {
        w.serialize(SplitRecord { set: set.into(), i, j }).map_err(|e| csv_error(path, e))
    };
    put("grid", (split.n_rows(), split.n_cols()))?;
    for &e in split.train() {
        put("train", e)?;
    }
    for &e in split.test() {
        put("test", e)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_split(path: &Path) -> Result<SampleSplit> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut grid = None;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for rec in r.deserialize::<SplitRecord>() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        match rec.set.as_str() {
            "grid" if grid.is_none() => grid = Some((rec.i, rec.j)),
            "grid" => return Err(Error::parse(path, "more than one grid record")),
            "train" => train.push((rec.i, rec.j)),
            "test" => test.push((rec.i, rec.j)),
            other => return Err(Error::parse(path, format!("unknown set `{other}`"))),
        }
    }
    let (n, l) = grid.ok_or_else(|| Error::parse(path, "missing `grid,N,L` record"))?;
    SampleSplit::new(n, l, train, test)
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::parse(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Strict TOML read: unknown keys are errors when `T` denies them.
pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config {
        key: path.display().to_string(),
        message: e.message().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::uniform_split;

    #[test]
    fn matrix_round_trip_is_bit_exact() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -1e-300, 1.0 / 3.0, f64::MAX, 5e-324, -0.0]);
        let back = parse_matrix(&format_matrix(&m), Path::new("mem")).unwrap();
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn matrix_errors_name_the_file() {
        let err = parse_matrix("2 2\n1 2 3", Path::new("m.txt")).unwrap_err();
        assert!(err.to_string().contains("m.txt"));
        assert!(parse_matrix("2 x\n", Path::new("m.txt")).is_err());
        assert!(parse_matrix("1 1\nabc", Path::new("m.txt")).is_err());
    }

    #[test]
    fn split_and_observations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let split = uniform_split(5, 4, 7, 6, 3).unwrap();
        let m = DMatrix::from_fn(5, 4, |i, j| i as f64 - 0.5 * j as f64);
        let obs = ObservationVector::from_matrix(&split, &m).unwrap();
        let sp = dir.path().join("split.csv");
        let op = dir.path().join("obs.csv");
        write_split(&sp, &split).unwrap();
        write_observations(&op, &split, &obs).unwrap();
        let split2 = read_split(&sp).unwrap();
        assert_eq!(split2.train(), split.train());
        assert_eq!(split2.test(), split.test());
        assert_eq!((split2.n_rows(), split2.n_cols()), (5, 4));
        let obs2 = observations_for_split(&read_observations(&op).unwrap(), &split2, &op).unwrap();
        assert_eq!(obs2.values(), obs.values());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = read_matrix(Path::new("/nonexistent/m.txt")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert_eq!(err.exit_code(), 2);
    }
}
