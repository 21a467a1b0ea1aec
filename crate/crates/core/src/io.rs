//! File formats: label matrices and covariances as CSV, everything else as JSON.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::covariance::CovarianceMatrix;
use crate::error::{Error, Result};
use crate::mrf::LabelMatrix;

fn reader_builder() -> csv::ReaderBuilder {
    let mut b = csv::ReaderBuilder::new();
    b.has_headers(false).flexible(true).trim(csv::Trim::All);
    b
}

fn parse_count(field: Option<&str>, what: &str) -> Result<usize> {
    field
        .ok_or_else(|| Error::Parse(format!("missing {what} in label header")))?
        .parse()
        .map_err(|e| Error::Parse(format!("bad {what} in label header: {e}")))
}

/// Parses a label CSV: a `m,n` line followed by n rows of m entries.
/// With `zero_one`, entries are read from {0, 1} and mapped 0 → −1, 1 → +1.
pub fn parse_labels(input: impl Read, zero_one: bool) -> Result<LabelMatrix> {
    let mut rdr = reader_builder().from_reader(input);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Parse("empty label file".into()))??;
    if header.len() != 2 {
        return Err(Error::Parse(format!(
            "label header must be `m,n`, got {} fields",
            header.len()
        )));
    }
    let m = parse_count(header.get(0), "m")?;
    let n = parse_count(header.get(1), "n")?;
    let mut values = Vec::with_capacity(m * n);
    let mut rows = 0usize;
    for (point, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() != m {
            return Err(Error::Parse(format!(
                "row {} has {} entries, expected {m}",
                point + 1,
                rec.len()
            )));
        }
        for (source, field) in rec.iter().enumerate() {
            let raw: i64 = field.parse().map_err(|_| {
                Error::Parse(format!("non-integer label '{field}' at row {}", point + 1))
            })?;
            let spin = match (zero_one, raw) {
                (true, 0) => -1,
                (true, 1) | (false, 1) => 1,
                (false, -1) => -1,
                _ => {
                    return Err(Error::InvalidLabel {
                        source_index: source,
                        point,
                        value: raw,
                    })
                }
            };
            values.push(spin);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Parse(format!("header declares n = {n}, file has {rows} rows")));
    }
    LabelMatrix::from_column_major(m, n, values)
}

pub fn read_labels(path: &Path, zero_one: bool) -> Result<LabelMatrix> {
    parse_labels(BufReader::new(File::open(path)?), zero_one)
}

pub fn write_labels(path: &Path, labels: &LabelMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{},{}", labels.m(), labels.n())?;
    for col in labels.columns() {
        let line: Vec<String> = col.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a covariance from `.json` (`{"m", "values"}`) or from CSV
/// (m lines of m entries).
pub fn read_covariance(path: &Path) -> Result<CovarianceMatrix> {
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        return read_json(path);
    }
    let mut rdr = reader_builder().from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("non-numeric covariance entry '{f}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let m = rows.len();
    if m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::ShapeMismatch("covariance CSV must be m lines of m entries".into()));
    }
    CovarianceMatrix::new(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}

pub fn write_covariance_csv(path: &Path, sigma: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in sigma.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrf::{IsingParams, SourceGraph};

    #[test]
    fn labels_round_trip() {
        let labels = LabelMatrix::from_columns(3, &[vec![1, -1, 1], vec![-1, -1, 1]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        write_labels(&p, &labels).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "3,2\n1,-1,1\n-1,-1,1\n");
        assert_eq!(read_labels(&p, false).unwrap(), labels);
    }

    #[test]
    fn zero_one_conversion() {
        let parsed = parse_labels("2,2\n1,0\n0,0\n".as_bytes(), true).unwrap();
        assert_eq!(parsed.column(0), &[1, -1]);
        assert_eq!(parsed.column(1), &[-1, -1]);
        assert!(matches!(
            parse_labels("2,1\n1,0\n".as_bytes(), false),
            Err(Error::InvalidLabel { source_index: 1, point: 0, value: 0 })
        ));
    }

    #[test]
    fn malformed_labels() {
        assert!(parse_labels("".as_bytes(), false).is_err());
        assert!(parse_labels("2,2\n1,1\n".as_bytes(), false).is_err());
        assert!(parse_labels("2,1\n1,1,1\n".as_bytes(), false).is_err());
        assert!(parse_labels("2\n1,1\n".as_bytes(), false).is_err());
    }

    #[test]
    fn covariance_formats() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.1 + 0.2, 0.1 + 0.2, 2.0]);
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("c.csv");
        write_covariance_csv(&csv, &sigma).unwrap();
        assert_eq!(read_covariance(&csv).unwrap().values(), &sigma);
        let json = dir.path().join("c.json");
        write_json(&json, &CovarianceMatrix::new(sigma.clone()).unwrap()).unwrap();
        assert_eq!(read_covariance(&json).unwrap().values(), &sigma);
    }

    #[test]
    fn graph_and_params_files() {
        let g = SourceGraph::from_cliques(4, &[vec![0, 1, 2]]).unwrap();
        let p = IsingParams::uniform(&g, 0.5, 0.25);
        let dir = tempfile::tempdir().unwrap();
        let gp = dir.path().join("g.json");
        let pp = dir.path().join("p.json");
        write_json(&gp, &g).unwrap();
        write_json(&pp, &p).unwrap();
        assert_eq!(read_json::<SourceGraph>(&gp).unwrap(), g);
        assert_eq!(read_json::<IsingParams>(&pp).unwrap(), p);
    }
}
