//! CSV and JSON input/output.
//!
//! CSV files carry a mandatory header row. A missing cell is an empty field
//! or the literal `NA`; output always writes missing cells as empty fields.
//! Lines starting with `#` are provenance comments and are skipped on read.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianParams, ParamsRepr};
use crate::partial::PartialMatrix;

/// A numeric table with `NaN` marking missing cells.
#[derive(Clone, Debug)]
pub struct CsvTable {
    pub headers: Vec<String>,
    pub values: DMatrix<f64>,
}

impl CsvTable {
    pub fn to_partial(&self) -> Result<PartialMatrix> {
        PartialMatrix::from_nan_encoded(&self.values)
    }

    /// Rows without any missing cell, and how many rows were dropped.
    pub fn complete_rows(&self) -> (DMatrix<f64>, usize) {
        let keep: Vec<usize> = (0..self.values.nrows())
            .filter(|&i| self.values.row(i).iter().all(|v| !v.is_nan()))
            .collect();
        let dropped = self.values.nrows() - keep.len();
        (self.values.select_rows(&keep), dropped)
    }
}

fn is_missing_token(s: &str) -> bool {
    s.is_empty() || s == "NA"
}

pub fn read_csv_from<R: Read>(reader: R) -> Result<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Ingest(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::Ingest("missing header row".into()));
    }
    let m = headers.len();
    let mut cells = Vec::new();
    let mut n = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Schema {
            row: i + 1,
            column: "*".into(),
            message: e.to_string(),
        })?;
        for (j, field) in rec.iter().enumerate() {
            let v = if is_missing_token(field) {
                f64::NAN
            } else {
                match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => {
                        return Err(Error::Schema {
                            row: i + 1,
                            column: headers[j].clone(),
                            message: format!("non-numeric value {field:?}"),
                        })
                    }
                }
            };
            cells.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Ingest("no data rows".into()));
    }
    Ok(CsvTable {
        headers,
        values: DMatrix::from_row_slice(n, m, &cells),
    })
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let f = File::open(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    read_csv_from(f)
}

/// Writes `values` with `NaN` as an empty field. `comment`, if given, is
/// written first as a `#` line.
pub fn write_csv_to<W: Write>(mut w: W, headers: &[String], values: &DMatrix<f64>, comment: Option<&str>) -> Result<()> {
    if headers.len() != values.ncols() {
        return Err(Error::dim("header count does not match column count"));
    }
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    let mut wtr = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wtr.write_record(headers).map_err(csv_err)?;
    for row in values.row_iter() {
        wtr.write_record(row.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }))
            .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_csv(path: &Path, headers: &[String], values: &DMatrix<f64>, comment: Option<&str>) -> Result<()> {
    write_csv_to(File::create(path)?, headers, values, comment)
}

/// Params JSON with an optional provenance block.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamsFile {
    #[serde(flatten)]
    pub params: ParamsRepr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

pub fn write_params_json(
    path: &Path,
    params: &GaussianParams,
    columns: Option<&[String]>,
    provenance: Option<serde_json::Value>,
) -> Result<()> {
    let file = ParamsFile {
        params: params.clone().into(),
        columns: columns.map(|c| c.to_vec()),
        provenance,
    };
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, &file)?;
    writeln!(f)?;
    Ok(())
}

pub fn read_params_json(path: &Path) -> Result<(GaussianParams, Option<Vec<String>>)> {
    let f = File::open(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    let file: ParamsFile = serde_json::from_reader(f)?;
    Ok((GaussianParams::try_from(file.params)?, file.columns))
}

/// Bundled synthetic survey-style population parameters.
#[derive(Clone, Debug)]
pub struct BundledPopulation {
    pub columns: Vec<String>,
    pub params: GaussianParams,
    /// Default amputation target (government approval).
    pub target_col: usize,
    /// Default MAR driver (political interest).
    pub driver_col: usize,
}

#[derive(Deserialize)]
struct BundledFile {
    columns: Vec<String>,
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    target_col: usize,
    driver_col: usize,
}

pub const BUNDLED_PARAMS_JSON: &str = include_str!("../data/survey_params.json");

pub fn bundled_population() -> BundledPopulation {
    let f: BundledFile = serde_json::from_str(BUNDLED_PARAMS_JSON).expect("bundled params parse");
    let m = f.mean.len();
    let cov = DMatrix::from_fn(m, m, |i, j| f.covariance[i][j]);
    BundledPopulation {
        columns: f.columns,
        params: GaussianParams::new(DVector::from_vec(f.mean), cov).expect("bundled params are valid"),
        target_col: f.target_col,
        driver_col: f.driver_col,
    }
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_missing_tokens() {
        let t = read_csv_from("a,b\n1,NA\n,2.5\n3,4\n".as_bytes()).unwrap();
        assert_eq!(t.headers, vec!["a", "b"]);
        assert!(t.values[(0, 1)].is_nan());
        assert!(t.values[(1, 0)].is_nan());
        assert_eq!(t.values[(2, 1)], 4.0);
        let (complete, dropped) = t.complete_rows();
        assert_eq!(dropped, 2);
        assert_eq!(complete.nrows(), 1);
    }

    #[test]
    fn schema_error_names_cell() {
        let err = read_csv_from("x,y\n1,2\n3,abc\n".as_bytes()).unwrap_err();
        match err {
            Error::Schema { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn no_rows_is_ingest_error() {
        assert!(matches!(read_csv_from("a,b\n".as_bytes()), Err(Error::Ingest(_))));
    }

    #[test]
    fn comments_skipped_and_missing_written_empty() {
        let values = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, 0.5, 2.0]);
        let headers = vec!["p".to_string(), "q".to_string()];
        let mut buf = Vec::new();
        write_csv_to(&mut buf, &headers, &values, Some("seed=1")).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "# seed=1\np,q\n1,\n0.5,2\n");
        let back = read_csv_from(text.as_bytes()).unwrap();
        assert!(back.values[(0, 1)].is_nan());
        assert_eq!(back.values[(1, 0)], 0.5);
    }

    #[test]
    fn bundled_population_is_valid() {
        let b = bundled_population();
        assert_eq!(b.columns.len(), b.params.dim());
        assert_eq!(b.columns[b.target_col], "approval");
        assert_eq!(b.columns[b.driver_col], "interest");
    }
}
