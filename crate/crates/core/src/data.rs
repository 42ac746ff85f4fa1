//! Observational data for the partially linear model and the plumbing around it:
//! column standardization, row subsetting and CSV ingestion.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Population standard deviations below this are treated as constant columns.
pub const DEGENERATE_SD: f64 = 1e-12;

/// Outcome `y`, treatment `t` and covariates `x` (one row per unit).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    t: Vec<f64>,
    x: DMatrix<f64>,
    column_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, t: Vec<f64>, x: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if t.len() != n || x.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "y has {} rows, t has {}, x has {}",
                n,
                t.len(),
                x.nrows()
            )));
        }
        if n < 2 {
            return Err(Error::DimensionMismatch(format!(
                "a dataset needs at least 2 rows, got {n}"
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::DimensionMismatch(
                "a dataset needs at least one covariate".into(),
            ));
        }
        check_finite("outcome", &y)?;
        check_finite("treatment", &t)?;
        check_finite("covariates", x.as_slice())?;
        Ok(Dataset {
            y,
            t,
            x,
            column_names: None,
        })
    }

    /// Attaches labels in the order outcome, treatment, covariates.
    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() + 2 {
            return Err(Error::DimensionMismatch(format!(
                "expected {} column names, got {}",
                self.p() + 2,
                names.len()
            )));
        }
        self.column_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    /// Rows `idx` in the given order. Indices must be in range and distinct.
    pub fn subset_rows(&self, idx: &[usize]) -> Result<Dataset> {
        validate_indices(idx, self.n())?;
        if idx.len() < 2 {
            return Err(Error::DimensionMismatch(format!(
                "a dataset needs at least 2 rows, subset has {}",
                idx.len()
            )));
        }
        Ok(Dataset {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            x: self.x.select_rows(idx),
            column_names: self.column_names.clone(),
        })
    }

    /// Column-stacked `(t, x, y)` or `(t, x)` matrix.
    pub fn joint_matrix(&self, include_outcome: bool) -> DMatrix<f64> {
        let extra = if include_outcome { 2 } else { 1 };
        let n = self.n();
        let p = self.p();
        DMatrix::from_fn(n, p + extra, |i, j| {
            if j == 0 {
                self.t[i]
            } else if j <= p {
                self.x[(i, j - 1)]
            } else {
                self.y[i]
            }
        })
    }
}

pub(crate) fn validate_indices(idx: &[usize], len: usize) -> Result<()> {
    let mut seen = HashSet::with_capacity(idx.len());
    for &i in idx {
        if i >= len {
            return Err(Error::IndexOutOfRange { index: i, len });
        }
        if !seen.insert(i) {
            return Err(Error::DuplicateIndex(i));
        }
    }
    Ok(())
}

fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what: what.into() })
    }
}

/// Per-column statistics produced by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationReport {
    pub means: Vec<f64>,
    /// Population (1/n) standard deviations.
    pub scales: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl StandardizationReport {
    /// Maps a standardized matrix back to the original scale.
    pub fn unapply(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| {
            if self.degenerate[j] {
                self.means[j]
            } else {
                z[(i, j)] * self.scales[j] + self.means[j]
            }
        })
    }
}

/// Centers every column and scales it to unit population standard deviation.
/// Constant columns come back as zeros and are flagged in the report.
pub fn standardize(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, StandardizationReport)> {
    let n = m.nrows();
    if n < 2 {
        return Err(Error::DimensionMismatch(format!(
            "standardization needs at least 2 rows, got {n}"
        )));
    }
    check_finite("matrix", m.as_slice())?;
    let d = m.ncols();
    let mut out = m.clone();
    let mut report = StandardizationReport {
        means: vec![0.0; d],
        scales: vec![0.0; d],
        degenerate: vec![false; d],
    };
    for j in 0..d {
        let col = m.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        report.means[j] = mean;
        report.scales[j] = sd;
        let mut dst = out.column_mut(j);
        if sd < DEGENERATE_SD {
            report.degenerate[j] = true;
            dst.fill(0.0);
        } else {
            for v in dst.iter_mut() {
                *v = (*v - mean) / sd;
            }
        }
    }
    Ok((out, report))
}

/// Names of the outcome, treatment and covariate columns in a CSV header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
}

impl ColumnSchema {
    fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(Error::Schema("no covariate columns named".into()));
        }
        let mut seen = HashSet::new();
        for name in self.all_names() {
            if !seen.insert(name) {
                return Err(Error::Schema(format!("column '{name}' named twice")));
            }
        }
        Ok(())
    }

    fn all_names(&self) -> impl Iterator<Item = &str> {
        [self.outcome.as_str(), self.treatment.as_str()]
            .into_iter()
            .chain(self.covariates.iter().map(String::as_str))
    }
}

/// Reads a comma-separated file with a header row into a [`Dataset`].
pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, schema)
}

/// Same as [`load_csv`] over any reader.
pub fn read_csv<R: std::io::Read>(reader: R, schema: &ColumnSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let position = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };
    let y_col = position(&schema.outcome)?;
    let t_col = position(&schema.treatment)?;
    let x_cols = schema
        .covariates
        .iter()
        .map(|c| position(c))
        .collect::<Result<Vec<_>>>()?;

    let p = x_cols.len();
    let mut y = Vec::new();
    let mut t = Vec::new();
    let mut x_rows: Vec<f64> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        // Data rows are numbered from 1, the header being row 0.
        let row = r + 1;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} cells, found {}", header.len(), record.len()),
            });
        }
        let cell = |col: usize| -> Result<f64> {
            let raw = record[col].trim();
            let value: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: header[col].to_string(),
                message: format!("'{raw}' is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("row {row}, column '{}'", &header[col]),
                });
            }
            Ok(value)
        };
        y.push(cell(y_col)?);
        t.push(cell(t_col)?);
        for &c in &x_cols {
            x_rows.push(cell(c)?);
        }
    }
    let n = y.len();
    let x = DMatrix::from_row_slice(n, p, &x_rows);
    let names = schema.all_names().map(str::to_string).collect();
    Dataset::new(y, t, x)?.with_column_names(names)
}

/// Header names of a CSV file.
pub fn csv_header(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    Ok(rdr.headers()?.iter().map(|h| h.trim().to_string()).collect())
}

/// Reads every column of a headed, all-numeric CSV into a matrix.
pub fn read_matrix_csv<R: std::io::Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut values = Vec::new();
    let mut n = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} cells, found {}", header.len(), record.len()),
            });
        }
        for (c, raw) in record.iter().enumerate() {
            let raw = raw.trim();
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: header[c].to_string(),
                message: format!("'{raw}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("row {row}, column '{}'", &header[c]),
                });
            }
            values.push(v);
        }
        n += 1;
    }
    if n == 0 || header.is_empty() {
        return Err(Error::Schema("no data rows or columns".into()));
    }
    Ok(DMatrix::from_row_slice(n, header.len(), &values))
}

pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_matrix_csv(file)
}

/// Writes `d` as CSV with the stored column names (or `y,t,x1..xp`).
pub fn write_csv<W: std::io::Write>(d: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let names: Vec<String> = match d.column_names() {
        Some(names) => names.to_vec(),
        None => ["y".to_string(), "t".to_string()]
            .into_iter()
            .chain((1..=d.p()).map(|j| format!("x{j}")))
            .collect(),
    };
    w.write_record(&names)?;
    for i in 0..d.n() {
        let mut rec = Vec::with_capacity(d.p() + 2);
        rec.push(d.y[i].to_string());
        rec.push(d.t[i].to_string());
        for j in 0..d.p() {
            rec.push(d.x[(i, j)].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<csv writer>".into(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn small() -> Dataset {
        Dataset::new(
            vec![1.0, 2.0, 3.0],
            vec![0.0, 1.0, 0.0],
            DMatrix::from_row_slice(3, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0]),
        )
        .unwrap()
    }

    #[test]
    fn standardize_fixed_point() {
        let (z, rep) = standardize(&col(&[-1.0, 1.0])).unwrap();
        assert_eq!(z.as_slice(), &[-1.0, 1.0]);
        assert_eq!(rep.means, vec![0.0]);
        assert_eq!(rep.scales, vec![1.0]);
    }

    #[test]
    fn standardize_shift() {
        let (z, rep) = standardize(&col(&[0.0, 2.0])).unwrap();
        assert_eq!(z.as_slice(), &[-1.0, 1.0]);
        assert_eq!(rep.means, vec![1.0]);
        assert_eq!(rep.scales, vec![1.0]);
    }

    #[test]
    fn standardize_constant_column() {
        let (z, rep) = standardize(&col(&[5.0, 5.0])).unwrap();
        assert_eq!(z.as_slice(), &[0.0, 0.0]);
        assert_eq!(rep.degenerate, vec![true]);
    }

    #[test]
    fn standardize_rejects_nan() {
        assert!(matches!(
            standardize(&col(&[1.0, f64::NAN])),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn subset_identity_and_permutation() {
        let d = small();
        assert_eq!(d.subset_rows(&[0, 1, 2]).unwrap(), d);
        let s = d.subset_rows(&[2, 0]).unwrap();
        assert_eq!(s.y(), &[3.0, 1.0]);
        assert_eq!(s.x()[(0, 1)], 30.0);
        assert_eq!(s.p(), 2);
    }

    #[test]
    fn subset_errors() {
        let d = small();
        assert!(matches!(
            d.subset_rows(&[0, 0]),
            Err(Error::DuplicateIndex(0))
        ));
        assert!(matches!(
            d.subset_rows(&[0, 3]),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn dataset_invariants() {
        assert!(Dataset::new(vec![1.0], vec![1.0], DMatrix::zeros(1, 1)).is_err());
        assert!(Dataset::new(vec![1.0, 2.0], vec![1.0], DMatrix::zeros(2, 1)).is_err());
        assert!(matches!(
            Dataset::new(vec![1.0, f64::INFINITY], vec![1.0, 1.0], DMatrix::zeros(2, 1)),
            Err(Error::NonFinite { .. })
        ));
    }

    fn schema(x: &[&str]) -> ColumnSchema {
        ColumnSchema {
            outcome: "y".into(),
            treatment: "t".into(),
            covariates: x.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn csv_dimensions() {
        let text = "y,t,x1,x2\n1,0,0.5,1\n2,1,1.5,2\n3,0,2.5,3\n";
        let d = read_csv(text.as_bytes(), &schema(&["x1", "x2"])).unwrap();
        assert_eq!((d.n(), d.p()), (3, 2));
        assert_eq!(d.x()[(2, 0)], 2.5);
    }

    #[test]
    fn csv_column_order_follows_schema() {
        let text = "x2,t,y,x1\n1,0,5,2\n3,1,6,4\n";
        let d = read_csv(text.as_bytes(), &schema(&["x1", "x2"])).unwrap();
        assert_eq!(d.y(), &[5.0, 6.0]);
        assert_eq!(d.x().row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, 1.0]);
    }

    #[test]
    fn csv_missing_column() {
        let text = "y,t,x1\n1,0,0.5\n2,1,1.5\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &schema(&["w"])),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn csv_bad_cell_names_row_and_column() {
        let text = "y,t,x1\n1,0,0.5\n2,1,abc\n";
        match read_csv(text.as_bytes(), &schema(&["x1"])) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "x1");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_ragged_row() {
        let text = "y,t,x1\n1,0,0.5\n2,1\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &schema(&["x1"])),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn csv_quoted_header() {
        let text = "\"y\",\"t\",\"x, one\"\n1,0,0.5\n2,1,1.5\n";
        let d = read_csv(text.as_bytes(), &schema(&["x, one"])).unwrap();
        assert_eq!(d.n(), 2);
    }

    #[test]
    fn csv_roundtrip() {
        let d = small();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &schema(&["x1", "x2"])).unwrap();
        assert_eq!(back.y(), d.y());
        assert_eq!(back.x(), d.x());
    }
}
