use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row-major point cloud, `m` points in `d` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    data: Vec<f64>,
    m: usize,
    d: usize,
}

impl PointSet {
    pub fn from_row_major(data: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 || !data.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form rows of dimension {d}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "point set".into(),
            });
        }
        Ok(PointSet {
            m: data.len() / d,
            data,
            d,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::from_row_major(rows.concat(), d)
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        Self::from_row_major(m.transpose().as_slice().to_vec(), m.ncols())
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn select(&self, idx: &[usize]) -> PointSet {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        PointSet {
            data,
            m: idx.len(),
            d: self.d,
        }
    }

    pub fn scaled(&self, s: f64) -> PointSet {
        PointSet {
            data: self.data.iter().map(|v| v * s).collect(),
            m: self.m,
            d: self.d,
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

/// Squared Euclidean distance with a fixed four-lane summation order.
#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            let t = x[k] - y[k];
            acc[k] += t * t;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        let t = x - y;
        tail += t * t;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

fn check_dims(a: &PointSet, b: &PointSet) -> Result<()> {
    if a.d != b.d {
        return Err(Error::DimensionMismatch(format!(
            "point sets have dimensions {} and {}",
            a.d, b.d
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::DimensionMismatch("empty point set".into()));
    }
    Ok(())
}

/// Sum over all ordered pairs of `‖aᵢ − bⱼ‖`. Rows are reduced in parallel and
/// then added in index order, so the result does not depend on thread count.
fn cross_sum(a: &PointSet, b: &PointSet) -> f64 {
    let partial: Vec<f64> = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let ai = a.row(i);
            b.rows().map(|bj| dist(ai, bj)).sum::<f64>()
        })
        .collect();
    partial.iter().sum()
}

/// Sum over ordered pairs `(i, j)` of `‖aᵢ − aⱼ‖`, using symmetry.
fn within_sum(a: &PointSet) -> f64 {
    let partial: Vec<f64> = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let ai = a.row(i);
            (i + 1..a.len()).map(|j| dist(ai, a.row(j))).sum::<f64>()
        })
        .collect();
    2.0 * partial.iter().sum::<f64>()
}

/// Mean pairwise distance within `a`, diagonal included (V-statistic form).
pub fn within_mean(a: &PointSet) -> f64 {
    let m = a.len() as f64;
    within_sum(a) / (m * m)
}

/// Two-sample energy distance between empirical distributions:
/// `2·E‖A − B‖ − E‖A − A'‖ − E‖B − B'‖`, all expectations as full double means.
pub fn energy_two_sample(a: &PointSet, b: &PointSet) -> Result<f64> {
    check_dims(a, b)?;
    let (m, n) = (a.len() as f64, b.len() as f64);
    let cross = cross_sum(a, b) / (m * n);
    Ok(2.0 * cross - within_mean(a) - within_mean(b))
}

/// Support-points criterion of `candidate` against the empirical cloud `full`:
/// `(2/(nN))ΣΣ‖vᵢ − Vⱼ‖ − (1/n²)ΣΣ‖vᵢ − vⱼ‖`.
pub fn sp_objective(candidate: &PointSet, full: &PointSet) -> Result<f64> {
    check_dims(candidate, full)?;
    let (n, big_n) = (candidate.len() as f64, full.len() as f64);
    Ok(2.0 * cross_sum(candidate, full) / (n * big_n) - within_mean(candidate))
}
