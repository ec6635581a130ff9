//! Dense row-major feature matrix with per-row provenance keys.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifies the subject and whole second an observation was aligned to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowKey {
    pub subject_id: String,
    /// Seconds since the Unix epoch.
    pub second_ts: i64,
}

impl RowKey {
    pub fn new(subject_id: impl Into<String>, second_ts: i64) -> Self {
        Self {
            subject_id: subject_id.into(),
            second_ts,
        }
    }
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.subject_id, self.second_ts)
    }
}

/// Affine scaling applied to one column by [`FeatureMatrix::standardize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    /// Sample standard deviation; 0 marks a constant column.
    pub stddev: f64,
}

impl ColumnScale {
    pub fn is_constant(&self) -> bool {
        self.stddev == 0.0
    }
}

/// `n x d` observations, all finite, with unique column names.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n: usize,
    d: usize,
    column_names: Vec<String>,
    row_keys: Vec<RowKey>,
    standardization: Option<Vec<ColumnScale>>,
}

impl FeatureMatrix {
    /// Builds a matrix from rows, validating shape, finiteness and column names.
    ///
    /// `n = 0` is accepted here so that empty alignments can be represented;
    /// the clustering engines reject empty input themselves.
    pub fn new(rows: Vec<Vec<f64>>, column_names: Vec<String>, row_keys: Vec<RowKey>) -> Result<Self> {
        let d = column_names.len();
        if d == 0 {
            return Err(Error::InvalidData("feature matrix needs at least one column".into()));
        }
        let mut seen = HashSet::new();
        for name in &column_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidData(format!("duplicate column name `{name}`")));
            }
        }
        if row_keys.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                found: row_keys.len(),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            data,
            n: rows.len(),
            d,
            column_names,
            row_keys,
            standardization: None,
        })
    }

    /// Unkeyed matrix (subject `"anon"`, second = row index) with columns `x0..x{d-1}`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let names = (0..d).map(|j| format!("x{j}")).collect();
        let keys = (0..rows.len()).map(|i| RowKey::new("anon", i as i64)).collect();
        Self::new(rows, names, keys)
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.d
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact on an empty slice with d > 0 yields nothing
        self.data.chunks_exact(self.d)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn row_keys(&self) -> &[RowKey] {
        &self.row_keys
    }

    pub fn standardization(&self) -> Option<&[ColumnScale]> {
        self.standardization.as_deref()
    }

    /// Selects a subset of rows, in the order given.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        let mut keys = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            keys.push(self.row_keys[i].clone());
        }
        Self {
            data,
            n: indices.len(),
            d: self.d,
            column_names: self.column_names.clone(),
            row_keys: keys,
            standardization: self.standardization.clone(),
        }
    }

    /// Concatenates matrices with identical columns (pooled analysis).
    pub fn vstack(parts: &[FeatureMatrix]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptyInput("no matrices to stack".into()))?;
        let mut out = first.clone();
        out.standardization = None;
        for part in &parts[1..] {
            if part.column_names != first.column_names {
                return Err(Error::InvalidData(format!(
                    "column mismatch: {:?} vs {:?}",
                    first.column_names, part.column_names
                )));
            }
            out.data.extend_from_slice(&part.data);
            out.row_keys.extend(part.row_keys.iter().cloned());
            out.n += part.n;
        }
        Ok(out)
    }

    pub fn ensure_cols(&self, d: usize) -> Result<()> {
        if self.d != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: self.d,
            });
        }
        Ok(())
    }

    /// Column means.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.d];
        for row in self.rows() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.n.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Covariance about the column means, divided by `n - ddof`.
    pub fn covariance(&self, ddof: usize) -> DMatrix<f64> {
        let mean = self.mean();
        let mut cov = DMatrix::zeros(self.d, self.d);
        for row in self.rows() {
            let dev = DVector::from_iterator(self.d, row.iter().zip(&mean).map(|(v, m)| v - m));
            cov.ger(1.0, &dev, &dev, 1.0);
        }
        let denom = self.n.saturating_sub(ddof).max(1) as f64;
        cov / denom
    }

    /// Z-scores every column using the sample standard deviation.
    ///
    /// Constant columns become all zeros and are recorded with `stddev = 0`.
    /// Scales compose with any standardization already recorded, so
    /// [`inverse_transform`](Self::inverse_transform) always returns to the
    /// original units.
    pub fn standardize(&self) -> Result<Self> {
        if self.n < 2 {
            return Err(Error::InsufficientData(format!(
                "standardization needs at least 2 rows, got {}",
                self.n
            )));
        }
        let mean = self.mean();
        let mut ss = vec![0.0; self.d];
        for row in self.rows() {
            for j in 0..self.d {
                let dev = row[j] - mean[j];
                ss[j] += dev * dev;
            }
        }
        let scales: Vec<ColumnScale> = mean
            .iter()
            .zip(&ss)
            .map(|(&mean, &ss)| ColumnScale {
                mean,
                stddev: (ss / (self.n - 1) as f64).sqrt(),
            })
            .collect();

        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.d) {
            for (v, s) in row.iter_mut().zip(&scales) {
                *v = if s.is_constant() { 0.0 } else { (*v - s.mean) / s.stddev };
            }
        }
        out.standardization = Some(match &self.standardization {
            None => scales,
            Some(prev) => prev
                .iter()
                .zip(&scales)
                .map(|(p, s)| ColumnScale {
                    mean: p.mean + p.stddev * s.mean,
                    stddev: p.stddev * s.stddev,
                })
                .collect(),
        });
        Ok(out)
    }

    /// Maps standardized values back to original units. A no-op when no
    /// standardization is recorded.
    pub fn inverse_transform(&self) -> Self {
        let mut out = self.clone();
        if let Some(scales) = &self.standardization {
            for row in out.data.chunks_exact_mut(self.d) {
                for (v, s) in row.iter_mut().zip(scales) {
                    *v = *v * s.stddev + s.mean;
                }
            }
        }
        out.standardization = None;
        out
    }

    /// Maps a single vector in standardized units back to original units.
    pub fn unscale_point(&self, x: &[f64]) -> Vec<f64> {
        match &self.standardization {
            None => x.to_vec(),
            Some(scales) => x
                .iter()
                .zip(scales)
                .map(|(v, s)| v * s.stddev + s.mean)
                .collect(),
        }
    }

    /// Mahalanobis pre-whitening: `L^-1 (x - mean)` where `L L^T` is the
    /// sample covariance. Squared Euclidean distance between whitened rows
    /// equals squared Mahalanobis distance between the originals.
    pub fn whiten(&self) -> Result<Self> {
        if self.n < 2 {
            return Err(Error::InsufficientData("whitening needs at least 2 rows".into()));
        }
        let mean = self.mean();
        let chol = self
            .covariance(1)
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l();
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.d) {
            let dev = DVector::from_iterator(self.d, row.iter().zip(&mean).map(|(v, m)| v - m));
            let z = l
                .solve_lower_triangular(&dev)
                .ok_or(Error::NotPositiveDefinite)?;
            row.copy_from_slice(z.as_slice());
        }
        out.standardization = None;
        Ok(out)
    }

    /// CSV with `subject_id,second_ts` key columns, then feature columns at
    /// 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject_id,second_ts");
        for name in &self.column_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (key, row) in self.row_keys.iter().zip(self.rows()) {
            out.push_str(&key.subject_id);
            out.push(',');
            out.push_str(&key.second_ts.to_string());
            for v in row {
                out.push(',');
                out.push_str(&format!("{v:.16e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::MalformedRow { line: 1, reason: "missing header".into() })?;
        let fields: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
        if fields.len() < 3 || fields[0] != "subject_id" || fields[1] != "second_ts" {
            return Err(Error::MalformedRow {
                line: 1,
                reason: "header must start with subject_id,second_ts and name at least one feature".into(),
            });
        }
        let names: Vec<String> = fields[2..].iter().map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        let mut keys = Vec::new();
        for (idx, line) in lines {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != names.len() + 2 {
                return Err(Error::ChannelMismatch {
                    line: lineno,
                    expected: names.len() + 2,
                    found: parts.len(),
                });
            }
            let ts = parts[1].parse::<i64>().map_err(|e| Error::MalformedRow {
                line: lineno,
                reason: format!("bad second_ts `{}`: {e}", parts[1]),
            })?;
            let row = parts[2..]
                .iter()
                .map(|s| {
                    s.parse::<f64>().map_err(|e| Error::MalformedRow {
                        line: lineno,
                        reason: format!("bad value `{s}`: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            keys.push(RowKey::new(parts[0], ts));
            rows.push(row);
        }
        Self::new(rows, names, keys)
    }
}
