use serde::Serialize;

use crate::matrix::RowKey;

/// Per-row cluster membership, optionally with soft responsibilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    pub labels: Vec<usize>,
    /// `n x K` posteriors when the engine is probabilistic.
    pub responsibilities: Option<Vec<Vec<f64>>>,
}

impl Assignment {
    pub fn hard(labels: Vec<usize>) -> Self {
        Self {
            labels,
            responsibilities: None,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cluster_sizes(&self, k: usize) -> Vec<usize> {
        let mut sizes = vec![0; k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// `row_key,cluster` CSV.
    pub fn to_csv(&self, keys: &[RowKey]) -> String {
        let mut out = String::from("row_key,cluster\n");
        for (key, label) in keys.iter().zip(&self.labels) {
            out.push_str(&format!("{key},{label}\n"));
        }
        out
    }

    /// `row_key,p0,p1,...` CSV, or `None` for hard assignments.
    pub fn responsibilities_csv(&self, keys: &[RowKey]) -> Option<String> {
        let resp = self.responsibilities.as_ref()?;
        let k = resp.first().map_or(0, Vec::len);
        let mut out = String::from("row_key");
        for j in 0..k {
            out.push_str(&format!(",p{j}"));
        }
        out.push('\n');
        for (key, row) in keys.iter().zip(resp) {
            out.push_str(&key.to_string());
            for p in row {
                out.push_str(&format!(",{p:.16e}"));
            }
            out.push('\n');
        }
        Some(out)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest value; ties go to the lowest index.
pub(crate) fn argmin(values: impl IntoIterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}
