//! Pearson correlation matrices, histograms and scatter-pair exports.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

/// Pearson product-moment correlation, computed in two passes (means first).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("pearson needs n >= 2, got {n}")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` uniformly spaced edges spanning `[min, max]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Uniform-width histogram over the range of `values`. The top edge is
/// inclusive; a constant input puts every value in the first bin.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    if values.is_empty() {
        return Err(Error::EmptyInput("histogram of empty column".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let idx = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[idx] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Points of one off-diagonal variable pair, with its least-squares line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterPair {
    pub x: usize,
    pub y: usize,
    pub x_name: String,
    pub y_name: String,
    /// Least-squares fit `y = slope * x + intercept`; absent when `x` is constant.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    #[serde(skip)]
    pub points: Vec<(f64, f64)>,
}

impl ScatterPair {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{}\n", self.x_name, self.y_name);
        for (a, b) in &self.points {
            out.push_str(&format!("{a},{b}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub variables: Vec<String>,
    pub n: usize,
    /// Row-major `d x d`; `None` where a constant column leaves r undefined.
    pub r: Vec<Vec<Option<f64>>>,
    pub histograms: Vec<Histogram>,
    pub pairs: Vec<ScatterPair>,
}

impl CorrelationReport {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.r[i][j]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }
}

fn least_squares(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    (sxx > 0.0).then(|| {
        let slope = sxy / sxx;
        (slope, my - slope * mx)
    })
}

/// Pairwise Pearson matrix, per-column histograms and scatter pairs.
pub fn correlation_report(m: &FeatureMatrix, bins: usize) -> Result<CorrelationReport> {
    let n = m.n_rows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("correlation report needs n >= 2, got {n}")));
    }
    let d = m.n_cols();
    let columns: Vec<Vec<f64>> = (0..d).map(|j| m.column(j)).collect();
    let mut r = vec![vec![None; d]; d];
    for i in 0..d {
        r[i][i] = Some(1.0);
        for j in i + 1..d {
            let v = match pearson(&columns[i], &columns[j]) {
                Ok(v) => Some(v),
                Err(Error::UndefinedCorrelation(_)) => None,
                Err(e) => return Err(e),
            };
            r[i][j] = v;
            r[j][i] = v;
        }
    }
    let histograms = columns
        .iter()
        .map(|c| histogram(c, bins))
        .collect::<Result<Vec<_>>>()?;
    let names = m.column_names();
    let mut pairs = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        for j in i + 1..d {
            let fit = least_squares(&columns[i], &columns[j]);
            pairs.push(ScatterPair {
                x: i,
                y: j,
                x_name: names[i].clone(),
                y_name: names[j].clone(),
                slope: fit.map(|f| f.0),
                intercept: fit.map(|f| f.1),
                points: columns[i].iter().copied().zip(columns[j].iter().copied()).collect(),
            });
        }
    }
    Ok(CorrelationReport {
        variables: names.to_vec(),
        n,
        r,
        histograms,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        // cov-sum 3, deviation sums 5 and 5
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r - 0.6).abs() < 1e-15);
    }

    #[test]
    fn pearson_errors() {
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(pearson(&[1.0], &[1.0]), Err(Error::InsufficientData(_))));
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn identical_columns_and_pair_count() {
        let rows = (0..10)
            .map(|i| {
                let t = i as f64;
                vec![t, t, t * t, (t * 0.7).sin()]
            })
            .collect();
        let m = FeatureMatrix::from_rows(rows).unwrap();
        let rep = correlation_report(&m, 5).unwrap();
        assert_eq!(rep.get(0, 1), Some(1.0));
        assert_eq!(rep.pairs.len(), 6);
        for i in 0..4 {
            assert_eq!(rep.get(i, i), Some(1.0));
            for j in 0..4 {
                assert_eq!(rep.get(i, j), rep.get(j, i));
            }
            assert_eq!(rep.histograms[i].counts.iter().sum::<usize>(), 10);
            assert_eq!(rep.histograms[i].edges.len(), 6);
        }
        let p = &rep.pairs[0];
        assert!((p.slope.unwrap() - 1.0).abs() < 1e-12);
        assert!(p.to_csv().starts_with("x0,x1\n0,0\n1,1\n"));
    }

    #[test]
    fn constant_column_is_flagged() {
        let m = FeatureMatrix::from_rows(vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]]).unwrap();
        let rep = correlation_report(&m, 3).unwrap();
        assert_eq!(rep.get(0, 1), None);
        assert_eq!(rep.histograms[1].counts, vec![3, 0, 0]);
        assert!(matches!(
            correlation_report(&FeatureMatrix::from_rows(vec![vec![1.0, 2.0]]).unwrap(), 3),
            Err(Error::InsufficientData(_))
        ));
    }
}
