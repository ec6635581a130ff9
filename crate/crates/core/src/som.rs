//! Batch self-organizing map on a hexagonal grid.
//!
//! Neurons are laid out row by row with odd rows shifted half a cell to the
//! right. Each neuron carries axial hex coordinates `(q, r)` and a position in
//! the plane with unit spacing between adjacent neurons. Grid distance is the
//! hex hop count.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::argmin;
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

const AXIAL_DIRECTIONS: [(i64, i64); 6] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SomInit {
    /// Each weight is a randomly drawn data row.
    RandomSample,
    /// Weights span the plane of the first two principal axes.
    #[default]
    LinearSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomConfig {
    pub rows: usize,
    pub cols: usize,
    pub epochs: usize,
    pub initial_radius: f64,
    pub final_radius: f64,
    pub init: SomInit,
    pub seed: u64,
}

impl SomConfig {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            epochs: 200,
            initial_radius: (rows.max(cols) as f64 / 2.0).max(1.0),
            final_radius: 1.0,
            init: SomInit::LinearSpan,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidConfig("SOM grid needs at least one neuron".into()));
        }
        if !(self.final_radius > 0.0) || !(self.initial_radius >= self.final_radius) || !self.initial_radius.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "need initial_radius >= final_radius > 0 (got {} and {})",
                self.initial_radius, self.final_radius
            )));
        }
        Ok(())
    }

    /// Neighborhood radius for `epoch`, decaying linearly to `final_radius`
    /// at the last epoch.
    pub fn radius(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.final_radius;
        }
        let t = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        self.initial_radius + (self.final_radius - self.initial_radius) * t
    }
}

impl Default for SomConfig {
    fn default() -> Self {
        Self::new(6, 6)
    }
}

/// Gaussian neighborhood weight `exp(-dist^2 / (2 radius^2))`.
pub fn neighborhood(grid_dist: f64, radius: f64) -> f64 {
    (-(grid_dist * grid_dist) / (2.0 * radius * radius)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Neuron {
    pub index: usize,
    pub row: usize,
    pub col: usize,
    /// Axial hex coordinates.
    pub q: i64,
    pub r: i64,
    /// Plane position with unit spacing between neighbors.
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HexGrid {
    pub rows: usize,
    pub cols: usize,
    pub neurons: Vec<Neuron>,
}

impl HexGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut neurons = Vec::with_capacity(rows * cols);
        for row in 0..rows {
            for col in 0..cols {
                let r = row as i64;
                let q = col as i64 - (r - (r & 1)) / 2;
                neurons.push(Neuron {
                    index: row * cols + col,
                    row,
                    col,
                    q,
                    r,
                    x: col as f64 + if row % 2 == 1 { 0.5 } else { 0.0 },
                    y: row as f64 * 3f64.sqrt() / 2.0,
                });
            }
        }
        Self { rows, cols, neurons }
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    fn index_of_axial(&self, q: i64, r: i64) -> Option<usize> {
        if r < 0 || r >= self.rows as i64 {
            return None;
        }
        let col = q + (r - (r & 1)) / 2;
        (col >= 0 && col < self.cols as i64).then(|| r as usize * self.cols + col as usize)
    }

    /// Hex neighbors of neuron `i`, ascending.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let n = &self.neurons[i];
        let mut out: Vec<usize> = AXIAL_DIRECTIONS
            .iter()
            .filter_map(|(dq, dr)| self.index_of_axial(n.q + dq, n.r + dr))
            .collect();
        out.sort_unstable();
        out
    }

    /// Every adjacent pair `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .flat_map(|a| self.neighbors(a).into_iter().filter(move |&b| b > a).map(move |b| (a, b)))
            .collect()
    }

    /// Hop count between two neurons.
    pub fn grid_distance(&self, a: usize, b: usize) -> u64 {
        let (na, nb) = (&self.neurons[a], &self.neurons[b]);
        let dq = na.q - nb.q;
        let dr = na.r - nb.r;
        ((dq.abs() + dr.abs() + (dq + dr).abs()) / 2) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SomModel {
    pub grid: HexGrid,
    /// `rows * cols` weight vectors, indexed like `grid.neurons`.
    pub weights: Vec<Vec<f64>>,
    pub trained_epochs: usize,
}

impl SomModel {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn n_neurons(&self) -> usize {
        self.weights.len()
    }
}

/// Initial weights for a `cfg.rows x cfg.cols` map.
pub fn som_init(m: &FeatureMatrix, cfg: &SomConfig) -> Result<SomModel> {
    cfg.validate()?;
    let n = m.n_rows();
    if n == 0 {
        return Err(Error::EmptyInput("SOM on empty matrix".into()));
    }
    let grid = HexGrid::new(cfg.rows, cfg.cols);
    let weights = match cfg.init {
        SomInit::RandomSample => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..grid.len()).map(|_| m.row(rng.random_range(0..n)).to_vec()).collect()
        }
        SomInit::LinearSpan => linear_span(m, &grid),
    };
    Ok(SomModel {
        grid,
        weights,
        trained_epochs: 0,
    })
}

fn linear_span(m: &FeatureMatrix, grid: &HexGrid) -> Vec<Vec<f64>> {
    let d = m.n_cols();
    let mean = m.mean();
    if m.n_rows() < 2 {
        return vec![mean; grid.len()];
    }
    let eig = SymmetricEigen::new(m.covariance(1));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axis = |rank: usize| -> Vec<f64> {
        order.get(rank).map_or_else(
            || vec![0.0; d],
            |&i| {
                let sd = eig.eigenvalues[i].max(0.0).sqrt();
                eig.eigenvectors.column(i).iter().map(|v| v * sd).collect()
            },
        )
    };
    let (a1, a2) = (axis(0), axis(1));
    let span = |i: usize, len: usize| if len > 1 { 2.0 * i as f64 / (len - 1) as f64 - 1.0 } else { 0.0 };
    grid.neurons
        .iter()
        .map(|nr| {
            let s1 = span(nr.col, grid.cols);
            let s2 = span(nr.row, grid.rows);
            (0..d).map(|j| mean[j] + s1 * a1[j] + s2 * a2[j]).collect()
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn bmu_unchecked(weights: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    argmin(weights.iter().map(|w| sq_dist(w, x)))
}

/// Best-matching unit: nearest weight in Euclidean distance, ties to the
/// lowest index.
pub fn bmu(model: &SomModel, x: &[f64]) -> Result<usize> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: x.len(),
        });
    }
    Ok(bmu_unchecked(&model.weights, x).0)
}

/// Batch training. In every epoch each row is mapped to its BMU, then each
/// neuron moves to the neighborhood-weighted mean of all rows. Neurons with
/// zero total neighborhood mass keep their weight.
pub fn som_train(model: &SomModel, m: &FeatureMatrix, cfg: &SomConfig) -> Result<SomModel> {
    cfg.validate()?;
    if m.is_empty() {
        return Err(Error::EmptyInput("SOM training on empty matrix".into()));
    }
    m.ensure_cols(model.dim())?;
    if cfg.rows != model.grid.rows || cfg.cols != model.grid.cols {
        return Err(Error::InvalidConfig(format!(
            "config grid {}x{} does not match model grid {}x{}",
            cfg.rows, cfg.cols, model.grid.rows, model.grid.cols
        )));
    }
    let grid = &model.grid;
    let units = grid.len();
    let d = model.dim();
    let hops: Vec<f64> = (0..units * units)
        .map(|ab| grid.grid_distance(ab / units, ab % units) as f64)
        .collect();

    let mut weights = model.weights.clone();
    let mut sums = vec![vec![0.0; d]; units];
    let mut counts = vec![0usize; units];
    for epoch in 0..cfg.epochs {
        let radius = cfg.radius(epoch);
        sums.iter_mut().for_each(|s| s.iter_mut().for_each(|v| *v = 0.0));
        counts.iter_mut().for_each(|c| *c = 0);
        for x in m.rows() {
            let (b, _) = bmu_unchecked(&weights, x);
            counts[b] += 1;
            for (s, v) in sums[b].iter_mut().zip(x) {
                *s += v;
            }
        }
        let hits: Vec<usize> = (0..units).filter(|&b| counts[b] > 0).collect();
        for (j, w) in weights.iter_mut().enumerate() {
            let mut num = vec![0.0; d];
            let mut den = 0.0;
            for &b in &hits {
                let h = neighborhood(hops[j * units + b], radius);
                den += h * counts[b] as f64;
                for (acc, s) in num.iter_mut().zip(&sums[b]) {
                    *acc += h * s;
                }
            }
            if den > 0.0 {
                *w = num.into_iter().map(|v| v / den).collect();
            }
        }
    }
    Ok(SomModel {
        grid: grid.clone(),
        weights,
        trained_epochs: model.trained_epochs + cfg.epochs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UEdge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UMatrix {
    pub edges: Vec<UEdge>,
    /// Mean distance over each neuron's incident edges (0 for isolated neurons).
    pub neuron_mean: Vec<f64>,
}

/// Weight-space distance across every hex adjacency.
pub fn u_matrix(model: &SomModel) -> UMatrix {
    let edges: Vec<UEdge> = model
        .grid
        .edges()
        .into_iter()
        .map(|(a, b)| UEdge {
            a,
            b,
            distance: sq_dist(&model.weights[a], &model.weights[b]).sqrt(),
        })
        .collect();
    let mut total = vec![0.0; model.n_neurons()];
    let mut degree = vec![0usize; model.n_neurons()];
    for e in &edges {
        for v in [e.a, e.b] {
            total[v] += e.distance;
            degree[v] += 1;
        }
    }
    let neuron_mean = total
        .iter()
        .zip(&degree)
        .map(|(&t, &deg)| if deg > 0 { t / deg as f64 } else { 0.0 })
        .collect();
    UMatrix { edges, neuron_mean }
}

/// Number of rows whose BMU is each neuron.
pub fn sample_hits(model: &SomModel, m: &FeatureMatrix) -> Result<Vec<usize>> {
    let mut hits = vec![0; model.n_neurons()];
    if m.is_empty() {
        return Ok(hits);
    }
    m.ensure_cols(model.dim())?;
    for x in m.rows() {
        hits[bmu_unchecked(&model.weights, x).0] += 1;
    }
    Ok(hits)
}

/// BMU index of every row.
pub fn bmu_labels(model: &SomModel, m: &FeatureMatrix) -> Result<Vec<usize>> {
    m.ensure_cols(model.dim())?;
    Ok(m.rows().map(|x| bmu_unchecked(&model.weights, x).0).collect())
}

/// Mean Euclidean distance from each row to its BMU weight.
pub fn quantization_error(model: &SomModel, m: &FeatureMatrix) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::EmptyInput("quantization error of empty matrix".into()));
    }
    m.ensure_cols(model.dim())?;
    let total: f64 = m.rows().map(|x| bmu_unchecked(&model.weights, x).1.sqrt()).sum();
    Ok(total / m.n_rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent edge count: every unordered neuron pair whose plane
    /// positions are exactly one unit apart.
    fn brute_edge_count(rows: usize, cols: usize) -> usize {
        let g = HexGrid::new(rows, cols);
        let mut count = 0;
        for a in 0..g.len() {
            for b in a + 1..g.len() {
                let (na, nb) = (&g.neurons[a], &g.neurons[b]);
                let d = ((na.x - nb.x).powi(2) + (na.y - nb.y).powi(2)).sqrt();
                if (d - 1.0).abs() < 1e-9 {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn six_by_six_has_85_edges() {
        assert_eq!(brute_edge_count(6, 6), 85);
        assert_eq!(HexGrid::new(6, 6).edges().len(), 85);
        for (r, c) in [(1, 1), (1, 2), (2, 2), (3, 5), (5, 3), (4, 7)] {
            assert_eq!(HexGrid::new(r, c).edges().len(), brute_edge_count(r, c), "{r}x{c}");
        }
    }

    #[test]
    fn interior_neurons_have_six_neighbors() {
        let g = HexGrid::new(6, 6);
        for nr in &g.neurons {
            let interior = nr.row > 0 && nr.row < 5 && nr.col > 0 && nr.col < 5;
            if interior {
                assert_eq!(g.neighbors(nr.index).len(), 6);
            }
            for b in g.neighbors(nr.index) {
                assert!(g.neighbors(b).contains(&nr.index));
                assert_eq!(g.grid_distance(nr.index, b), 1);
            }
        }
        assert_eq!(g.grid_distance(0, 35), 8);
    }

    #[test]
    fn radius_schedule_and_neighborhood() {
        let cfg = SomConfig::default();
        assert_eq!(cfg.radius(0), 3.0);
        assert_eq!(cfg.radius(199), 1.0);
        for e in 1..cfg.epochs {
            assert!(cfg.radius(e) <= cfg.radius(e - 1));
        }
        assert_eq!(neighborhood(0.0, 2.0), 1.0);
        assert!(neighborhood(1.0, 2.0) > neighborhood(2.0, 2.0));
    }

    fn data() -> FeatureMatrix {
        FeatureMatrix::from_rows((0..57).map(|i| vec![i as f64, (i * i % 13) as f64]).collect()).unwrap()
    }

    #[test]
    fn one_by_one_grid() {
        let m = data();
        let cfg = SomConfig {
            init: SomInit::RandomSample,
            ..SomConfig::new(1, 1).with_seed(3)
        };
        let init = som_init(&m, &cfg).unwrap();
        assert!(m.rows().any(|r| r == init.weights[0].as_slice()));
        let trained = som_train(&init, &m, &cfg).unwrap();
        let mean = m.mean();
        for (a, b) in trained.weights[0].iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(sample_hits(&trained, &m).unwrap(), vec![57]);
        assert_eq!(bmu(&trained, &[1e6, -1e6]).unwrap(), 0);
        let qe = quantization_error(&trained, &m).unwrap();
        let expect = m.rows().map(|r| sq_dist(r, &mean).sqrt()).sum::<f64>() / 57.0;
        assert!((qe - expect).abs() < 1e-9);
    }

    #[test]
    fn six_by_six_init_and_determinism() {
        let m = data();
        let cfg = SomConfig::default().with_seed(11);
        let a = som_init(&m, &cfg).unwrap();
        assert_eq!(a.weights.len(), 36);
        assert_eq!(a, som_init(&m, &cfg).unwrap());
        let sampled = som_init(&m, &SomConfig { init: SomInit::RandomSample, ..cfg.clone() }).unwrap();
        assert_eq!(sampled, som_init(&m, &SomConfig { init: SomInit::RandomSample, ..cfg.clone() }).unwrap());
        assert!(sampled.weights.iter().all(|w| m.rows().any(|r| r == w.as_slice())));
        assert!(matches!(
            som_init(&FeatureMatrix::new(vec![], vec!["a".into()], vec![]).unwrap(), &cfg),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn bmu_ties_and_dimensions() {
        let model = SomModel {
            grid: HexGrid::new(1, 3),
            weights: vec![vec![5.0, 5.0], vec![1.0, 1.0], vec![1.0, 1.0]],
            trained_epochs: 0,
        };
        assert_eq!(bmu(&model, &[1.0, 1.0]).unwrap(), 1);
        assert_eq!(bmu(&model, &[5.0, 5.0]).unwrap(), 0);
        assert!(matches!(bmu(&model, &[1.0]), Err(Error::DimensionMismatch { .. })));
        let empty = FeatureMatrix::new(vec![], vec!["a".into(), "b".into()], vec![]).unwrap();
        assert_eq!(sample_hits(&model, &empty).unwrap(), vec![0, 0, 0]);
        assert!(quantization_error(&model, &empty).is_err());
        let exact = FeatureMatrix::from_rows(vec![vec![5.0, 5.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(quantization_error(&model, &exact).unwrap(), 0.0);
    }

    #[test]
    fn u_matrix_examples() {
        let model = SomModel {
            grid: HexGrid::new(1, 2),
            weights: vec![vec![0.0, 0.0], vec![3.0, 4.0]],
            trained_epochs: 0,
        };
        let u = u_matrix(&model);
        assert_eq!(u.edges, vec![UEdge { a: 0, b: 1, distance: 5.0 }]);
        assert_eq!(u.neuron_mean, vec![5.0, 5.0]);
        let flat = SomModel {
            grid: HexGrid::new(6, 6),
            weights: vec![vec![1.0, 2.0]; 36],
            trained_epochs: 0,
        };
        assert!(u_matrix(&flat).edges.iter().all(|e| e.distance == 0.0));
    }
}
