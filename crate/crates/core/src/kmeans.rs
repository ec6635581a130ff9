//! k-means clustering: k-means++ seeding, Lloyd iterations, replicate
//! restarts and an optional preliminary pass on a random subsample.
//!
//! The objective is the within-cluster sum of distances
//! `J = sum_k sum_{i in c_k} dist(x_i, m_k)`, which for the default squared
//! Euclidean distance is the usual sum of squared errors.

use std::cmp::Ordering;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{argmin, Assignment};
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    SquaredEuclidean,
    /// `1 - cos(x, c)`; zero vectors are at distance 1 from everything.
    Cosine,
}

impl Distance {
    pub fn eval(self, x: &[f64], c: &[f64]) -> f64 {
        match self {
            Distance::SquaredEuclidean => x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum(),
            Distance::Cosine => {
                let nx = norm(x);
                let nc = norm(c);
                if nx == 0.0 || nc == 0.0 {
                    return 1.0;
                }
                let dot: f64 = x.iter().zip(c).map(|(a, b)| a * b).sum();
                (1.0 - dot / (nx * nc)).max(0.0)
            }
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMeansInit {
    #[default]
    KMeansPlusPlus,
    /// Seed each replicate from a k-means fit on a random subsample.
    PreliminarySubsample,
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub distance: Distance,
    pub replicates: usize,
    pub max_iter: usize,
    /// Stop once the relative improvement of J drops to this value or below.
    pub tol: f64,
    pub init: KMeansInit,
    pub subsample_fraction: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            distance: Distance::SquaredEuclidean,
            replicates: 5,
            max_iter: 100,
            tol: 1e-9,
            init: KMeansInit::KMeansPlusPlus,
            subsample_fraction: 0.10,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_replicates(mut self, replicates: usize) -> Self {
        self.replicates = replicates;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be at least 1".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "subsample fraction must be in (0, 1], got {}",
                self.subsample_fraction
            )));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig("tol must be non-negative".into()));
        }
        if let KMeansInit::Explicit(c) = &self.init {
            if c.len() != self.k {
                return Err(Error::InvalidConfig(format!(
                    "explicit init has {} centroids, k is {}",
                    c.len(),
                    self.k
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMeansModel {
    pub distance: Distance,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub replicate_chosen: usize,
    /// J after the initial assignment and after every iteration.
    pub history: Vec<f64>,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Recomputes J from the stored centroids and assignments.
    pub fn recompute_objective(&self, m: &FeatureMatrix) -> f64 {
        m.rows()
            .zip(&self.assignments)
            .map(|(x, &c)| self.distance.eval(x, &self.centroids[c]))
            .sum()
    }
}

pub(crate) fn distinct_row_count(m: &FeatureMatrix) -> usize {
    let mut rows: Vec<&[f64]> = m.rows().collect();
    let cmp = |a: &&[f64], b: &&[f64]| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    };
    rows.sort_by(cmp);
    rows.dedup_by(|a, b| cmp(a, b) == Ordering::Equal);
    rows.len()
}

/// k-means++ seeding: the first centroid is a uniformly chosen row, each
/// further one is drawn with probability proportional to its distance
/// (squared Euclidean by default) to the nearest centroid chosen so far.
pub fn kmeanspp_init<R: Rng + ?Sized>(
    m: &FeatureMatrix,
    k: usize,
    distance: Distance,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let n = m.n_rows();
    if n == 0 {
        return Err(Error::EmptyInput("k-means++ on empty matrix".into()));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let distinct = distinct_row_count(m);
    if k > distinct {
        return Err(Error::InsufficientData(format!(
            "k = {k} exceeds the {distinct} distinct rows"
        )));
    }
    let first = rng.random_range(0..n);
    let mut centroids = vec![m.row(first).to_vec()];
    let mut nearest: Vec<f64> = m.rows().map(|x| distance.eval(x, &centroids[0])).collect();
    while centroids.len() < k {
        let pick = WeightedIndex::new(&nearest)
            .map_err(|_| {
                Error::InsufficientData(format!(
                    "only {} rows are separable under {distance:?}, k = {k}",
                    centroids.len()
                ))
            })?
            .sample(rng);
        let c = m.row(pick).to_vec();
        for (d, x) in nearest.iter_mut().zip(m.rows()) {
            *d = d.min(distance.eval(x, &c));
        }
        centroids.push(c);
    }
    Ok(centroids)
}

fn assign(m: &FeatureMatrix, centroids: &[Vec<f64>], distance: Distance) -> (Vec<usize>, Vec<f64>) {
    m.rows()
        .map(|x| argmin(centroids.iter().map(|c| distance.eval(x, c))))
        .unzip()
}

fn seed_centroid(x: &[f64], distance: Distance) -> Vec<f64> {
    match distance {
        Distance::SquaredEuclidean => x.to_vec(),
        Distance::Cosine => {
            let n = norm(x);
            if n > 0.0 {
                x.iter().map(|v| v / n).collect()
            } else {
                x.to_vec()
            }
        }
    }
}

/// Gives every empty cluster the point farthest from its own centroid,
/// taken from clusters that keep at least one other member.
fn repair_empty(
    m: &FeatureMatrix,
    labels: &mut [usize],
    dists: &mut [f64],
    centroids: &mut [Vec<f64>],
    distance: Distance,
) -> usize {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    let mut repaired = 0;
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut best: Option<usize> = None;
        for i in 0..labels.len() {
            if counts[labels[i]] > 1 && best.is_none_or(|b| dists[i] > dists[b]) {
                best = Some(i);
            }
        }
        let Some(i) = best else { break };
        counts[labels[i]] -= 1;
        counts[c] = 1;
        labels[i] = c;
        centroids[c] = seed_centroid(m.row(i), distance);
        dists[i] = distance.eval(m.row(i), &centroids[c]);
        repaired += 1;
    }
    repaired
}

fn update_centroids(m: &FeatureMatrix, labels: &[usize], centroids: &mut [Vec<f64>], distance: Distance) {
    let k = centroids.len();
    let d = m.n_cols();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (x, &l) in m.rows().zip(labels) {
        counts[l] += 1;
        match distance {
            Distance::SquaredEuclidean => {
                for (s, v) in sums[l].iter_mut().zip(x) {
                    *s += v;
                }
            }
            Distance::Cosine => {
                let nx = norm(x);
                if nx > 0.0 {
                    for (s, v) in sums[l].iter_mut().zip(x) {
                        *s += v / nx;
                    }
                }
            }
        }
    }
    for ((c, s), &count) in centroids.iter_mut().zip(sums).zip(&counts) {
        if count == 0 {
            continue;
        }
        match distance {
            Distance::SquaredEuclidean => {
                *c = s.into_iter().map(|v| v / count as f64).collect();
            }
            Distance::Cosine => {
                let ns = norm(&s);
                if ns > 0.0 {
                    *c = s.into_iter().map(|v| v / ns).collect();
                }
            }
        }
    }
}

/// Lloyd iterations from the given centroids.
///
/// Assignment ties go to the lowest cluster index; clusters that empty out
/// are re-seeded with the point farthest from its centroid. Stops when the
/// assignment no longer changes, when the relative improvement of J is at
/// most `cfg.tol`, or after `cfg.max_iter` iterations.
pub fn lloyd(m: &FeatureMatrix, init: &[Vec<f64>], cfg: &KMeansConfig) -> Result<KMeansModel> {
    let n = m.n_rows();
    let k = init.len();
    if n == 0 {
        return Err(Error::EmptyInput("k-means on empty matrix".into()));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("no initial centroids".into()));
    }
    if k > n {
        return Err(Error::InsufficientData(format!("k = {k} exceeds n = {n}")));
    }
    for (i, c) in init.iter().enumerate() {
        m.ensure_cols(c.len())?;
        if let Some(j) = c.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, col: j });
        }
        if init[..i].contains(c) {
            return Err(Error::InvalidData(format!("initial centroid {i} duplicates an earlier one")));
        }
    }

    let distance = cfg.distance;
    let mut centroids = init.to_vec();
    let (mut labels, mut dists) = assign(m, &centroids, distance);
    repair_empty(m, &mut labels, &mut dists, &mut centroids, distance);
    let mut objective: f64 = dists.iter().sum();
    let mut history = vec![objective];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        update_centroids(m, &labels, &mut centroids, distance);
        let (mut next, mut next_dists) = assign(m, &centroids, distance);
        repair_empty(m, &mut next, &mut next_dists, &mut centroids, distance);
        let next_objective: f64 = next_dists.iter().sum();
        history.push(next_objective);
        let unchanged = next == labels;
        let improvement = objective - next_objective;
        let threshold = cfg.tol * objective.abs();
        labels = next;
        objective = next_objective;
        if unchanged || improvement <= threshold {
            converged = true;
            break;
        }
    }

    Ok(KMeansModel {
        distance,
        centroids,
        assignments: labels,
        objective,
        iterations,
        converged,
        replicate_chosen: 0,
        history,
    })
}

/// Size of the preliminary subsample: `ceil(fraction * n)`.
pub fn subsample_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).ceil() as usize).min(n)
}

/// Clusters a random `ceil(fraction * n)` subsample (k-means++ seeded) and
/// returns its centroids. With `fraction = 1` the full matrix is used as is.
pub fn preliminary_phase<R: Rng + ?Sized>(
    m: &FeatureMatrix,
    cfg: &KMeansConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let n = m.n_rows();
    let size = subsample_size(n, cfg.subsample_fraction);
    if size < cfg.k {
        return Err(Error::InsufficientData(format!(
            "subsample of {size} rows is smaller than k = {}",
            cfg.k
        )));
    }
    let model = if size == n {
        let init = kmeanspp_init(m, cfg.k, cfg.distance, rng)?;
        lloyd(m, &init, cfg)?
    } else {
        let mut picked = index::sample(rng, n, size).into_vec();
        picked.sort_unstable();
        let sub = m.select_rows(&picked);
        let init = kmeanspp_init(&sub, cfg.k, cfg.distance, rng)?;
        lloyd(&sub, &init, cfg)?
    };
    Ok(model.centroids)
}

/// RNG for one replicate; replicate `r` uses `seed + r`.
pub fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(replicate as u64))
}

/// Runs `cfg.replicates` seeded fits and keeps the one with the smallest J
/// (earliest replicate on ties).
pub fn kmeans_fit(m: &FeatureMatrix, cfg: &KMeansConfig) -> Result<KMeansModel> {
    cfg.validate()?;
    let n = m.n_rows();
    if n < cfg.k {
        return Err(Error::InsufficientData(format!("k = {} exceeds n = {n}", cfg.k)));
    }
    let mut best: Option<KMeansModel> = None;
    for r in 0..cfg.replicates {
        let mut rng = replicate_rng(cfg.seed, r);
        let init = match &cfg.init {
            KMeansInit::KMeansPlusPlus => kmeanspp_init(m, cfg.k, cfg.distance, &mut rng)?,
            KMeansInit::PreliminarySubsample => preliminary_phase(m, cfg, &mut rng)?,
            KMeansInit::Explicit(c) => c.clone(),
        };
        let mut model = lloyd(m, &init, cfg)?;
        model.replicate_chosen = r;
        if best.as_ref().is_none_or(|b| model.objective < b.objective) {
            best = Some(model);
        }
    }
    Ok(best.expect("replicates >= 1"))
}

/// Nearest-centroid assignment under the model's distance.
pub fn kmeans_predict(model: &KMeansModel, m: &FeatureMatrix) -> Result<Assignment> {
    m.ensure_cols(model.dim())?;
    let (labels, _) = assign(m, &model.centroids, model.distance);
    Ok(Assignment::hard(labels))
}
