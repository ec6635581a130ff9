//! Gaussian mixture clustering fitted by expectation-maximization.
//!
//! Four covariance structures are supported: diagonal or full, each either
//! shared by all components or estimated per component. The E-step works in
//! the log domain so well-separated components never underflow.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::assignment::{argmax, Assignment};
use crate::error::{Error, Result};
use crate::kmeans::{kmeanspp_init, replicate_rng, Distance};
use crate::matrix::FeatureMatrix;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceShape {
    /// Off-diagonal entries fixed at zero (uncorrelated features).
    Diagonal,
    #[default]
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceSharing {
    /// One covariance matrix pooled over all components.
    Shared,
    #[default]
    Unshared,
}

/// One of the four (shape, sharing) combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovarianceStructure {
    pub shape: CovarianceShape,
    pub sharing: CovarianceSharing,
}

impl CovarianceStructure {
    pub const ALL: [CovarianceStructure; 4] = [
        CovarianceStructure::new(CovarianceShape::Diagonal, CovarianceSharing::Shared),
        CovarianceStructure::new(CovarianceShape::Full, CovarianceSharing::Shared),
        CovarianceStructure::new(CovarianceShape::Diagonal, CovarianceSharing::Unshared),
        CovarianceStructure::new(CovarianceShape::Full, CovarianceSharing::Unshared),
    ];

    pub const fn new(shape: CovarianceShape, sharing: CovarianceSharing) -> Self {
        Self { shape, sharing }
    }
}

impl fmt::Display for CovarianceStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shape = match self.shape {
            CovarianceShape::Diagonal => "diagonal",
            CovarianceShape::Full => "full",
        };
        let sharing = match self.sharing {
            CovarianceSharing::Shared => "shared",
            CovarianceSharing::Unshared => "unshared",
        };
        write!(f, "{shape}_{sharing}")
    }
}

impl FromStr for CovarianceStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown covariance structure `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub k: usize,
    pub covariance_shape: CovarianceShape,
    pub covariance_sharing: CovarianceSharing,
    /// Relative log-likelihood improvement at which EM stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Ridge added to every covariance diagonal in each M-step.
    pub regularization: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl GmmConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            covariance_shape: CovarianceShape::Full,
            covariance_sharing: CovarianceSharing::Unshared,
            tol: 1e-6,
            max_iter: 1000,
            regularization: 1e-6,
            replicates: 5,
            seed: 0,
        }
    }

    pub fn with_structure(mut self, s: CovarianceStructure) -> Self {
        self.covariance_shape = s.shape;
        self.covariance_sharing = s.sharing;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn structure(&self) -> CovarianceStructure {
        CovarianceStructure::new(self.covariance_shape, self.covariance_sharing)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be at least 1".into()));
        }
        if !(self.regularization >= 0.0) || !self.regularization.is_finite() {
            return Err(Error::InvalidConfig("regularization must be finite and >= 0".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig("tol must be non-negative".into()));
        }
        Ok(())
    }
}

fn serialize_matrices<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<Vec<f64>>> = ms
        .iter()
        .map(|m| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
        .collect();
    rows.serialize(s)
}

/// Mixture parameters: weights, means and covariances of K components.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Full `d x d` matrices even for diagonal shape.
    #[serde(serialize_with = "serialize_matrices")]
    pub covariances: Vec<DMatrix<f64>>,
}

impl Mixture {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GmmModel {
    #[serde(flatten)]
    pub mixture: Mixture,
    pub covariance_shape: CovarianceShape,
    pub covariance_sharing: CovarianceSharing,
    pub regularization: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Whether a collapsed component had to be re-seeded.
    pub reseeded: bool,
    pub replicate_chosen: usize,
    /// Log-likelihood of every accepted step (restarted after a re-seed).
    pub history: Vec<f64>,
}

/// `n x K` posterior membership probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    rows: Vec<Vec<f64>>,
}

impl Responsibilities {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn k(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Cholesky-factored Gaussian ready for repeated log-density evaluation.
struct FactoredGaussian<'a> {
    mean: &'a [f64],
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl<'a> FactoredGaussian<'a> {
    fn new(mean: &'a [f64], cov: &DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: cov.nrows(),
            });
        }
        let chol = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self {
            mean,
            chol,
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
        })
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        let dev = DVector::from_iterator(x.len(), x.iter().zip(self.mean).map(|(a, b)| a - b));
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&dev)
            .expect("cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

/// `log N(x; mean, cov)` via a Cholesky factorization.
pub fn gaussian_log_pdf(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    if x.len() != mean.len() {
        return Err(Error::DimensionMismatch {
            expected: mean.len(),
            found: x.len(),
        });
    }
    Ok(FactoredGaussian::new(mean, cov)?.log_pdf(x))
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Posterior responsibilities and total log-likelihood under `mixture`.
pub fn e_step(mixture: &Mixture, m: &FeatureMatrix) -> Result<(Responsibilities, f64)> {
    m.ensure_cols(mixture.dim())?;
    let components = mixture
        .means
        .iter()
        .zip(&mixture.covariances)
        .map(|(mu, cov)| FactoredGaussian::new(mu, cov))
        .collect::<Result<Vec<_>>>()?;
    let log_w: Vec<f64> = mixture.weights.iter().map(|w| w.ln()).collect();
    let mut rows = Vec::with_capacity(m.n_rows());
    let mut total = 0.0;
    let mut buf = vec![0.0; components.len()];
    for x in m.rows() {
        for ((b, g), lw) in buf.iter_mut().zip(&components).zip(&log_w) {
            *b = lw + g.log_pdf(x);
        }
        let lse = log_sum_exp(&buf);
        total += lse;
        let mut r: Vec<f64> = buf.iter().map(|l| (l - lse).exp()).collect();
        let s: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= s);
        rows.push(r);
    }
    Ok((Responsibilities::new(rows), total))
}

fn shape_and_ridge(mut cov: DMatrix<f64>, shape: CovarianceShape, ridge: f64) -> DMatrix<f64> {
    let d = cov.nrows();
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            cov[(i, j)] = match shape {
                CovarianceShape::Diagonal => 0.0,
                CovarianceShape::Full if j > i => cov[(i, j)],
                CovarianceShape::Full => cov[(j, i)],
            };
        }
        cov[(i, i)] += ridge;
    }
    cov
}

/// Maximization step: weights, means and (shaped, pooled, ridged)
/// covariances from the responsibilities.
pub fn m_step(m: &FeatureMatrix, r: &Responsibilities, cfg: &GmmConfig) -> Result<Mixture> {
    let n = m.n_rows();
    let d = m.n_cols();
    if r.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: r.n(),
        });
    }
    let k = r.k();
    let mut mass = vec![0.0; k];
    let mut means = vec![vec![0.0; d]; k];
    for (x, row) in m.rows().zip(r.rows()) {
        for j in 0..k {
            mass[j] += row[j];
            for (mu, v) in means[j].iter_mut().zip(x) {
                *mu += row[j] * v;
            }
        }
    }
    let floor = f64::EPSILON * n as f64;
    if let Some(j) = mass.iter().position(|&w| !(w > floor)) {
        return Err(Error::ComponentCollapse {
            component: j,
            mass: mass[j],
        });
    }
    for (mu, &w) in means.iter_mut().zip(&mass) {
        mu.iter_mut().for_each(|v| *v /= w);
    }

    let mut scatter = vec![DMatrix::<f64>::zeros(d, d); k];
    for (x, row) in m.rows().zip(r.rows()) {
        for j in 0..k {
            let dev = DVector::from_iterator(d, x.iter().zip(&means[j]).map(|(a, b)| a - b));
            scatter[j].ger(row[j], &dev, &dev, 1.0);
        }
    }
    let shape = cfg.covariance_shape;
    let ridge = cfg.regularization;
    let covariances = match cfg.covariance_sharing {
        CovarianceSharing::Unshared => scatter
            .into_iter()
            .zip(&mass)
            .map(|(s, &w)| shape_and_ridge(s / w, shape, ridge))
            .collect(),
        CovarianceSharing::Shared => {
            let pooled = scatter.into_iter().fold(DMatrix::zeros(d, d), |acc, s| acc + s) / n as f64;
            vec![shape_and_ridge(pooled, shape, ridge); k]
        }
    };
    let weights = mass.iter().map(|w| w / n as f64).collect();
    Ok(Mixture {
        weights,
        means,
        covariances,
    })
}

fn initial_mixture<R: Rng + ?Sized>(m: &FeatureMatrix, cfg: &GmmConfig, rng: &mut R) -> Result<Mixture> {
    let means = kmeanspp_init(m, cfg.k, Distance::SquaredEuclidean, rng)?;
    let global = shape_and_ridge(m.covariance(0), cfg.covariance_shape, cfg.regularization);
    Ok(Mixture {
        weights: vec![1.0 / cfg.k as f64; cfg.k],
        means,
        covariances: vec![global; cfg.k],
    })
}

fn reseed<R: Rng + ?Sized>(mixture: &mut Mixture, component: usize, m: &FeatureMatrix, cfg: &GmmConfig, rng: &mut R) {
    let row = rng.random_range(0..m.n_rows());
    mixture.means[component] = m.row(row).to_vec();
    if cfg.covariance_sharing == CovarianceSharing::Unshared {
        mixture.covariances[component] = shape_and_ridge(m.covariance(0), cfg.covariance_shape, cfg.regularization);
    }
    mixture.weights[component] = 1.0 / cfg.k as f64;
    let s: f64 = mixture.weights.iter().sum();
    mixture.weights.iter_mut().for_each(|w| *w /= s);
}

fn fit_once<R: Rng + ?Sized>(m: &FeatureMatrix, cfg: &GmmConfig, rng: &mut R) -> Result<GmmModel> {
    let mut mixture = initial_mixture(m, cfg, rng)?;
    let (mut resp, mut ll) = e_step(&mixture, m)?;
    let mut history = vec![ll];
    let mut reseeded = false;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let next = match m_step(m, &resp, cfg) {
            Ok(next) => next,
            Err(Error::ComponentCollapse { component, mass }) => {
                if reseeded {
                    return Err(Error::ComponentCollapse { component, mass });
                }
                reseeded = true;
                reseed(&mut mixture, component, m, cfg, rng);
                (resp, ll) = e_step(&mixture, m)?;
                history = vec![ll];
                continue;
            }
            Err(e) => return Err(e),
        };
        let (next_resp, next_ll) = e_step(&next, m)?;
        let improvement = next_ll - ll;
        // the ridge makes the M-step inexact; a step that loses likelihood
        // is discarded and the previous parameters are final
        if improvement < 0.0 {
            converged = true;
            break;
        }
        history.push(next_ll);
        mixture = next;
        resp = next_resp;
        ll = next_ll;
        if improvement <= cfg.tol * ll.abs() {
            converged = true;
            break;
        }
    }
    Ok(GmmModel {
        mixture,
        covariance_shape: cfg.covariance_shape,
        covariance_sharing: cfg.covariance_sharing,
        regularization: cfg.regularization,
        log_likelihood: ll,
        iterations,
        converged,
        reseeded,
        replicate_chosen: 0,
        history,
    })
}

/// EM from k-means++ means, uniform weights and the global covariance;
/// keeps the replicate with the highest final log-likelihood.
pub fn gmm_fit(m: &FeatureMatrix, cfg: &GmmConfig) -> Result<GmmModel> {
    cfg.validate()?;
    let n = m.n_rows();
    if n <= cfg.k {
        return Err(Error::InsufficientData(format!("gmm needs n > k (n = {n}, k = {})", cfg.k)));
    }
    let mut best: Option<GmmModel> = None;
    for r in 0..cfg.replicates {
        let mut rng = replicate_rng(cfg.seed, r);
        let mut model = fit_once(m, cfg, &mut rng)?;
        model.replicate_chosen = r;
        if best.as_ref().is_none_or(|b| model.log_likelihood > b.log_likelihood) {
            best = Some(model);
        }
    }
    Ok(best.expect("replicates >= 1"))
}

/// Hard assignment by maximum posterior, keeping the soft responsibilities.
pub fn gmm_cluster(model: &GmmModel, m: &FeatureMatrix) -> Result<Assignment> {
    let (resp, _) = e_step(&model.mixture, m)?;
    Ok(assignment_from(resp))
}

pub fn assignment_from(resp: Responsibilities) -> Assignment {
    let labels = resp.rows().iter().map(|r| argmax(r)).collect();
    Assignment {
        labels,
        responsibilities: Some(resp.into_rows()),
    }
}
