//! Seeded synthetic data (feature-space mixtures and full sensor sessions)
//! and exact reference computations used to validate the clustering engines.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Modality, SensorStream};
use crate::matrix::{FeatureMatrix, RowKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major `d x d`, symmetric positive semi-definite.
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
    pub n: usize,
    pub seed: u64,
}

/// `mean + factor * z` sampler for one component.
struct ComponentSampler {
    mean: Vec<f64>,
    factor: DMatrix<f64>,
}

impl ComponentSampler {
    fn new(c: &MixtureComponent, index: usize) -> Result<Self> {
        let d = c.mean.len();
        if c.covariance.len() != d || c.covariance.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidConfig(format!("component {index}: covariance must be {d}x{d}")));
        }
        let cov = DMatrix::from_fn(d, d, |i, j| c.covariance[i][j]);
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidConfig(format!("component {index}: covariance is not symmetric")));
        }
        let eig = SymmetricEigen::new(cov);
        if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
            return Err(Error::InvalidConfig(format!(
                "component {index}: covariance is not positive semi-definite"
            )));
        }
        let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        Ok(Self {
            mean: c.mean.clone(),
            factor: &eig.eigenvectors * sqrt,
        })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let d = self.mean.len();
        let z: Vec<f64> = (0..d).map(|_| rng.sample_normal()).collect();
        (0..d)
            .map(|i| self.mean[i] + (0..d).map(|j| self.factor[(i, j)] * z[j]).sum::<f64>())
            .collect()
    }
}

trait NormalExt {
    fn sample_normal(&mut self) -> f64;
}

impl NormalExt for ChaCha8Rng {
    fn sample_normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }
}

fn synthetic_keys(n: usize) -> Vec<RowKey> {
    (0..n).map(|i| RowKey::new("synthetic", i as i64)).collect()
}

fn column_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

/// Draws `spec.n` points; each point's component is sampled from the weights.
pub fn gen_mixture(spec: &MixtureSpec) -> Result<(FeatureMatrix, Vec<usize>)> {
    let first = spec
        .components
        .first()
        .ok_or_else(|| Error::InvalidConfig("mixture needs at least one component".into()))?;
    let d = first.mean.len();
    if d == 0 {
        return Err(Error::InvalidConfig("mixture dimension must be at least 1".into()));
    }
    if spec.components.iter().any(|c| c.mean.len() != d) {
        return Err(Error::InvalidConfig("component means differ in dimension".into()));
    }
    if spec.components.iter().any(|c| !(c.weight > 0.0)) {
        return Err(Error::InvalidConfig("mixture weights must be positive".into()));
    }
    let total: f64 = spec.components.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("mixture weights sum to {total}, not 1")));
    }
    let samplers = spec
        .components
        .iter()
        .enumerate()
        .map(|(i, c)| ComponentSampler::new(c, i))
        .collect::<Result<Vec<_>>>()?;
    let pick = WeightedIndex::new(spec.components.iter().map(|c| c.weight))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let c = pick.sample(&mut rng);
        rows.push(samplers[c].sample(&mut rng));
        labels.push(c);
    }
    let m = FeatureMatrix::new(rows, column_names(d), synthetic_keys(spec.n))?;
    Ok((m, labels))
}

/// Exactly `per_cluster` isotropic Gaussian points around each center.
pub fn gen_blobs(centers: &[Vec<f64>], sd: f64, per_cluster: usize, seed: u64) -> Result<(FeatureMatrix, Vec<usize>)> {
    let d = centers.first().map_or(0, Vec::len);
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(Error::InvalidConfig("blob centers must share a positive dimension".into()));
    }
    if !(sd >= 0.0) || !sd.is_finite() {
        return Err(Error::InvalidConfig(format!("blob sd must be finite and >= 0, got {sd}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(centers.len() * per_cluster);
    let mut labels = Vec::with_capacity(rows.capacity());
    for (label, c) in centers.iter().enumerate() {
        for _ in 0..per_cluster {
            rows.push(c.iter().map(|mu| mu + sd * rng.sample_normal()).collect());
            labels.push(label);
        }
    }
    let n = rows.len();
    Ok((FeatureMatrix::new(rows, column_names(d), synthetic_keys(n))?, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Rest,
    Walk,
    Run,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub hr_mean: f64,
    pub hr_sd: f64,
    /// Acceleration magnitude in g.
    pub accel_mean: f64,
    pub accel_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration_s: u64,
    pub regime: Regime,
}

/// Activity timeline driving the sensor simulator.
///
/// Per second, a latent acceleration magnitude `a` is drawn for the active
/// regime and heart rate is
/// `rest.hr_mean + coupling * (hr_mean - rest.hr_mean + hr_per_g * (a - accel_mean)) + noise`,
/// so `coupling = 0` makes heart rate independent of movement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivitySchedule {
    pub segments: Vec<Segment>,
    pub rest: RegimeParams,
    pub walk: RegimeParams,
    pub run: RegimeParams,
    pub coupling: f64,
    /// Heart-rate response in bpm per g of acceleration above the regime mean.
    pub hr_per_g: f64,
    pub start_ms: i64,
}

impl ActivitySchedule {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self {
            segments,
            rest: RegimeParams { hr_mean: 65.0, hr_sd: 3.0, accel_mean: 1.0, accel_sd: 0.05 },
            walk: RegimeParams { hr_mean: 95.0, hr_sd: 5.0, accel_mean: 1.3, accel_sd: 0.15 },
            run: RegimeParams { hr_mean: 150.0, hr_sd: 8.0, accel_mean: 2.0, accel_sd: 0.3 },
            coupling: 0.8,
            hr_per_g: 20.0,
            // a multiple of the default 6-minute block period
            start_ms: 1_500_001_200_000,
        }
    }

    pub fn rest_only(duration_s: u64) -> Self {
        Self::new(vec![Segment { duration_s, regime: Regime::Rest }])
    }

    /// Repeating rest/walk/run cycle covering `duration_s` seconds.
    pub fn mixed(duration_s: u64) -> Self {
        let cycle = [(240, Regime::Rest), (180, Regime::Walk), (120, Regime::Run), (60, Regime::Walk)];
        let mut segments = Vec::new();
        let mut left = duration_s;
        'outer: loop {
            for (d, regime) in cycle {
                if left == 0 {
                    break 'outer;
                }
                let take = d.min(left);
                segments.push(Segment { duration_s: take, regime });
                left -= take;
            }
        }
        Self::new(segments)
    }

    pub fn with_coupling(mut self, coupling: f64) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn duration_s(&self) -> u64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    pub fn params(&self, regime: Regime) -> RegimeParams {
        match regime {
            Regime::Rest => self.rest,
            Regime::Walk => self.walk,
            Regime::Run => self.run,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::InvalidConfig("activity schedule has no segments".into()));
        }
        if self.segments.iter().any(|s| s.duration_s == 0) {
            return Err(Error::InvalidConfig("segment durations must be positive".into()));
        }
        for p in [self.rest, self.walk, self.run] {
            if !(30.0..=220.0).contains(&p.hr_mean) {
                return Err(Error::InvalidConfig(format!("HR mean {} outside [30, 220] bpm", p.hr_mean)));
            }
            if !(p.hr_sd >= 0.0 && p.accel_sd >= 0.0 && p.accel_mean >= 0.0) {
                return Err(Error::InvalidConfig("regime spreads and accel means must be >= 0".into()));
            }
        }
        if !self.coupling.is_finite() || !self.hr_per_g.is_finite() {
            return Err(Error::InvalidConfig("coupling parameters must be finite".into()));
        }
        Ok(())
    }
}

/// Rounds to `1 / scale`; dividing by the integer scale keeps the shortest
/// decimal representation short.
fn round_to(v: f64, scale: f64) -> f64 {
    (v * scale).round() / scale
}

/// Simulates heart rate (1 Hz), 3-axis acceleration (8 Hz), GSR (5 Hz) and
/// ambient light (2 Hz) for the whole schedule, in that order.
pub fn gen_sensor_streams(schedule: &ActivitySchedule, seed: u64) -> Result<Vec<SensorStream>> {
    schedule.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hr = SensorStream::new(Modality::HeartRate);
    let mut accel = SensorStream::new(Modality::Accelerometer);
    let mut gsr = SensorStream::new(Modality::Gsr);
    let mut light = SensorStream::new(Modality::AmbientLight);
    let axis = 1.0 / 3f64.sqrt();
    let rest = schedule.rest;
    let mut second: i64 = 0;
    for seg in &schedule.segments {
        let p = schedule.params(seg.regime);
        for _ in 0..seg.duration_s {
            let t0 = schedule.start_ms + second * 1000;
            let a = (p.accel_mean + p.accel_sd * rng.sample_normal()).max(0.0);
            let drive = p.hr_mean - rest.hr_mean + schedule.hr_per_g * (a - p.accel_mean);
            let bpm = rest.hr_mean + schedule.coupling * drive + p.hr_sd * rng.sample_normal();
            hr.push(t0, &[bpm.round().clamp(30.0, 220.0)])?;
            for i in 0..8 {
                let v: [f64; 3] = std::array::from_fn(|_| round_to(a * axis + 0.02 * rng.sample_normal(), 1e3));
                accel.push(t0 + i * 125, &v)?;
            }
            for i in 0..5 {
                let g = (2.0 + 0.1 * rng.sample_normal()).max(0.01);
                gsr.push(t0 + i * 200, &[round_to(g, 1e3)])?;
            }
            for i in 0..2 {
                let lux = (200.0 + 20.0 * rng.sample_normal()).max(0.0);
                light.push(t0 + i * 500, &[round_to(lux, 10.0)])?;
            }
            second += 1;
        }
    }
    Ok(vec![hr, accel, gsr, light])
}

/// Largest input accepted by [`bruteforce_kmeans`].
pub const BRUTEFORCE_MAX_N: usize = 10;

fn partition_cost(m: &FeatureMatrix, labels: &[usize], k: usize) -> f64 {
    let d = m.n_cols();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (x, &l) in m.rows().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(x) {
            *s += v;
        }
    }
    m.rows()
        .zip(labels)
        .map(|(x, &l)| {
            x.iter()
                .zip(&sums[l])
                .map(|(v, s)| {
                    let dev = v - s / counts[l] as f64;
                    dev * dev
                })
                .sum::<f64>()
        })
        .sum()
}

/// Exact k-means optimum by enumerating every partition of the rows into
/// `k` non-empty groups (restricted growth strings). Returns the minimal
/// squared-error cost and the first partition attaining it.
pub fn bruteforce_kmeans(m: &FeatureMatrix, k: usize) -> Result<(f64, Vec<usize>)> {
    let n = m.n_rows();
    if n > BRUTEFORCE_MAX_N {
        return Err(Error::InvalidConfig(format!(
            "brute-force k-means is limited to n <= {BRUTEFORCE_MAX_N}, got {n}"
        )));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("need 1 <= k <= n (k = {k}, n = {n})")));
    }
    let mut labels = vec![0usize; n];
    let mut best = (f64::INFINITY, Vec::new());
    fn walk(
        i: usize,
        used: usize,
        k: usize,
        labels: &mut Vec<usize>,
        m: &FeatureMatrix,
        best: &mut (f64, Vec<usize>),
    ) {
        let n = labels.len();
        if i == n {
            if used == k {
                let cost = partition_cost(m, labels, k);
                if cost < best.0 {
                    *best = (cost, labels.clone());
                }
            }
            return;
        }
        // not enough rows left to open the remaining groups
        if k - used > n - i {
            return;
        }
        for l in 0..=used.min(k - 1) {
            labels[i] = l;
            walk(i + 1, used.max(l + 1), k, labels, m, best);
        }
    }
    walk(0, 0, k, &mut labels, m, &mut best);
    Ok(best)
}

fn comb2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index from the pair-counting contingency table.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let n = a.len();
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| comb2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| comb2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| comb2(c)).sum();
    let total = comb2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom == 0.0 {
        // both partitions trivial in the same way (all one cluster or all singletons)
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::pearson;

    #[test]
    fn zero_covariance_component_is_a_point_mass() {
        let spec = MixtureSpec {
            components: vec![MixtureComponent {
                weight: 1.0,
                mean: vec![3.0, -1.0],
                covariance: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            }],
            n: 20,
            seed: 4,
        };
        let (m, labels) = gen_mixture(&spec).unwrap();
        assert!(m.rows().all(|r| r == [3.0, -1.0]));
        assert!(labels.iter().all(|&l| l == 0));
        assert_eq!(gen_mixture(&spec).unwrap().0, m);
    }

    #[test]
    fn large_sample_mean_within_five_standard_errors() {
        let spec = MixtureSpec {
            components: vec![MixtureComponent {
                weight: 1.0,
                mean: vec![2.0, 5.0],
                covariance: vec![vec![4.0, 1.0], vec![1.0, 1.0]],
            }],
            n: 10_000,
            seed: 99,
        };
        let (m, _) = gen_mixture(&spec).unwrap();
        let mean = m.mean();
        let se = [(4.0f64 / 10_000.0).sqrt(), (1.0f64 / 10_000.0).sqrt()];
        assert!((mean[0] - 2.0).abs() < 5.0 * se[0]);
        assert!((mean[1] - 5.0).abs() < 5.0 * se[1]);
    }

    #[test]
    fn invalid_mixtures_rejected() {
        let comp = |w: f64, cov: Vec<Vec<f64>>| MixtureComponent { weight: w, mean: vec![0.0, 0.0], covariance: cov };
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let bad = [
            MixtureSpec { components: vec![], n: 1, seed: 0 },
            MixtureSpec { components: vec![comp(0.5, id.clone())], n: 1, seed: 0 },
            MixtureSpec { components: vec![comp(1.0, vec![vec![1.0, 2.0], vec![2.0, 1.0]])], n: 1, seed: 0 },
            MixtureSpec { components: vec![comp(1.0, vec![vec![1.0, 0.5], vec![0.0, 1.0]])], n: 1, seed: 0 },
        ];
        for spec in bad {
            assert!(matches!(gen_mixture(&spec), Err(Error::InvalidConfig(_))), "{spec:?}");
        }
    }

    #[test]
    fn rest_only_sample_counts() {
        let streams = gen_sensor_streams(&ActivitySchedule::rest_only(180), 1).unwrap();
        let counts: Vec<usize> = streams.iter().map(SensorStream::len).collect();
        assert_eq!(counts, vec![180, 1440, 900, 360]);
        assert_eq!(streams[1].observed_rate().map(|r| r.round()), Some(8.0));
    }

    fn hr_vs_accel_r(schedule: &ActivitySchedule, seed: u64) -> f64 {
        let streams = gen_sensor_streams(schedule, seed).unwrap();
        let hr: Vec<f64> = streams[0].samples().map(|(_, v)| v[0]).collect();
        let samples: Vec<&[f64]> = streams[1].samples().map(|(_, v)| v).collect();
        let mag: Vec<f64> = samples
            .chunks(8)
            .map(|sec| sec.iter().map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()).sum::<f64>() / 8.0)
            .collect();
        pearson(&hr, &mag).unwrap()
    }

    #[test]
    fn coupling_controls_correlation() {
        for seed in 0..5 {
            let r0 = hr_vs_accel_r(&ActivitySchedule::mixed(3600).with_coupling(0.0), seed);
            assert!(r0.abs() < 0.2, "seed {seed}: r = {r0}");
            let r1 = hr_vs_accel_r(&ActivitySchedule::mixed(3600).with_coupling(0.6), seed);
            assert!(r1 > 0.0, "seed {seed}: r = {r1}");
        }
    }

    #[test]
    fn schedule_validation() {
        let mut s = ActivitySchedule::rest_only(10);
        s.run.hr_mean = 250.0;
        assert!(s.validate().is_err());
        assert!(ActivitySchedule::new(vec![]).validate().is_err());
        assert!(ActivitySchedule::rest_only(0).validate().is_err());
        assert_eq!(ActivitySchedule::mixed(3600).duration_s(), 3600);
    }

    #[test]
    fn bruteforce_four_points() {
        let m = FeatureMatrix::from_rows(vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 10.0],
            vec![10.0, 11.0],
        ])
        .unwrap();
        let (j, part) = bruteforce_kmeans(&m, 2).unwrap();
        assert_eq!(j, 1.0);
        assert_eq!(part, vec![0, 0, 1, 1]);
        assert_eq!(bruteforce_kmeans(&m, 4).unwrap().0, 0.0);
        // total scatter about (5, 5.5): 4 * 25 + 2 * 30.25 + 2 * 20.25
        assert!((bruteforce_kmeans(&m, 1).unwrap().0 - 201.0).abs() < 1e-12);
        let big = FeatureMatrix::from_rows((0..11).map(|i| vec![i as f64]).collect()).unwrap();
        assert!(bruteforce_kmeans(&big, 2).is_err());
    }

    #[test]
    fn bruteforce_visits_stirling_many_partitions() {
        // S(4, 2) = 7: the enumeration must see every split of 4 points.
        // Place the optimum at a partition that is not contiguous in row order.
        let m = FeatureMatrix::from_rows(vec![vec![0.0], vec![9.0], vec![0.5], vec![9.5]]).unwrap();
        assert_eq!(bruteforce_kmeans(&m, 2).unwrap().1, vec![0, 1, 0, 1]);
    }

    /// Independent route: Hubert-Arabie form over explicit pair counts.
    fn ari_by_pairs(a: &[usize], b: &[usize]) -> f64 {
        let (mut ss, mut sd, mut ds, mut dd) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => ss += 1.0,
                    (true, false) => sd += 1.0,
                    (false, true) => ds += 1.0,
                    (false, false) => dd += 1.0,
                }
            }
        }
        2.0 * (ss * dd - sd * ds) / ((ss + sd) * (sd + dd) + (ss + ds) * (ds + dd))
    }

    #[test]
    fn ari_examples() {
        let a = [0, 0, 1, 1];
        assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&a, &[5, 5, 2, 2]).unwrap(), 1.0);
        let v = adjusted_rand_index(&a, &[0, 1, 0, 1]).unwrap();
        assert!((v - ari_by_pairs(&a, &[0, 1, 0, 1])).abs() < 1e-15);
        assert!((v + 0.5).abs() < 1e-15);
        assert!(adjusted_rand_index(&a, &[0]).is_err());
    }

    #[test]
    fn ari_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = 12;
            let a: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..3)).collect();
            let b: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..4)).collect();
            let fast = adjusted_rand_index(&a, &b).unwrap();
            let slow = ari_by_pairs(&a, &b);
            if slow.is_finite() {
                assert!((fast - slow).abs() < 1e-12);
            }
            assert_eq!(fast, adjusted_rand_index(&b, &a).unwrap());
        }
    }
}
