//! Invariants of ingestion, statistics and the clustering engines.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wearclust_core::ingest::OffPeriodSample;
use wearclust_core::kmeans::replicate_rng;
use wearclust_core::*;

fn stream_strategy(modality: Modality) -> impl Strategy<Value = SensorStream> {
    let channels = modality.channels();
    prop::collection::vec((1i64..5_000, prop::collection::vec(0.1f64..500.0, channels)), 0..60).prop_map(
        move |steps| {
            let mut s = SensorStream::new(modality);
            let mut t = 1_600_000_000_000i64;
            for (dt, vals) in steps {
                t += dt;
                s.push(t, &vals).unwrap();
            }
            s
        },
    )
}

fn matrix_strategy(max_n: usize, d: usize) -> impl Strategy<Value = FeatureMatrix> {
    prop::collection::vec(prop::collection::vec(-100.0f64..100.0, d), 2..max_n)
        .prop_map(|rows| FeatureMatrix::from_rows(rows).unwrap())
}

proptest! {
    #[test]
    fn stream_csv_round_trip(
        stream in prop::sample::select(Modality::ALL.to_vec()).prop_flat_map(stream_strategy),
    ) {
        let modality = stream.modality();
        let text = stream.to_csv();
        let parsed = parse_stream(text.as_bytes(), modality).unwrap();
        prop_assert_eq!(&parsed, &stream);
        prop_assert_eq!(parsed.to_csv(), text.clone());
        // a missing trailing newline parses identically
        let trimmed = text.trim_end_matches('\n');
        prop_assert_eq!(parse_stream(trimmed.as_bytes(), modality).unwrap(), stream);
    }

    #[test]
    fn segmentation_partitions_samples(
        hr in stream_strategy(Modality::HeartRate),
        accel in stream_strategy(Modality::Accelerometer),
        on in 1_000i64..60_000,
        off in 1_000i64..60_000,
    ) {
        prop_assume!(!hr.is_empty() || !accel.is_empty());
        let total = hr.len() + accel.len();
        let schedule = BlockSchedule { on_ms: on, off_ms: off };
        let seg = segment_blocks(&[hr, accel], schedule, "p").unwrap();
        prop_assert_eq!(seg.blocked_samples() + seg.anomalies.len(), total);
        let mut last_end = i64::MIN;
        for block in &seg.blocks {
            prop_assert!(block.sample_count() > 0);
            prop_assert!(block.start_ms >= last_end);
            last_end = block.start_ms + block.duration_ms;
            for s in &block.streams {
                for &t in s.timestamps() {
                    prop_assert!(t >= block.start_ms && t < block.start_ms + block.duration_ms);
                }
            }
            if let Ok(a) = align_features(block, FeatureRecipe::HrAccelXyz) {
                prop_assert!(a.matrix.n_rows() as i64 <= block.duration_ms / 1000 + 1);
                prop_assert!(a.matrix.as_slice().iter().all(|v| v.is_finite()));
            }
        }
        for OffPeriodSample { timestamp_ms, .. } in &seg.anomalies {
            prop_assert!((timestamp_ms - seg.anchor_ms).rem_euclid(on + off) >= on);
        }
    }

    #[test]
    fn standardize_inverts(m in matrix_strategy(30, 3)) {
        let z = m.standardize().unwrap();
        let back = z.inverse_transform();
        for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        for (j, s) in z.standardization().unwrap().iter().enumerate() {
            let col = z.column(j);
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-12);
            if !s.is_constant() {
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pearson_symmetry_and_affine_invariance(
        xy in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..50),
        a in prop_oneof![-50.0f64..-0.1, 0.1f64..50.0],
        b in -1e3f64..1e3,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        let (Ok(r), Ok(r_swapped)) = (pearson(&x, &y), pearson(&y, &x)) else { return Ok(()) };
        prop_assert_eq!(r, r_swapped);
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let r2 = pearson(&ax, &y).unwrap();
        prop_assert!((r2 - a.signum() * r).abs() < 1e-12);
        prop_assert!(r.abs() <= 1.0);
    }

    #[test]
    fn lloyd_descends_and_reaches_fixed_point(m in matrix_strategy(40, 2), k in 1usize..5, seed in any::<u64>()) {
        prop_assume!(k <= m.n_rows());
        let cfg = KMeansConfig::new(k).with_seed(seed);
        let Ok(init) = kmeanspp_init(&m, k, Distance::SquaredEuclidean, &mut replicate_rng(seed, 0)) else {
            return Ok(());
        };
        let model = lloyd(&m, &init, &cfg).unwrap();
        for w in model.history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-300);
        }
        let recomputed = model.recompute_objective(&m);
        prop_assert!((recomputed - model.objective).abs() <= 1e-9 * model.objective.max(1e-300));
        prop_assert!(model.assignments.iter().all(|&c| c < k));
        if model.converged {
            let again = kmeans_predict(&model, &m).unwrap();
            prop_assert_eq!(again.labels, model.assignments);
        }
    }

    #[test]
    fn kmeans_never_beats_the_exact_optimum(m in matrix_strategy(9, 2), k in 1usize..4, seed in any::<u64>()) {
        prop_assume!(k <= m.n_rows());
        let Ok(model) = kmeans_fit(&m, &KMeansConfig::new(k).with_seed(seed)) else { return Ok(()) };
        let (optimum, _) = bruteforce_kmeans(&m, k).unwrap();
        prop_assert!(model.objective >= optimum * (1.0 - 1e-9) - 1e-12);
    }

    #[test]
    fn responsibilities_rows_sum_to_one(m in matrix_strategy(40, 2), seed in 0u64..1000) {
        let cfg = GmmConfig::new(2).with_seed(seed);
        let Ok(model) = gmm_fit(&m, &cfg) else { return Ok(()) };
        let a = gmm_cluster(&model, &m).unwrap();
        for row in a.responsibilities.as_ref().unwrap() {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
        let w: f64 = model.mixture.weights.iter().sum();
        prop_assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ari_is_symmetric_and_label_invariant(
        pairs in prop::collection::vec((0usize..4, 0usize..3), 2..40),
        shift in 1usize..10,
    ) {
        let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let v = adjusted_rand_index(&a, &b).unwrap();
        prop_assert_eq!(v, adjusted_rand_index(&b, &a).unwrap());
        let renamed: Vec<usize> = a.iter().map(|l| (l + shift) * 7).collect();
        prop_assert!((adjusted_rand_index(&renamed, &b).unwrap() - v).abs() < 1e-12);
        prop_assert_eq!(adjusted_rand_index(&a, &renamed).unwrap(), 1.0);
    }
}

#[test]
fn kmeans_permutation_invariance() {
    let (m, _) = gen_blobs(&[vec![0.0, 0.0], vec![8.0, 0.0], vec![0.0, 8.0]], 1.0, 20, 2).unwrap();
    let model = kmeans_fit(&m, &KMeansConfig::new(3).with_seed(5).with_replicates(10)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut perm: Vec<usize> = (0..m.n_rows()).collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let pm = m.select_rows(&perm);
    let pmodel = kmeans_fit(&pm, &KMeansConfig::new(3).with_seed(5).with_replicates(10)).unwrap();
    assert!((model.objective - pmodel.objective).abs() <= 1e-12 * model.objective);
    let orig: Vec<usize> = perm.iter().map(|&i| model.assignments[i]).collect();
    assert_eq!(adjusted_rand_index(&orig, &pmodel.assignments).unwrap(), 1.0);
}

#[test]
fn kmeans_replicates_never_hurt() {
    // a long strip with uneven density invites poor single starts
    let mut rows = Vec::new();
    for i in 0..30 {
        rows.push(vec![i as f64 * 0.1, 0.0]);
    }
    for i in 0..5 {
        rows.push(vec![20.0 + i as f64 * 0.1, 0.0]);
        rows.push(vec![40.0 + i as f64 * 0.1, 0.0]);
    }
    let m = FeatureMatrix::from_rows(rows).unwrap();
    for seed in 0..20 {
        let one = kmeans_fit(&m, &KMeansConfig::new(3).with_seed(seed).with_replicates(1)).unwrap();
        let many = kmeans_fit(&m, &KMeansConfig::new(3).with_seed(seed).with_replicates(20)).unwrap();
        assert!(many.objective <= one.objective);
    }
}

#[test]
fn kmeans_three_blobs_recovered() {
    let (m, truth) = gen_blobs(&[vec![0.0, 0.0], vec![10.0, 0.0], vec![5.0, 10.0]], 1.0, 100, 8).unwrap();
    let model = kmeans_fit(&m, &KMeansConfig::new(3).with_seed(8)).unwrap();
    assert!(adjusted_rand_index(&truth, &model.assignments).unwrap() >= 0.95);
    assert_eq!(model, kmeans_fit(&m, &KMeansConfig::new(3).with_seed(8)).unwrap());
}

#[test]
fn preliminary_subsample_fit_recovers_blobs() {
    let (m, truth) = gen_blobs(&[vec![0.0, 0.0], vec![10.0, 0.0], vec![5.0, 10.0]], 1.0, 100, 3).unwrap();
    let mut cfg = KMeansConfig::new(3).with_seed(3);
    cfg.init = KMeansInit::PreliminarySubsample;
    let model = kmeans_fit(&m, &cfg).unwrap();
    assert!(adjusted_rand_index(&truth, &model.assignments).unwrap() >= 0.95);
}

/// Naive density oracle: explicit inverse and determinant of a 2x2 or 3x3.
fn naive_log_pdf(x: &[f64], mu: &[f64], cov: &[Vec<f64>]) -> f64 {
    let d = x.len();
    let m = nalgebra::DMatrix::from_fn(d, d, |i, j| cov[i][j]);
    let inv = m.clone().try_inverse().unwrap();
    let det = m.determinant();
    let dev = nalgebra::DVector::from_iterator(d, x.iter().zip(mu).map(|(a, b)| a - b));
    let quad = (dev.transpose() * inv * &dev)[(0, 0)];
    let density = (-0.5 * quad).exp() / ((2.0 * std::f64::consts::PI).powi(d as i32) * det).sqrt();
    density.ln()
}

#[test]
fn log_pdf_matches_naive_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..200 {
        let d = 2 + trial % 2;
        let a: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        // A A^T + 0.5 I is safely positive definite
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| (0..d).map(|k| a[i][k] * a[j][k]).sum::<f64>() + if i == j { 0.5 } else { 0.0 })
                    .collect()
            })
            .collect();
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let fast = gaussian_log_pdf(&x, &mu, &nalgebra::DMatrix::from_fn(d, d, |i, j| cov[i][j])).unwrap();
        let slow = naive_log_pdf(&x, &mu, &cov);
        assert!((fast - slow).abs() < 1e-10, "trial {trial}: {fast} vs {slow}");
    }
}

#[test]
fn gmm_structures_keep_their_shape() {
    let (m, _) = gen_blobs(&[vec![0.0, 0.0, 0.0], vec![6.0, 1.0, -2.0]], 1.5, 80, 12).unwrap();
    for s in CovarianceStructure::ALL {
        let model = gmm_fit(&m, &GmmConfig::new(2).with_seed(1).with_structure(s)).unwrap();
        let covs = &model.mixture.covariances;
        for c in covs {
            assert_eq!(c, &c.transpose());
            let eig = nalgebra::SymmetricEigen::new(c.clone());
            assert!(eig.eigenvalues.iter().all(|&l| l >= model.regularization - 1e-12));
            if s.shape == CovarianceShape::Diagonal {
                for i in 0..3 {
                    for j in 0..3 {
                        if i != j {
                            assert_eq!(c[(i, j)], 0.0);
                        }
                    }
                }
            }
        }
        if s.sharing == CovarianceSharing::Shared {
            assert!(covs.iter().all(|c| c.as_slice() == covs[0].as_slice()), "{s}");
        }
        for w in model.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{s}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn gmm_single_component_converges_to_mle() {
    let (m, _) = gen_blobs(&[vec![1.0, -2.0]], 2.0, 50, 4).unwrap();
    let model = gmm_fit(&m, &GmmConfig::new(1).with_seed(0)).unwrap();
    assert!(model.iterations <= 2);
    assert!(model.converged);
    let mean = m.mean();
    for (a, b) in model.mixture.means[0].iter().zip(&mean) {
        assert!((a - b).abs() < 1e-12);
    }
    let expect = m.covariance(0) + nalgebra::DMatrix::identity(2, 2) * 1e-6;
    assert!((&model.mixture.covariances[0] - expect).abs().max() < 1e-12);
    let a = gmm_cluster(&model, &m).unwrap();
    assert!(a.labels.iter().all(|&l| l == 0));
}

#[test]
fn gmm_two_blob_recovery_and_determinism() {
    let sigma = 1.0;
    let truth = [vec![0.0, 0.0], vec![10.0, 0.0]];
    let (m, labels) = gen_blobs(&truth, sigma, 200, 31).unwrap();
    let cfg = GmmConfig::new(2).with_seed(31);
    let model = gmm_fit(&m, &cfg).unwrap();
    assert_eq!(model, gmm_fit(&m, &cfg).unwrap());
    let mut means = model.mixture.means.clone();
    means.sort_by(|a, b| a[0].total_cmp(&b[0]));
    for (got, want) in means.iter().zip(&truth) {
        let dist = got.iter().zip(want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dist < 0.1 * sigma);
    }
    for w in &model.mixture.weights {
        assert!((w - 0.5).abs() < 0.05);
    }
    let a = gmm_cluster(&model, &m).unwrap();
    assert_eq!(adjusted_rand_index(&labels, &a.labels).unwrap(), 1.0);
}

#[test]
fn gmm_diagonal_shared_agrees_with_kmeans() {
    let (m, _) = gen_blobs(&[vec![0.0, 0.0], vec![10.0, 10.0]], 1.0, 100, 6).unwrap();
    let structure = CovarianceStructure::new(CovarianceShape::Diagonal, CovarianceSharing::Shared);
    let g = gmm_fit(&m, &GmmConfig::new(2).with_seed(6).with_structure(structure)).unwrap();
    let k = kmeans_fit(&m, &KMeansConfig::new(2).with_seed(6)).unwrap();
    let gl = gmm_cluster(&g, &m).unwrap().labels;
    assert_eq!(adjusted_rand_index(&gl, &k.assignments).unwrap(), 1.0);
}

#[test]
fn gmm_means_scale_with_features() {
    let (m, _) = gen_blobs(&[vec![0.0, 0.0], vec![5.0, 3.0]], 1.0, 100, 9).unwrap();
    let c = 7.5;
    let scaled = FeatureMatrix::from_rows(m.rows().map(|r| r.iter().map(|v| v * c).collect()).collect()).unwrap();
    // run to the fixed point so the relative stopping rule cannot differ
    let mut cfg = GmmConfig::new(2).with_seed(9);
    cfg.tol = 0.0;
    cfg.max_iter = 500;
    let a = gmm_fit(&m, &cfg).unwrap();
    let b = gmm_fit(&scaled, &cfg).unwrap();
    for (ma, mb) in a.mixture.means.iter().zip(&b.mixture.means) {
        for (x, y) in ma.iter().zip(mb) {
            assert!((x * c - y).abs() <= 1e-6 * y.abs().max(1.0), "{x} * {c} vs {y}");
        }
    }
}

#[test]
fn gmm_rejects_bad_inputs() {
    let m = FeatureMatrix::from_rows(vec![vec![0.0], vec![1.0]]).unwrap();
    assert!(matches!(gmm_fit(&m, &GmmConfig::new(2)), Err(Error::InsufficientData(_))));
    let mut cfg = GmmConfig::new(1);
    cfg.regularization = -1.0;
    assert!(matches!(gmm_fit(&m, &cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn som_two_blobs_on_two_neurons() {
    let sigma = 1.0;
    let (m, _) = gen_blobs(&[vec![0.0, 0.0], vec![10.0, 0.0]], sigma, 50, 13).unwrap();
    let mut cfg = SomConfig::new(1, 2).with_seed(13);
    cfg.final_radius = 0.1;
    let model = som_train(&som_init(&m, &cfg).unwrap(), &m, &cfg).unwrap();
    let blob_means = [m.select_rows(&(0..50).collect::<Vec<_>>()).mean(), m.select_rows(&(50..100).collect::<Vec<_>>()).mean()];
    let mut matched = Vec::new();
    for w in &model.weights {
        let (i, d) = blob_means
            .iter()
            .enumerate()
            .map(|(i, mu)| (i, w.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!(d < 0.5 * sigma);
        matched.push(i);
    }
    assert_ne!(matched[0], matched[1]);
}

#[test]
fn som_hits_follow_blob_sizes() {
    let (a, _) = gen_blobs(&[vec![0.0, 0.0]], 0.5, 30, 1).unwrap();
    let (b, _) = gen_blobs(&[vec![10.0, 0.0]], 0.5, 70, 2).unwrap();
    let m = FeatureMatrix::vstack(&[a, b]).unwrap();
    let mut cfg = SomConfig::new(1, 2).with_seed(4);
    cfg.final_radius = 0.1;
    let model = som_train(&som_init(&m, &cfg).unwrap(), &m, &cfg).unwrap();
    let mut hits = sample_hits(&model, &m).unwrap();
    hits.sort_unstable();
    assert_eq!(hits, vec![30, 70]);
}

#[test]
fn som_training_is_deterministic_and_reduces_error() {
    for seed in 0..10 {
        let (m, _) = gen_blobs(&[vec![0.0, 0.0], vec![6.0, 0.0], vec![3.0, 6.0]], 1.0, 40, seed).unwrap();
        let cfg = SomConfig::default().with_seed(seed);
        let init = som_init(&m, &cfg).unwrap();
        let a = som_train(&init, &m, &cfg).unwrap();
        let b = som_train(&init, &m, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.trained_epochs, 200);
        assert!(quantization_error(&a, &m).unwrap() <= quantization_error(&init, &m).unwrap());
        assert_eq!(sample_hits(&a, &m).unwrap().iter().sum::<usize>(), m.n_rows());
    }
}

#[test]
fn som_preserves_order_on_a_line() {
    let m = FeatureMatrix::from_rows((0..100).map(|i| vec![i as f64 / 10.0]).collect()).unwrap();
    for init in [SomInit::RandomSample, SomInit::LinearSpan] {
        let mut cfg = SomConfig::new(1, 8).with_seed(2);
        cfg.init = init;
        let model = som_train(&som_init(&m, &cfg).unwrap(), &m, &cfg).unwrap();
        let labels: Vec<usize> = m.rows().map(|x| bmu(&model, x).unwrap()).collect();
        let up = labels.windows(2).all(|w| w[0] <= w[1]);
        let down = labels.windows(2).all(|w| w[0] >= w[1]);
        assert!(up || down, "{init:?}: {labels:?}");
    }
}

#[test]
fn ingest_one_hour_session() {
    let streams = gen_sensor_streams(&ActivitySchedule::mixed(3600), 5).unwrap();
    let seg = segment_blocks(&streams, BlockSchedule::default(), "s01").unwrap();
    assert_eq!(seg.blocks.len(), 10);
    for block in &seg.blocks {
        assert_eq!(block.stream(Modality::HeartRate).unwrap().len(), 180);
        assert_eq!(block.stream(Modality::Accelerometer).unwrap().len(), 1440);
        let aligned = align_features(block, FeatureRecipe::HrAccelMag).unwrap();
        assert_eq!(aligned.matrix.n_rows(), 180);
        assert_eq!(aligned.dropped_seconds, 0);
    }
}

#[test]
fn two_week_schedule_has_ten_blocks_per_hour() {
    // HR only keeps this cheap; the cadence arithmetic is modality independent
    let mut hr = SensorStream::new(Modality::HeartRate);
    let start = 1_500_001_200_000i64;
    for s in 0..14 * 24 * 3600 {
        hr.push(start + s * 1000, &[70.0]).unwrap();
    }
    let seg = segment_blocks(&[hr], BlockSchedule::default(), "s").unwrap();
    assert_eq!(seg.blocks.len(), 14 * 24 * 10);
}

#[test]
fn mixture_generation_is_deterministic() {
    let spec = MixtureSpec {
        components: vec![
            MixtureComponent { weight: 0.3, mean: vec![0.0], covariance: vec![vec![1.0]] },
            MixtureComponent { weight: 0.7, mean: vec![5.0], covariance: vec![vec![0.5]] },
        ],
        n: 500,
        seed: 8,
    };
    let (a, la) = gen_mixture(&spec).unwrap();
    let (b, lb) = gen_mixture(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert!(a.as_slice().iter().all(|v| v.is_finite()));
    let frac = la.iter().filter(|&&l| l == 1).count() as f64 / 500.0;
    assert!((frac - 0.7).abs() < 0.1);
}
