use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use wearclust_core::{
    correlation_report, gen_blobs, gen_sensor_streams, gmm_cluster, gmm_fit, kmeans_fit, kmeans_predict,
    quantization_error, sample_hits, som_init, som_train, u_matrix, ActivitySchedule, ColumnScale,
    CovarianceStructure, FeatureMatrix, GmmConfig, KMeansConfig, KMeansInit, KMeansModel, SomConfig,
};

use crate::args::{
    Cli, Command, CorrelateArgs, GmmArgs, IngestArgs, KmeansArgs, KmeansInitArg, RerunArgs, SomArgs,
    SynthArgs, SynthKind,
};
use crate::inputs::{self, Dataset, SubjectSummary, POOLED_NAME};
use crate::output::{sha256_file, FileDigest, Manifest, OutputDir, MANIFEST_FILE};

/// A failure caused by how the tool was invoked rather than by the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(&a, argv),
        Command::Correlate(a) => correlate(&a, argv),
        Command::Kmeans(a) => kmeans(&a, argv),
        Command::Gmm(a) => gmm(&a, argv),
        Command::Som(a) => som(&a, argv),
        Command::Synth(a) => synth(&a, argv),
        Command::Rerun(a) => rerun(&a),
    }
}

fn finish(
    out: &mut OutputDir,
    command: &str,
    argv: Vec<String>,
    seed: u64,
    config: serde_json::Value,
    input_files: &[std::path::PathBuf],
) -> Result<()> {
    let inputs = input_files
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        tool: "wearclust".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        argv,
        seed,
        config,
        inputs,
        outputs: out.written().to_vec(),
    };
    out.write_json(MANIFEST_FILE, &manifest)
}

/// Output path for `file` of `dataset`; single-dataset runs write flat.
fn place(datasets: &[Dataset], dataset: &Dataset, file: &str) -> String {
    if datasets.len() == 1 {
        file.to_string()
    } else {
        format!("{}/{file}", dataset.name)
    }
}

fn prepare(m: &FeatureMatrix, standardize: bool, dataset: &str) -> Result<FeatureMatrix> {
    if standardize {
        m.standardize().with_context(|| format!("standardizing {dataset}"))
    } else {
        Ok(m.clone())
    }
}

fn ingest(a: &IngestArgs, argv: Vec<String>) -> Result<()> {
    let root = &a.input.input;
    if !root.is_dir() {
        return Err(UsageError(format!("ingest expects a corpus directory, got {}", root.display())).into());
    }
    let subjects = inputs::subject_dirs(root)?;
    let schedule = inputs::schedule(&a.input);
    let mut out = OutputDir::create(&a.common.out)?;
    let mut summaries: Vec<SubjectSummary> = Vec::new();
    let mut failures = Vec::new();
    let mut matrices = Vec::new();
    let mut files = Vec::new();
    for (subject, dir) in &subjects {
        match inputs::ingest_subject(dir, subject, schedule, a.common.recipe) {
            Ok(s) => {
                out.write(&format!("{subject}.features.csv"), s.matrix.to_csv().as_bytes())?;
                summaries.push(s.summary);
                matrices.push(s.matrix);
                files.extend(s.files);
            }
            Err(e) => failures.push((subject.clone(), e)),
        }
    }
    let pooled_rows = if a.common.pooled && failures.is_empty() {
        let pooled = FeatureMatrix::vstack(&matrices)?;
        out.write(&format!("{POOLED_NAME}.features.csv"), pooled.to_csv().as_bytes())?;
        Some(pooled.n_rows())
    } else {
        None
    };
    let report = json!({
        "recipe": a.common.recipe,
        "schedule": schedule,
        "subjects": summaries,
        "failures": failures
            .iter()
            .map(|(s, e)| json!({ "subject": s, "error": format!("{e:#}") }))
            .collect::<Vec<_>>(),
        "pooled_rows": pooled_rows,
    });
    out.write_json("ingest_report.json", &report)?;
    let config = json!({ "common": a.common, "input": a.input });
    finish(&mut out, "ingest", argv, a.common.seed, config, &files)?;
    if let Some((subject, e)) = failures.into_iter().next() {
        return Err(e.context(format!("subject {subject} failed to ingest")));
    }
    Ok(())
}

fn correlate(a: &CorrelateArgs, argv: Vec<String>) -> Result<()> {
    let (datasets, files) = inputs::load_datasets(&a.input, a.common.recipe, a.common.pooled)?;
    let standardize = a.common.standardize.unwrap_or(false);
    let mut out = OutputDir::create(&a.common.out)?;
    for ds in &datasets {
        let m = prepare(&ds.matrix, standardize, &ds.name)?;
        let report = correlation_report(&m, a.bins).with_context(|| format!("correlating {}", ds.name))?;
        out.write_json(
            &place(&datasets, ds, "correlation.json"),
            &json!({ "dataset": ds.name, "standardized": standardize, "report": report }),
        )?;
        for p in &report.pairs {
            let name = format!("scatter/{}__{}.csv", p.x_name, p.y_name);
            out.write(&place(&datasets, ds, &name), p.to_csv().as_bytes())?;
        }
    }
    let config = json!({ "common": a.common, "input": a.input, "bins": a.bins });
    finish(&mut out, "correlate", argv, a.common.seed, config, &files)
}

#[derive(Serialize)]
struct KmeansExport<'a> {
    dataset: &'a str,
    n_rows: usize,
    columns: &'a [String],
    standardization: Option<&'a [ColumnScale]>,
    whitened: bool,
    seed: u64,
    config: &'a KMeansConfig,
    model: &'a KMeansModel,
    /// Centroids mapped back through the standardization, when invertible.
    centroids_original_units: Option<Vec<Vec<f64>>>,
    cluster_sizes: Vec<usize>,
}

fn kmeans_config(a: &KmeansArgs) -> KMeansConfig {
    let mut cfg = KMeansConfig::new(a.k).with_seed(a.common.seed).with_replicates(a.replicates);
    cfg.distance = a.distance.into();
    cfg.max_iter = a.max_iter;
    cfg.tol = a.tol;
    cfg.subsample_fraction = a.subsample_fraction;
    cfg.init = match a.init {
        KmeansInitArg::Kmeanspp => KMeansInit::KMeansPlusPlus,
        KmeansInitArg::PreliminarySubsample => KMeansInit::PreliminarySubsample,
    };
    cfg
}

fn kmeans(a: &KmeansArgs, argv: Vec<String>) -> Result<()> {
    let cfg = kmeans_config(a);
    cfg.validate()?;
    let (datasets, files) = inputs::load_datasets(&a.input, a.common.recipe, a.common.pooled)?;
    let standardize = a.common.standardize.unwrap_or(true);
    let mut out = OutputDir::create(&a.common.out)?;
    for ds in &datasets {
        let mut m = prepare(&ds.matrix, standardize, &ds.name)?;
        if a.whiten {
            m = m.whiten().with_context(|| format!("whitening {}", ds.name))?;
        }
        let model = kmeans_fit(&m, &cfg).with_context(|| format!("k-means on {}", ds.name))?;
        let assignment = kmeans_predict(&model, &m)?;
        let export = KmeansExport {
            dataset: &ds.name,
            n_rows: m.n_rows(),
            columns: m.column_names(),
            standardization: m.standardization(),
            whitened: a.whiten,
            seed: cfg.seed,
            config: &cfg,
            centroids_original_units: (standardize && !a.whiten)
                .then(|| model.centroids.iter().map(|c| m.unscale_point(c)).collect()),
            cluster_sizes: assignment.cluster_sizes(cfg.k),
            model: &model,
        };
        out.write_json(&place(&datasets, ds, "kmeans_model.json"), &export)?;
        out.write(&place(&datasets, ds, "assignments.csv"), assignment.to_csv(m.row_keys()).as_bytes())?;
    }
    let config = json!({ "common": a.common, "input": a.input, "kmeans": cfg, "whiten": a.whiten });
    finish(&mut out, "kmeans", argv, a.common.seed, config, &files)
}

fn gmm(a: &GmmArgs, argv: Vec<String>) -> Result<()> {
    let structures: Vec<CovarianceStructure> = if a.structures.is_empty() {
        CovarianceStructure::ALL.to_vec()
    } else {
        a.structures.clone()
    };
    let base = {
        let mut c = GmmConfig::new(a.k).with_seed(a.common.seed);
        c.tol = a.tol;
        c.max_iter = a.max_iter;
        c.regularization = a.regularization;
        c.replicates = a.replicates;
        c
    };
    base.validate()?;
    let (datasets, files) = inputs::load_datasets(&a.input, a.common.recipe, a.common.pooled)?;
    let standardize = a.common.standardize.unwrap_or(true);
    let mut out = OutputDir::create(&a.common.out)?;
    let mut first_error = None;
    for ds in &datasets {
        let m = prepare(&ds.matrix, standardize, &ds.name)?;
        for &s in &structures {
            let cfg = base.clone().with_structure(s);
            let fitted = gmm_fit(&m, &cfg).and_then(|model| Ok((gmm_cluster(&model, &m)?, model)));
            let (assignment, model) = match fitted {
                Ok(v) => v,
                Err(e) => {
                    let e = anyhow::Error::new(e).context(format!("GMM {s} on {}", ds.name));
                    eprintln!("error: {e:#}");
                    first_error.get_or_insert(e);
                    continue;
                }
            };
            let means_original_units: Option<Vec<Vec<f64>>> =
                standardize.then(|| model.mixture.means.iter().map(|mu| m.unscale_point(mu)).collect());
            let export = json!({
                "dataset": ds.name,
                "structure": s.to_string(),
                "n_rows": m.n_rows(),
                "columns": m.column_names(),
                "standardization": m.standardization(),
                "seed": cfg.seed,
                "config": cfg,
                "model": model,
                "means_original_units": means_original_units,
                "cluster_sizes": assignment.cluster_sizes(cfg.k),
            });
            out.write_json(&place(&datasets, ds, &format!("gmm_{s}.json")), &export)?;
            out.write(
                &place(&datasets, ds, &format!("assignments_{s}.csv")),
                assignment.to_csv(m.row_keys()).as_bytes(),
            )?;
            let resp = assignment
                .responsibilities_csv(m.row_keys())
                .ok_or_else(|| anyhow!("GMM assignment lacks responsibilities"))?;
            out.write(&place(&datasets, ds, &format!("responsibilities_{s}.csv")), resp.as_bytes())?;
        }
    }
    let config = json!({
        "common": a.common,
        "input": a.input,
        "gmm": base,
        "structures": structures.iter().map(ToString::to_string).collect::<Vec<_>>(),
    });
    finish(&mut out, "gmm", argv, a.common.seed, config, &files)?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn som_config(a: &SomArgs) -> SomConfig {
    let mut cfg = SomConfig::new(a.rows, a.cols).with_seed(a.common.seed);
    cfg.epochs = a.epochs;
    if let Some(r) = a.initial_radius {
        cfg.initial_radius = r;
    }
    cfg.final_radius = a.final_radius;
    cfg.init = a.init.into();
    cfg
}

fn som(a: &SomArgs, argv: Vec<String>) -> Result<()> {
    let cfg = som_config(a);
    cfg.validate()?;
    let (datasets, files) = inputs::load_datasets(&a.input, a.common.recipe, a.common.pooled)?;
    let standardize = a.common.standardize.unwrap_or(true);
    let mut out = OutputDir::create(&a.common.out)?;
    for ds in &datasets {
        let m = prepare(&ds.matrix, standardize, &ds.name)?;
        let init = som_init(&m, &cfg).with_context(|| format!("SOM init on {}", ds.name))?;
        let model = som_train(&init, &m, &cfg)?;
        let hits = sample_hits(&model, &m)?;
        let um = u_matrix(&model);
        let neurons: Vec<_> = model
            .grid
            .neurons
            .iter()
            .map(|nr| {
                let w = &model.weights[nr.index];
                json!({
                    "index": nr.index,
                    "row": nr.row,
                    "col": nr.col,
                    "q": nr.q,
                    "r": nr.r,
                    "x": nr.x,
                    "y": nr.y,
                    "weight": w,
                    "weight_original_units": standardize.then(|| m.unscale_point(w)),
                    "hits": hits[nr.index],
                    "u_mean": um.neuron_mean[nr.index],
                })
            })
            .collect();
        let edges: Vec<_> = um
            .edges
            .iter()
            .map(|e| {
                let (pa, pb) = (&model.grid.neurons[e.a], &model.grid.neurons[e.b]);
                json!({
                    "a": e.a,
                    "b": e.b,
                    "distance": e.distance,
                    "ax": pa.x,
                    "ay": pa.y,
                    "bx": pb.x,
                    "by": pb.y,
                })
            })
            .collect();
        let export = json!({
            "dataset": ds.name,
            "n_rows": m.n_rows(),
            "columns": m.column_names(),
            "standardization": m.standardization(),
            "seed": cfg.seed,
            "config": cfg,
            "topology": "hexagonal_odd_r",
            "trained_epochs": model.trained_epochs,
            "quantization_error_initial": quantization_error(&init, &m)?,
            "quantization_error": quantization_error(&model, &m)?,
            "neurons": neurons,
            "u_matrix": edges,
        });
        out.write_json(&place(&datasets, ds, "som_model.json"), &export)?;
        let labels = wearclust_core::som::bmu_labels(&model, &m)?;
        out.write(
            &place(&datasets, ds, "assignments.csv"),
            wearclust_core::Assignment::hard(labels).to_csv(m.row_keys()).as_bytes(),
        )?;
    }
    let config = json!({ "common": a.common, "input": a.input, "som": cfg });
    finish(&mut out, "som", argv, a.common.seed, config, &files)
}

fn synth(a: &SynthArgs, argv: Vec<String>) -> Result<()> {
    let mut out = OutputDir::create(&a.out)?;
    let config = match a.kind {
        SynthKind::Streams => {
            if a.subjects == 0 {
                return Err(UsageError("--subjects must be at least 1".into()).into());
            }
            let schedule = ActivitySchedule::mixed(a.duration).with_coupling(a.coupling);
            let width = a.subjects.to_string().len().max(2);
            for i in 0..a.subjects {
                let subject = format!("s{:0width$}", i + 1);
                let streams = gen_sensor_streams(&schedule, a.seed.wrapping_add(i as u64))?;
                for s in &streams {
                    out.write(&format!("{subject}/{}.csv", s.modality().file_stem()), s.to_csv().as_bytes())?;
                }
            }
            json!({ "kind": a.kind, "subjects": a.subjects, "schedule": schedule, "subject_seed": "seed + index" })
        }
        SynthKind::Blobs => {
            if a.k == 0 || a.dim == 0 {
                return Err(UsageError("--k and --dim must be at least 1".into()).into());
            }
            let centers = blob_centers(a.k, a.dim, a.separation);
            let (m, labels) = gen_blobs(&centers, 1.0, a.per_cluster, a.seed)?;
            out.write("blobs.features.csv", m.to_csv().as_bytes())?;
            let mut csv = String::from("row_key,label\n");
            for (key, l) in m.row_keys().iter().zip(&labels) {
                csv.push_str(&format!("{key},{l}\n"));
            }
            out.write("labels.csv", csv.as_bytes())?;
            json!({ "kind": a.kind, "centers": centers, "sd": 1.0, "per_cluster": a.per_cluster })
        }
    };
    finish(&mut out, "synth", argv, a.seed, config, &[])
}

/// Unit-sd blob centres with neighbouring centres `separation` apart: on a
/// circle in the first two axes, or along the line when `dim == 1`.
fn blob_centers(k: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            let mut c = vec![0.0; dim];
            if dim == 1 || k <= 2 {
                c[0] = i as f64 * separation;
            } else {
                let radius = separation / (2.0 * (std::f64::consts::PI / k as f64).sin());
                let angle = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                c[0] = radius * angle.cos();
                c[1] = radius * angle.sin();
            }
            c
        })
        .collect()
}

/// Replaces (or appends) the `--out` value in a recorded argument list.
fn with_out(argv: &[String], out: &str) -> Vec<String> {
    let mut result = Vec::with_capacity(argv.len() + 2);
    let mut replaced = false;
    let mut iter = argv.iter();
    while let Some(arg) = iter.next() {
        if arg == "--out" {
            iter.next();
            result.extend(["--out".to_string(), out.to_string()]);
            replaced = true;
        } else if arg.starts_with("--out=") {
            result.push(format!("--out={out}"));
            replaced = true;
        } else {
            result.push(arg.clone());
        }
    }
    if !replaced {
        result.extend(["--out".to_string(), out.to_string()]);
    }
    result
}

fn rerun(a: &RerunArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    if manifest.tool != "wearclust" {
        bail!("{} is not a wearclust manifest", a.manifest.display());
    }
    for input in &manifest.inputs {
        let now = sha256_file(std::path::Path::new(&input.path))
            .with_context(|| format!("recorded input {} is unavailable", input.path))?;
        if now != input.sha256 {
            bail!("input {} changed since the recorded run", input.path);
        }
    }
    let argv = match &a.out {
        Some(out) => with_out(&manifest.argv, &out.display().to_string()),
        None => manifest.argv.clone(),
    };
    let cli = <Cli as clap::Parser>::try_parse_from(std::iter::once("wearclust".to_string()).chain(argv.clone()))
        .map_err(|e| UsageError(format!("manifest arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(UsageError("a manifest cannot record a rerun".into()).into());
    }
    run(cli, argv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::args::CommonArgs;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn out_replacement() {
        assert_eq!(
            with_out(&strings(&["kmeans", "--out", "a", "--k", "3"]), "b"),
            strings(&["kmeans", "--out", "b", "--k", "3"])
        );
        assert_eq!(with_out(&strings(&["som", "--out=a"]), "b"), strings(&["som", "--out=b"]));
        assert_eq!(with_out(&strings(&["som"]), "b"), strings(&["som", "--out", "b"]));
    }

    #[test]
    fn blob_centres_keep_neighbour_spacing() {
        for (k, dim) in [(3, 2), (5, 3), (2, 2), (4, 1)] {
            let c = blob_centers(k, dim, 10.0);
            assert_eq!(c.len(), k);
            for i in 0..k - 1 {
                let d: f64 = c[i].iter().zip(&c[i + 1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                assert!((d - 10.0).abs() < 1e-9, "k={k} dim={dim}: {d}");
            }
        }
    }

    #[test]
    fn common_args_echo() {
        let c = CommonArgs {
            seed: 3,
            out: "x".into(),
            recipe: Default::default(),
            pooled: false,
            standardize: None,
        };
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(v["recipe"], "hr_accel_mag");
        assert_eq!(v["seed"], 3);
    }
}
