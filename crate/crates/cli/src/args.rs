use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use wearclust_core::{CovarianceStructure, Distance, FeatureRecipe, SomInit};

#[derive(Debug, Parser)]
#[command(name = "wearclust", version, about = "Wearable sensor ingestion, correlation and clustering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align per-subject sensor streams into per-second feature matrices.
    Ingest(IngestArgs),
    /// Pearson correlation matrix, histograms and scatter pairs.
    Correlate(CorrelateArgs),
    /// k-means clustering.
    Kmeans(KmeansArgs),
    /// Gaussian-mixture clustering, one model per covariance structure.
    Gmm(GmmArgs),
    /// Hexagonal self-organizing map.
    Som(SomArgs),
    /// Write a synthetic stream corpus or blob dataset.
    Synth(SynthArgs),
    /// Replay the run recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_recipe, default_value = "hr_accel_mag")]
    pub recipe: FeatureRecipe,
    /// Combine all subjects into one matrix instead of one run per subject.
    #[arg(long)]
    pub pooled: bool,
    /// Standardize columns before analysis (`--standardize=false` to disable).
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    pub standardize: Option<bool>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Feature CSV, directory of `*.features.csv`, or raw corpus directory.
    #[arg(long)]
    pub input: PathBuf,
    /// On-period of the recording cadence, seconds (raw corpora only).
    #[arg(long, default_value_t = 180)]
    pub on_seconds: u32,
    /// Off-period of the recording cadence, seconds (raw corpora only).
    #[arg(long, default_value_t = 180)]
    pub off_seconds: u32,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceArg {
    SquaredEuclidean,
    Cosine,
}

impl From<DistanceArg> for Distance {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::SquaredEuclidean => Distance::SquaredEuclidean,
            DistanceArg::Cosine => Distance::Cosine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KmeansInitArg {
    Kmeanspp,
    PreliminarySubsample,
}

#[derive(Debug, Args)]
pub struct KmeansArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "squared-euclidean")]
    pub distance: DistanceArg,
    #[arg(long, default_value_t = 5)]
    pub replicates: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, value_enum, default_value = "kmeanspp")]
    pub init: KmeansInitArg,
    #[arg(long, default_value_t = 0.10)]
    pub subsample_fraction: f64,
    /// Whiten with the sample covariance first (Mahalanobis geometry).
    #[arg(long)]
    pub whiten: bool,
}

#[derive(Debug, Args)]
pub struct GmmArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub k: usize,
    /// Restrict to these structures, e.g. `full_unshared`; default all four.
    #[arg(long = "structure", value_parser = parse_structure)]
    pub structures: Vec<CovarianceStructure>,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub regularization: f64,
    #[arg(long, default_value_t = 5)]
    pub replicates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SomInitArg {
    RandomSample,
    LinearSpan,
}

impl From<SomInitArg> for SomInit {
    fn from(i: SomInitArg) -> Self {
        match i {
            SomInitArg::RandomSample => SomInit::RandomSample,
            SomInitArg::LinearSpan => SomInit::LinearSpan,
        }
    }
}

#[derive(Debug, Args)]
pub struct SomArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 6)]
    pub rows: usize,
    #[arg(long, default_value_t = 6)]
    pub cols: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Defaults to max(rows, cols) / 2, at least 1.
    #[arg(long)]
    pub initial_radius: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub final_radius: f64,
    #[arg(long, value_enum, default_value = "linear-span")]
    pub init: SomInitArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Per-subject hr/accel/gsr/light stream CSVs.
    Streams,
    /// Spherical Gaussian blobs as a feature CSV plus true labels.
    Blobs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "streams")]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 10)]
    pub subjects: usize,
    /// Session length per subject, seconds.
    #[arg(long, default_value_t = 3600)]
    pub duration: u64,
    #[arg(long, default_value_t = 0.8)]
    pub coupling: f64,
    /// Blob count.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub per_cluster: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Distance between neighbouring blob centres in units of the blob sd.
    #[arg(long, default_value_t = 10.0)]
    pub separation: f64,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_recipe(s: &str) -> Result<FeatureRecipe, String> {
    s.parse().map_err(|e: wearclust_core::Error| e.to_string())
}

fn parse_structure(s: &str) -> Result<CovarianceStructure, String> {
    s.parse().map_err(|e: wearclust_core::Error| e.to_string())
}
