//! Locating and loading feature matrices and raw per-subject corpora.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use wearclust_core::{
    align_blocks, parse_stream, segment_blocks, BlockSchedule, FeatureMatrix, FeatureRecipe, Modality, SensorStream,
};

use crate::args::InputArgs;

pub const FEATURES_SUFFIX: &str = ".features.csv";
pub const POOLED_NAME: &str = "pooled";

/// One matrix to analyse and the name its outputs are filed under.
#[derive(Debug)]
pub struct Dataset {
    pub name: String,
    pub matrix: FeatureMatrix,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModalityCount {
    pub modality: Modality,
    pub samples: usize,
    pub observed_rate_hz: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubjectSummary {
    pub subject: String,
    pub blocks: usize,
    pub streams: Vec<ModalityCount>,
    pub off_period_samples: usize,
    pub rows: usize,
    pub dropped_seconds: usize,
}

pub struct SubjectIngest {
    pub summary: SubjectSummary,
    pub matrix: FeatureMatrix,
    pub files: Vec<PathBuf>,
}

pub fn schedule(input: &InputArgs) -> BlockSchedule {
    BlockSchedule {
        on_ms: i64::from(input.on_seconds) * 1000,
        off_ms: i64::from(input.off_seconds) * 1000,
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Subject directories of a raw corpus, in name order.
pub fn subject_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let subjects: Vec<(String, PathBuf)> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .filter_map(|p| Some((p.file_name()?.to_str()?.to_string(), p)))
        .filter(|(name, _)| !name.starts_with('.'))
        .collect();
    if subjects.is_empty() {
        bail!("no subject directories in {}", root.display());
    }
    Ok(subjects)
}

/// Parses, segments and aligns one subject directory of stream CSVs.
///
/// Missing modality files are skipped; heart rate and acceleration are
/// needed for any feature rows.
pub fn ingest_subject(
    dir: &Path,
    subject: &str,
    schedule: BlockSchedule,
    recipe: FeatureRecipe,
) -> Result<SubjectIngest> {
    let mut streams: Vec<SensorStream> = Vec::new();
    let mut files = Vec::new();
    for modality in Modality::ALL {
        let path = dir.join(format!("{}.csv", modality.file_stem()));
        if !path.exists() {
            continue;
        }
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        let stream = parse_stream(&bytes, modality).with_context(|| format!("malformed file {}", path.display()))?;
        streams.push(stream);
        files.push(path);
    }
    if streams.is_empty() {
        bail!("no stream files in {}", dir.display());
    }
    let seg = segment_blocks(&streams, schedule, subject).with_context(|| format!("segmenting {}", dir.display()))?;
    let aligned = align_blocks(&seg.blocks, recipe)?;
    if aligned.matrix.is_empty() {
        bail!("no valid blocks with heart rate and acceleration in {}", dir.display());
    }
    let summary = SubjectSummary {
        subject: subject.to_string(),
        blocks: seg.blocks.len(),
        streams: streams
            .iter()
            .map(|s| ModalityCount {
                modality: s.modality(),
                samples: s.len(),
                observed_rate_hz: s.observed_rate(),
            })
            .collect(),
        off_period_samples: seg.anomalies.len(),
        rows: aligned.matrix.n_rows(),
        dropped_seconds: aligned.dropped_seconds,
    };
    Ok(SubjectIngest {
        summary,
        matrix: aligned.matrix,
        files,
    })
}

fn read_matrix(path: &Path) -> Result<FeatureMatrix> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    FeatureMatrix::from_csv(&text).with_context(|| format!("malformed feature file {}", path.display()))
}

fn stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_suffix(FEATURES_SUFFIX)
        .or_else(|| name.strip_suffix(".csv"))
        .unwrap_or(&name)
        .to_string()
}

/// Loads the analysis inputs and the files they came from.
///
/// `input` may be a feature CSV, a directory of `*.features.csv` files (an
/// existing pooled file there is ignored), or a raw corpus directory that is
/// ingested on the fly with `recipe`.
pub fn load_datasets(input: &InputArgs, recipe: FeatureRecipe, pooled: bool) -> Result<(Vec<Dataset>, Vec<PathBuf>)> {
    let path = &input.input;
    let mut datasets = Vec::new();
    let mut files = Vec::new();
    if path.is_file() {
        datasets.push(Dataset {
            name: stem(path),
            matrix: read_matrix(path)?,
        });
        files.push(path.clone());
    } else if path.is_dir() {
        let feature_files: Vec<PathBuf> = sorted_entries(path)?
            .into_iter()
            .filter(|p| p.is_file() && p.to_string_lossy().ends_with(FEATURES_SUFFIX))
            .filter(|p| stem(p) != POOLED_NAME)
            .collect();
        if feature_files.is_empty() {
            for (subject, dir) in subject_dirs(path)? {
                let s = ingest_subject(&dir, &subject, schedule(input), recipe)?;
                datasets.push(Dataset {
                    name: subject,
                    matrix: s.matrix,
                });
                files.extend(s.files);
            }
        } else {
            for p in feature_files {
                datasets.push(Dataset {
                    name: stem(&p),
                    matrix: read_matrix(&p)?,
                });
                files.push(p);
            }
        }
    } else {
        bail!("input {} does not exist", path.display());
    }
    if pooled && datasets.len() > 1 {
        let parts: Vec<FeatureMatrix> = datasets.into_iter().map(|d| d.matrix).collect();
        datasets = vec![Dataset {
            name: POOLED_NAME.to_string(),
            matrix: FeatureMatrix::vstack(&parts)?,
        }];
    }
    Ok((datasets, files))
}
