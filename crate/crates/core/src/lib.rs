//! Alignment of multi-rate wearable sensor streams into per-second feature
//! matrices, and three unsupervised analyses over them: k-means++ clustering,
//! Gaussian-mixture EM with four covariance structures, and a hexagonal
//! self-organizing map. Pearson correlation reports and seeded synthetic
//! generators round out the toolkit.

// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod error;
pub mod gmm;
pub mod ingest;
pub mod kmeans;
pub mod matrix;
pub mod som;
pub mod stats;
pub mod synth;

pub use assignment::Assignment;
pub use error::{Error, Result};
pub use gmm::{
    e_step, gaussian_log_pdf, gmm_cluster, gmm_fit, m_step, CovarianceShape, CovarianceSharing,
    CovarianceStructure, GmmConfig, GmmModel, Mixture, Responsibilities,
};
pub use ingest::{
    align_blocks, align_features, parse_stream, segment_blocks, Alignment, BlockSchedule, FeatureRecipe,
    Modality, RecordingBlock, Segmentation, SensorStream,
};
pub use kmeans::{
    kmeans_fit, kmeans_predict, kmeanspp_init, lloyd, preliminary_phase, Distance, KMeansConfig, KMeansInit,
    KMeansModel,
};
pub use matrix::{ColumnScale, FeatureMatrix, RowKey};
pub use som::{
    bmu, quantization_error, sample_hits, som_init, som_train, u_matrix, HexGrid, SomConfig, SomInit, SomModel,
    UMatrix,
};
pub use stats::{correlation_report, pearson, CorrelationReport};
pub use synth::{
    adjusted_rand_index, bruteforce_kmeans, gen_blobs, gen_mixture, gen_sensor_streams, ActivitySchedule,
    MixtureComponent, MixtureSpec,
};
