//! Evaluation: disentanglement (MIG, AAM), manipulative precision, Fréchet
//! distances, Inception Score, traversals and trajectory reports.

pub mod diagnostics;
pub mod embed;
pub mod frechet;
pub mod info;

pub use diagnostics::{
    code_factor_table, dyn_trajectory_report, linear_r2, mp_score, mp_value, text_image_similarity, traversal_grid, MpScore,
    TrajectoryReport,
};
pub use embed::{AttributePosterior, AttributeProbe, FrameEmbedder, RandomFrameEmbedder, RandomVideoEmbedder, TextAlignedEmbedder, VideoEmbedder};
pub use frechet::{frechet_distance, frechet_from_moments, inception_score, GaussianMoments};
pub use info::{aam, discretize, entropy, mig, mutual_information, AamMode, CodeFactorTable, DEFAULT_BINS};

use serde::{Deserialize, Serialize};

/// Summary written by `metrics`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mig: f64,
    pub aam: f64,
    pub mp: f64,
    pub frechet_frame: f64,
    pub frechet_video: f64,
    pub is: f64,
    pub config_hash: String,
    pub seed: u64,
    pub n_samples: usize,
}
