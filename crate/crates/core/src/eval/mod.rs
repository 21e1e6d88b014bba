//! Recognition matcher and the verification protocol: genuine/imposter
//! scores, TAR@FAR, PCA projection and the real/synthetic utility
//! experiment.

mod matcher;
mod project;
mod scores;
mod utility;

pub use matcher::{identity_key, manifest_images, match_score, train_matcher, train_matcher_on, Embedding, MatcherConfig, MatcherModel};
pub use project::{project_2d, POWER_ITERS};
pub use scores::{
    histogram, histogram_csv, histogram_svg, identity_margin_bootstrap, overlap_coefficient, MarginBootstrap, score_distributions, score_distributions_from, tar_at_far, Protocol,
    ScoreSet, TarAtFar,
};
pub use utility::{utility_experiment, utility_experiment_on, IdKey, LabeledImages, TrainConfiguration, UtilityConfig, UtilityReport, UtilityRow};

