//! Keypoints, descriptor matching, robust homography estimation and the
//! homography bank used to perturb control line maps.

mod bank;
mod brief_pattern;
mod homography;
mod matching;
mod orb;
pub(crate) mod ransac;
mod refine;

pub use bank::{
    build_homography_bank, estimate_pair, sample_entry, sample_homography, BankConfig, BankEntry, HomographyBank,
    PairOutcome,
};
pub use brief_pattern::{BRIEF_PATTERN, PATTERN_RADIUS};
pub use homography::{solve_dlt, Homography, MIN_ABS_DET};
pub use matching::match_descriptors;
pub use orb::{detect_keypoints, detect_keypoints_with, fast_corners, fast_score, Descriptor, Keypoint, OrbConfig, FAST_CIRCLE};
pub use refine::refine_homography;
pub use ransac::{estimate_homography_ransac, estimate_homography_ransac_filtered, estimate_observed, symmetric_error, Correspondence, RansacResult};
