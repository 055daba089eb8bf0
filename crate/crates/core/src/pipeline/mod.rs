//! Experiment orchestration: case-atomic splits, patch harvesting, the
//! first- and second-stage training recipes, feature datasets and
//! end-to-end evaluation.

mod config;
mod data;
mod evaluate;
mod features;
mod recipes;
pub mod run;
mod split;

pub use config::{
    DataSection, EvalSection, ExperimentConfig, ModelSection, PatchSection, Profile, ScanSection,
    SetPlan, TrainSection, Variant,
};
pub use data::{
    harvest_patches, load_patch_set, patch_seed, patches_for_image, to_labeled, DiskSet,
    ImageProvider, LargeImage, PatchMethod, SynthSet, RANDOM_MAX_DRAWS, RANDOM_PER_IMAGE,
};
pub use evaluate::{
    evaluate_end_to_end, evaluate_images, mean_peak_k, orientation_check, score_features,
    small_image_scores, Evaluation, OrientationCheck,
};
pub use features::{build_feature_dataset, load_feature_set, scan_set, FeatureSet};
pub use recipes::{
    apply_variant, feature_inputs, second_label, train_first_cnn, train_runs, train_second_cnn,
    TrainOutcome,
};
pub use run::RunDir;
pub use split::{greedy_validation, split_by_case, SplitPlan};
