//! Data ingestion, preprocessing, synthetic cohorts and fold plans.

mod dataset;
mod expression;
mod folds;
mod patches;
mod synthetic;

pub use dataset::{
    assemble_dataset, load_clinical_csv, load_dataset, save_dataset, AssembleReport,
    ClinicalRecord, SampleStatus, SurvivalDataset,
};
pub use expression::{
    load_expression_csv, write_expression_csv, ExpressionMatrix, IngestReport, Orientation, Stage,
    HOUSEKEEPING_GENES,
};
pub use folds::{
    carve_validation, read_fold_plans, split_folds, write_fold_plans, FoldPlan, FoldTriple,
    SplitOptions,
};
pub use patches::{load_patch_dir, write_patch_csv, PatchFeatureSet, PatchStore};
pub use synthetic::{generate_synthetic, GroundTruth, SynthConfig};
