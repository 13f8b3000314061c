//! Training loops, fold evaluation and the repeated cross-validation
//! protocol with its ablation, scaling and comparison studies.

mod evaluate;
mod protocol;
mod train;

pub use evaluate::{evaluate_fold, MIN_RISK_SET};
pub use protocol::{
    ablate, audit_test_isolation, compare_c_indices, run_protocol, summarize,
    unlabeled_scaling_study, AblationArm, AblationOutcome, Comparison, GridPoint, JobOutcome,
    ProtocolConfig, ProtocolResult, ProtocolSummary, ScalingPoint,
};
pub use train::{
    predict_risks, train_cox_mt, train_supervised_baseline, EpochStats, TrainConfig, TrainedModel,
};
