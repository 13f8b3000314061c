//! Survival model evaluation: concordance, baseline hazard and survival
//! curves, Kaplan-Meier, Brier score / IBS, log-rank and Wilcoxon rank-sum.

mod breslow;
mod brier;
mod concordance;
mod km;
mod ranktests;
mod report;

pub use breslow::{breslow_cumhaz, predict_survival, BaselineHazard, SurvivalCurve};
pub use brier::{brier_score, integrated_brier_score, IbsResult};
pub use concordance::concordance_index;
pub use km::{km_estimate, reverse_km, KmCurve};
pub use ranktests::{
    logrank_test, median, stratify_and_logrank, wilcoxon_rank_sum, LogRankResult, StratifiedCurves,
    WilcoxonResult,
};
pub use report::MetricsReport;
