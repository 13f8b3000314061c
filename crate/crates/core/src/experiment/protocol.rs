//! The repeated cross-validation protocol and the studies built on it.
//!
//! One job = (repeat, fold): search the hyperparameter grid by validation
//! concordance, refit the winner on train + validation, then score the
//! held-out test fold. Jobs are independent and run through `exec::map_jobs`
//! (data-parallel by default, sequential without the `parallel` feature).
//! Seeds are derived per job and per grid point, so results do not depend on
//! scheduling order.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::{split_folds, FoldPlan, SampleStatus, SplitOptions, SurvivalDataset};
use crate::error::{Error, Result};
use crate::exec;
use crate::experiment::evaluate::evaluate_fold;
use crate::experiment::train::{train_cox_mt, TrainConfig, TrainedModel};
use crate::metrics::{median, wilcoxon_rank_sum, MetricsReport, WilcoxonResult};
use crate::seeds::{self, Stream};

/// One grid-search cell: fields left `None` inherit the base config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridPoint {
    pub lr: Option<f64>,
    pub consistency_weight: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub ema_alpha: Option<f64>,
    pub dropout: Option<f64>,
}

impl GridPoint {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.consistency_weight {
            cfg.consistency_weight = v;
        }
        if let Some(v) = self.noise_sigma {
            cfg.noise_sigma = v;
        }
        if let Some(v) = self.ema_alpha {
            cfg.ema_alpha = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub split: SplitOptions,
    pub train: TrainConfig,
    /// Hyperparameter grid; empty means "use the base config as-is".
    pub grid: Vec<GridPoint>,
    /// Worker thread cap for the job pool; 0 keeps the scheduler default.
    pub threads: usize,
}

/// What one (repeat, fold) job produced.
#[derive(Debug, Clone, Serialize)]
pub struct JobOutcome {
    pub report: MetricsReport,
    /// Index into the grid (0 when the grid is empty).
    pub grid_index: usize,
    /// Validation concordance of the winning grid point.
    pub val_c_index: f64,
    /// Best epoch found during the search; the refit runs this many + 1.
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProtocolResult {
    pub outcomes: Vec<JobOutcome>,
}

impl ProtocolResult {
    pub fn reports(&self) -> Vec<&MetricsReport> {
        self.outcomes.iter().map(|o| &o.report).collect()
    }

    pub fn c_indices(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.report.c_index).collect()
    }

    pub fn summary(&self) -> ProtocolSummary {
        summarize(
            &self
                .outcomes
                .iter()
                .map(|o| o.report.clone())
                .collect::<Vec<_>>(),
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProtocolSummary {
    pub n_runs: usize,
    pub mean_c_index: f64,
    pub std_c_index: f64,
    pub median_c_index: f64,
    pub mean_ibs: f64,
    pub median_ibs: f64,
    pub mean_ibs_horizon: f64,
    /// Runs whose high/low risk separation reached p < 0.05.
    pub significant_stratifications: usize,
}

pub fn summarize(reports: &[MetricsReport]) -> ProtocolSummary {
    let n = reports.len();
    let cs: Vec<f64> = reports.iter().map(|r| r.c_index).collect();
    let ibs: Vec<f64> = reports.iter().map(|r| r.ibs).collect();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mean_c = mean(&cs);
    let std_c = if n > 1 {
        (cs.iter().map(|c| (c - mean_c).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    ProtocolSummary {
        n_runs: n,
        mean_c_index: mean_c,
        std_c_index: std_c,
        median_c_index: median(&cs),
        mean_ibs: mean(&ibs),
        median_ibs: median(&ibs),
        mean_ibs_horizon: mean(&reports.iter().map(|r| r.ibs_horizon).collect::<Vec<_>>()),
        significant_stratifications: reports.iter().filter(|r| r.stratification_p < 0.05).count(),
    }
}

fn run_job(
    ds: &SurvivalDataset,
    plan: &FoldPlan,
    repeat: usize,
    fold: usize,
    cfg: &ProtocolConfig,
) -> Result<JobOutcome> {
    let triple = plan.triple(ds, fold)?;
    let job_seed = seeds::derive(
        cfg.train.seed,
        Stream::Job {
            repeat: repeat as u64,
            fold: fold as u64,
        },
    );

    let identity = [GridPoint::default()];
    let grid: &[GridPoint] = if cfg.grid.is_empty() {
        &identity
    } else {
        &cfg.grid
    };

    let mut winner: Option<(usize, TrainedModel)> = None;
    for (g, point) in grid.iter().enumerate() {
        let mut tc = point.apply(&cfg.train);
        tc.seed = seeds::derive(job_seed, Stream::GridPoint(g as u64));
        let trained = train_cox_mt(ds, &triple.train, &triple.val, &tc)?;
        let val_c = trained.best_val_c.ok_or_else(|| {
            Error::config("the protocol needs a validation split (val_fraction > 0)")
        })?;
        let better = winner
            .as_ref()
            .is_none_or(|(_, best)| val_c > best.best_val_c.unwrap());
        if better {
            winner = Some((g, trained));
        }
    }
    let (grid_index, searched) = winner.expect("grid is never empty here");
    let val_c_index = searched.best_val_c.unwrap();
    let best_epoch = searched.best_epoch;

    // refit on train + validation with the winning settings, for as long as
    // the search run stayed useful
    let mut refit_cfg = searched.config.clone();
    refit_cfg.epochs = best_epoch + 1;
    refit_cfg.patience = 0;
    refit_cfg.seed = seeds::derive(job_seed, Stream::Custom(1));
    let mut merged: Vec<usize> = triple.train.iter().chain(&triple.val).copied().collect();
    merged.sort_unstable();
    let refit = train_cox_mt(ds, &merged, &[], &refit_cfg)?;

    let report = evaluate_fold(
        refit.eval_model(),
        ds,
        &merged,
        &[],
        &triple.test,
        repeat,
        fold,
        job_seed,
    )?;
    Ok(JobOutcome {
        report,
        grid_index,
        val_c_index,
        best_epoch,
    })
}

/// Run every (repeat, fold) job and audit split hygiene on the way out.
pub fn run_protocol(ds: &SurvivalDataset, cfg: &ProtocolConfig) -> Result<ProtocolResult> {
    let plans = split_folds(ds, &cfg.split)?;
    let jobs: Vec<(usize, usize)> = (0..cfg.split.repeats)
        .flat_map(|r| (0..cfg.split.k).map(move |t| (r, t)))
        .collect();
    let results: Vec<Result<JobOutcome>> = exec::with_thread_cap(cfg.threads, || {
        exec::map_jobs(jobs, |(r, t)| run_job(ds, &plans[r], r, t, cfg))
    });
    let outcomes: Vec<JobOutcome> = results.into_iter().collect::<Result<_>>()?;
    audit_test_isolation(ds, &outcomes)?;
    Ok(ProtocolResult { outcomes })
}

/// Leak audit over finished reports: no test sample may appear in its own
/// run's training or validation ids, and within each repeat the test folds
/// must partition the labeled cohort exactly.
pub fn audit_test_isolation(ds: &SurvivalDataset, outcomes: &[JobOutcome]) -> Result<()> {
    let labeled: HashSet<&str> = ds
        .labeled_indices()
        .into_iter()
        .map(|i| ds.sample_ids[i].as_str())
        .collect();
    let mut by_repeat: std::collections::HashMap<usize, Vec<&MetricsReport>> =
        std::collections::HashMap::new();
    for outcome in outcomes {
        let r = &outcome.report;
        let train: HashSet<&str> = r.train_ids.iter().map(String::as_str).collect();
        let val: HashSet<&str> = r.val_ids.iter().map(String::as_str).collect();
        for tid in &r.test_ids {
            if train.contains(tid.as_str()) || val.contains(tid.as_str()) {
                return Err(Error::dataset(format!(
                    "isolation audit: test sample `{tid}` leaked into repeat {} fold {}",
                    r.repeat, r.fold
                )));
            }
        }
        by_repeat.entry(r.repeat).or_default().push(r);
    }
    for (repeat, reports) in &by_repeat {
        let mut seen: HashSet<&str> = HashSet::new();
        for r in reports {
            for tid in &r.test_ids {
                if !seen.insert(tid.as_str()) {
                    return Err(Error::dataset(format!(
                        "isolation audit: sample `{tid}` tested twice in repeat {repeat}"
                    )));
                }
            }
        }
        if seen != labeled {
            return Err(Error::dataset(format!(
                "isolation audit: repeat {repeat} tested {} samples but the cohort has {} labeled",
                seen.len(),
                labeled.len()
            )));
        }
    }
    Ok(())
}

/// The standard ablation arms: each switches off one ingredient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationArm {
    Full,
    NoConsistency,
    NoNoise,
    NoDropout,
    NoEma,
}

impl AblationArm {
    pub const ALL: [AblationArm; 5] = [
        AblationArm::Full,
        AblationArm::NoConsistency,
        AblationArm::NoNoise,
        AblationArm::NoDropout,
        AblationArm::NoEma,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationArm::Full => "full",
            AblationArm::NoConsistency => "no_consistency",
            AblationArm::NoNoise => "no_noise",
            AblationArm::NoDropout => "no_dropout",
            AblationArm::NoEma => "no_ema",
        }
    }

    fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            AblationArm::Full => {}
            AblationArm::NoConsistency => cfg.consistency_weight = 0.0,
            AblationArm::NoNoise => cfg.noise_sigma = 0.0,
            AblationArm::NoDropout => cfg.dropout = 0.0,
            // alpha 0 pins the teacher to the current student
            AblationArm::NoEma => cfg.ema_alpha = 0.0,
        }
        cfg
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationOutcome {
    pub arm: String,
    pub summary: ProtocolSummary,
    pub c_indices: Vec<f64>,
    /// Rank-sum test of this arm's per-run concordances against the full
    /// configuration (absent for the full arm itself).
    pub wilcoxon_vs_full: Option<WilcoxonResult>,
}

/// Run the protocol once per arm over the same folds and compare each arm
/// against the full configuration.
pub fn ablate(
    ds: &SurvivalDataset,
    cfg: &ProtocolConfig,
    arms: &[AblationArm],
) -> Result<Vec<AblationOutcome>> {
    if arms.is_empty() {
        return Err(Error::config("no ablation arms requested"));
    }
    let mut full_cs: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(arms.len());
    // the full arm must run first so later arms can test against it
    let mut ordered: Vec<AblationArm> = Vec::new();
    if arms.contains(&AblationArm::Full) {
        ordered.push(AblationArm::Full);
    }
    ordered.extend(arms.iter().copied().filter(|a| *a != AblationArm::Full));

    for arm in ordered {
        let arm_cfg = ProtocolConfig {
            train: arm.apply(&cfg.train),
            ..cfg.clone()
        };
        let result = run_protocol(ds, &arm_cfg)?;
        let cs = result.c_indices();
        let wilcoxon = match (&full_cs, arm) {
            (_, AblationArm::Full) => None,
            (Some(full), _) => Some(wilcoxon_rank_sum(&cs, full)?),
            (None, _) => None,
        };
        if arm == AblationArm::Full {
            full_cs = Some(cs.clone());
        }
        out.push(AblationOutcome {
            arm: arm.label().to_string(),
            summary: result.summary(),
            c_indices: cs,
            wilcoxon_vs_full: wilcoxon,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingPoint {
    pub n_unlabeled: usize,
    pub summary: ProtocolSummary,
    pub c_indices: Vec<f64>,
}

/// Rerun the protocol with the labeled cohort held fixed and the unlabeled
/// pool restricted to nested prefixes of the requested sizes. Labeled fold
/// assignments are identical across sizes (the shuffle sees the same labeled
/// sequence), so per-run concordances are directly comparable.
pub fn unlabeled_scaling_study(
    ds: &SurvivalDataset,
    cfg: &ProtocolConfig,
    sizes: &[usize],
) -> Result<Vec<ScalingPoint>> {
    if sizes.is_empty() {
        return Err(Error::config("no unlabeled pool sizes requested"));
    }
    let unlabeled = ds.unlabeled_indices();
    let mut points = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size > unlabeled.len() {
            return Err(Error::config(format!(
                "requested {size} unlabeled samples but the cohort has {}",
                unlabeled.len()
            )));
        }
        let keep: HashSet<usize> = unlabeled[..size].iter().copied().collect();
        let indices: Vec<usize> = (0..ds.n())
            .filter(|&i| ds.statuses[i] != SampleStatus::Unlabeled || keep.contains(&i))
            .collect();
        let sub = ds.subset(&indices);
        let result = run_protocol(&sub, cfg)?;
        points.push(ScalingPoint {
            n_unlabeled: size,
            summary: result.summary(),
            c_indices: result.c_indices(),
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub median_a: f64,
    pub median_b: f64,
    pub wilcoxon: WilcoxonResult,
}

/// Rank-sum comparison of two sets of per-run concordances.
pub fn compare_c_indices(a: &[f64], b: &[f64]) -> Result<Comparison> {
    // The rank-sum test rejects empty or NaN input; run it before the
    // medians, which would panic on an empty slice.
    let wilcoxon = wilcoxon_rank_sum(a, b)?;
    Ok(Comparison {
        median_a: median(a),
        median_b: median(b),
        wilcoxon,
    })
}
