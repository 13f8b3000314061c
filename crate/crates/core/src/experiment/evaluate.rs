//! Scoring a fitted model on one held-out fold.

use crate::data::{SampleStatus, SurvivalDataset};
use crate::error::Result;
use crate::experiment::train::predict_risks;
use crate::metrics::{
    breslow_cumhaz, concordance_index, integrated_brier_score, median, predict_survival,
    stratify_and_logrank, MetricsReport, SurvivalCurve,
};
use crate::model::Mlp;

/// Training-side support required for the integrated Brier horizon: the
/// largest training event time must keep at least this many samples at risk.
pub const MIN_RISK_SET: usize = 20;

/// Compute every fold-level metric.
///
/// All reference quantities come from the training side: the baseline hazard
/// is fitted on training risks, the Brier horizon on training follow-up, and
/// the risk threshold is the median training risk. The test set contributes
/// nothing except the samples being scored.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_fold(
    model: &Mlp,
    ds: &SurvivalDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    test_idx: &[usize],
    repeat: usize,
    fold: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let train_labeled: Vec<usize> = train_idx
        .iter()
        .copied()
        .filter(|&i| ds.statuses[i] != SampleStatus::Unlabeled)
        .collect();
    let (train_times, train_events) = ds.labels_for(&train_labeled)?;
    let train_risks = predict_risks(model, ds, &train_labeled)?;
    let (test_times, test_events) = ds.labels_for(test_idx)?;
    let test_risks = predict_risks(model, ds, test_idx)?;

    let c_index = concordance_index(&test_risks, &test_times, &test_events)?;

    let baseline = breslow_cumhaz(&train_risks, &train_times, &train_events)?;
    // sampling the curve at the baseline's own step times makes later
    // point evaluations exact
    let curves: Vec<SurvivalCurve> = test_risks
        .iter()
        .map(|&score| predict_survival(score, &baseline, &baseline.times))
        .collect();
    let ibs = integrated_brier_score(
        &curves,
        &test_times,
        &test_events,
        &train_times,
        &train_events,
        MIN_RISK_SET,
    )?;

    let threshold = median(&train_risks);
    let strat = stratify_and_logrank(&test_risks, &test_times, &test_events, threshold)?;

    let ids = |idx: &[usize]| idx.iter().map(|&i| ds.sample_ids[i].clone()).collect();
    let report = MetricsReport {
        repeat,
        fold,
        seed,
        c_index,
        ibs: ibs.value,
        ibs_horizon: ibs.horizon,
        stratification_p: strat.logrank.p,
        km_high: strat.high,
        km_low: strat.low,
        train_ids: ids(train_idx),
        val_ids: ids(val_idx),
        test_ids: ids(test_idx),
    };
    report.validate()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split_folds, SplitOptions, SynthConfig};
    use crate::experiment::train::{train_cox_mt, TrainConfig};
    use crate::model::{init_mlp, MlpSpec};
    use crate::seeds::{self, Stream};

    #[test]
    fn end_to_end_fold_evaluation_produces_a_valid_report() {
        let (ds, _) = generate_synthetic(&SynthConfig {
            n_samples: 120,
            dim: 6,
            censor_fraction: 0.3,
            unlabeled_fraction: 0.2,
            seed: 23,
            ..SynthConfig::default()
        })
        .unwrap();
        let plans = split_folds(
            &ds,
            &SplitOptions {
                k: 3,
                repeats: 1,
                ..SplitOptions::default()
            },
        )
        .unwrap();
        let triple = plans[0].triple(&ds, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            lr: 5e-3,
            hidden: vec![8],
            patience: 0,
            seed: 7,
            ..TrainConfig::default()
        };
        let trained = train_cox_mt(&ds, &triple.train, &triple.val, &cfg).unwrap();
        let report = evaluate_fold(
            trained.eval_model(),
            &ds,
            &triple.train,
            &triple.val,
            &triple.test,
            0,
            0,
            99,
        )
        .unwrap();
        assert!(report.c_index > 0.0 && report.c_index < 1.0);
        assert!(report.ibs > 0.0 && report.ibs < 0.5);
        assert!(report.ibs_horizon > 0.0);
        assert!(!report.km_high.times.is_empty());
        assert!(!report.km_low.times.is_empty());
        assert_eq!(report.test_ids.len(), triple.test.len());
        for tid in &report.test_ids {
            assert!(!report.train_ids.contains(tid));
            assert!(!report.val_ids.contains(tid));
        }
    }

    #[test]
    fn an_oracle_linear_model_scores_high_concordance() {
        // plant the true coefficients in a bias-free linear model: its
        // risk ordering is the generating one, so concordance must be high
        let (ds, truth) = generate_synthetic(&SynthConfig {
            n_samples: 400,
            dim: 5,
            beta_sparsity: 1.0,
            censor_fraction: 0.2,
            seed: 29,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut rng = seeds::rng(0, Stream::ModelInit);
        let oracle = init_mlp(&MlpSpec::new(5, vec![], 0.0).unwrap(), &mut rng).unwrap();
        oracle.weights[0].set_values(&truth.beta);

        let labeled = ds.labeled_indices();
        let (split, _) = labeled.split_at(labeled.len() / 2);
        let test: Vec<usize> = labeled[labeled.len() / 2..].to_vec();
        let report = evaluate_fold(&oracle, &ds, split, &[], &test, 0, 0, 1).unwrap();
        assert!(
            report.c_index > 0.7,
            "oracle c-index {} unexpectedly low",
            report.c_index
        );
        assert!(report.stratification_p < 0.05);
    }
}
