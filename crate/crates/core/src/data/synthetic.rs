//! Synthetic proportional-hazards cohorts with known coefficients.
//!
//! Event times are exponential with per-sample rate `baseline_rate *
//! exp(beta . x)`; censoring times are exponential with a single rate
//! calibrated so the expected censored share matches `censor_fraction`.
//! A random subset of samples is stripped to the unlabeled pool.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::dataset::{SampleStatus, SurvivalDataset};
use crate::error::{Error, Result};
use crate::seeds::{self, Stream};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub dim: usize,
    /// Fraction of coordinates with nonzero coefficients, in (0, 1].
    pub beta_sparsity: f64,
    /// Baseline hazard rate, > 0.
    pub baseline_rate: f64,
    /// Target expected censored share, in [0, 1). Zero disables censoring.
    pub censor_fraction: f64,
    /// Share of samples stripped of labels, in [0, 1).
    pub unlabeled_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            n_samples: 200,
            dim: 10,
            beta_sparsity: 0.5,
            baseline_rate: 0.1,
            censor_fraction: 0.3,
            unlabeled_fraction: 0.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::config("need at least 2 samples"));
        }
        if self.dim == 0 {
            return Err(Error::config("feature dimension must be positive"));
        }
        if !(self.beta_sparsity > 0.0 && self.beta_sparsity <= 1.0) {
            return Err(Error::config(format!(
                "beta_sparsity {} outside (0, 1]",
                self.beta_sparsity
            )));
        }
        if !(self.baseline_rate.is_finite() && self.baseline_rate > 0.0) {
            return Err(Error::config(format!(
                "baseline_rate {} must be positive and finite",
                self.baseline_rate
            )));
        }
        if !(0.0..1.0).contains(&self.censor_fraction) {
            return Err(Error::config(format!(
                "censor_fraction {} outside [0, 1)",
                self.censor_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.unlabeled_fraction) {
            return Err(Error::config(format!(
                "unlabeled_fraction {} outside [0, 1)",
                self.unlabeled_fraction
            )));
        }
        let n_unlabeled = (self.unlabeled_fraction * self.n_samples as f64).round() as usize;
        if self.n_samples - n_unlabeled < 2 {
            return Err(Error::config(
                "unlabeled_fraction leaves fewer than 2 labeled samples",
            ));
        }
        Ok(())
    }
}

/// The generating parameters, kept for recovery checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub beta: Vec<f64>,
    /// Calibrated censoring-time rate (0 when censoring is disabled).
    pub censor_rate: f64,
    pub seed: u64,
}

impl GroundTruth {
    /// True linear risk score `beta . x` per sample.
    pub fn risk_scores(&self, features: &Array2<f64>) -> Vec<f64> {
        features
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(&self.beta).map(|(x, b)| x * b).sum())
            .collect()
    }
}

/// Solve `mean_i r / (r + lambda_i) = target` for the censoring rate `r`.
/// The left side is continuous and strictly increasing from 0 toward 1, so
/// bracket doubling plus bisection always converges.
fn calibrate_censor_rate(lambdas: &[f64], target: f64) -> f64 {
    let censored_share =
        |r: f64| lambdas.iter().map(|&l| r / (r + l)).sum::<f64>() / lambdas.len() as f64;
    let mut hi = lambdas.iter().sum::<f64>() / lambdas.len() as f64;
    let mut doublings = 0;
    while censored_share(hi) < target && doublings < 200 {
        hi *= 2.0;
        doublings += 1;
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if censored_share(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn exponential_draw(rng: &mut impl Rng, rate: f64) -> f64 {
    let u: f64 = rng.random();
    (-u.max(f64::MIN_POSITIVE).ln() / rate).max(1e-12)
}

/// Generate a cohort. Draw order (coefficients, features, event times,
/// censoring times, unlabeled selection) is fixed, so one seed always yields
/// the same cohort.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(SurvivalDataset, GroundTruth)> {
    cfg.validate()?;
    let mut rng = seeds::rng(cfg.seed, Stream::Synthetic);
    let n = cfg.n_samples;
    let d = cfg.dim;

    let n_informative = ((cfg.beta_sparsity * d as f64).round() as usize)
        .max(1)
        .min(d);
    let mut informative = rand::seq::index::sample(&mut rng, d, n_informative).into_vec();
    informative.sort_unstable();
    let mut beta = vec![0.0; d];
    for &j in &informative {
        let magnitude = 0.5 + rng.random::<f64>();
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        beta[j] = sign * magnitude;
    }

    let mut features = Array2::zeros((n, d));
    for i in 0..n {
        for j in 0..d {
            features[[i, j]] = StandardNormal.sample(&mut rng);
        }
    }

    let lambdas: Vec<f64> = (0..n)
        .map(|i| {
            let eta: f64 = (0..d).map(|j| beta[j] * features[[i, j]]).sum();
            cfg.baseline_rate * eta.exp()
        })
        .collect();
    if lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::Domain {
            op: "generate_synthetic",
            detail: "a per-sample hazard overflowed; reduce baseline_rate or dim".to_string(),
        });
    }

    let event_times: Vec<f64> = lambdas
        .iter()
        .map(|&l| exponential_draw(&mut rng, l))
        .collect();

    let censor_rate = if cfg.censor_fraction == 0.0 {
        0.0
    } else {
        calibrate_censor_rate(&lambdas, cfg.censor_fraction)
    };
    let mut times: Vec<Option<f64>> = Vec::with_capacity(n);
    let mut statuses: Vec<SampleStatus> = Vec::with_capacity(n);
    for &t_event in &event_times {
        let (time, status) = if censor_rate == 0.0 {
            (t_event, SampleStatus::Event)
        } else {
            let t_censor = exponential_draw(&mut rng, censor_rate);
            if t_event <= t_censor {
                (t_event, SampleStatus::Event)
            } else {
                (t_censor, SampleStatus::Censored)
            }
        };
        times.push(Some(time));
        statuses.push(status);
    }

    let n_unlabeled = (cfg.unlabeled_fraction * n as f64).round() as usize;
    if n_unlabeled > 0 {
        for i in rand::seq::index::sample(&mut rng, n, n_unlabeled) {
            times[i] = None;
            statuses[i] = SampleStatus::Unlabeled;
        }
    }

    let sample_ids = (0..n).map(|i| format!("s{i:05}")).collect();
    let feature_names = (0..d).map(|j| format!("x{j}")).collect();
    let ds = SurvivalDataset::new(sample_ids, feature_names, features, times, statuses)?;
    let truth = GroundTruth {
        beta,
        censor_rate,
        seed: cfg.seed,
    };
    Ok((ds, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::concordance_index;

    #[test]
    fn generation_is_deterministic_per_seed() {
        let cfg = SynthConfig {
            n_samples: 60,
            unlabeled_fraction: 0.25,
            ..SynthConfig::default()
        };
        let (a, ta) = generate_synthetic(&cfg).unwrap();
        let (b, tb) = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.times, b.times);
        assert_eq!(a.statuses, b.statuses);
        assert_eq!(ta, tb);

        let (c, tc) = generate_synthetic(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.features, c.features);
        assert_ne!(ta.beta, tc.beta);
    }

    #[test]
    fn shapes_ids_and_unlabeled_count_are_exact() {
        let cfg = SynthConfig {
            n_samples: 40,
            dim: 6,
            unlabeled_fraction: 0.3,
            ..SynthConfig::default()
        };
        let (ds, _) = generate_synthetic(&cfg).unwrap();
        assert_eq!(ds.n(), 40);
        assert_eq!(ds.dim(), 6);
        assert_eq!(ds.sample_ids[0], "s00000");
        assert_eq!(ds.sample_ids[39], "s00039");
        assert_eq!(ds.feature_names, vec!["x0", "x1", "x2", "x3", "x4", "x5"]);
        assert_eq!(ds.unlabeled_indices().len(), 12);
        for &i in &ds.labeled_indices() {
            let t = ds.times[i].unwrap();
            assert!(t.is_finite() && t > 0.0);
        }
    }

    #[test]
    fn sparsity_controls_nonzero_coefficients() {
        let cfg = SynthConfig {
            dim: 20,
            beta_sparsity: 0.25,
            ..SynthConfig::default()
        };
        let (_, truth) = generate_synthetic(&cfg).unwrap();
        let nonzero: Vec<f64> = truth.beta.iter().copied().filter(|b| *b != 0.0).collect();
        assert_eq!(nonzero.len(), 5);
        for b in nonzero {
            let m = b.abs();
            assert!((0.5..=1.5).contains(&m), "magnitude {m} out of range");
        }

        // sparsity so small that rounding hits zero still keeps one coefficient
        let tiny = SynthConfig {
            dim: 100,
            beta_sparsity: 0.001,
            ..SynthConfig::default()
        };
        let (_, truth) = generate_synthetic(&tiny).unwrap();
        assert_eq!(truth.beta.iter().filter(|b| **b != 0.0).count(), 1);
    }

    #[test]
    fn zero_censor_fraction_yields_all_events() {
        let cfg = SynthConfig {
            censor_fraction: 0.0,
            ..SynthConfig::default()
        };
        let (ds, truth) = generate_synthetic(&cfg).unwrap();
        assert_eq!(truth.censor_rate, 0.0);
        assert_eq!(ds.event_indices().len(), ds.n());
    }

    #[test]
    fn censoring_calibration_hits_the_target_share() {
        let cfg = SynthConfig {
            n_samples: 4000,
            censor_fraction: 0.4,
            seed: 11,
            ..SynthConfig::default()
        };
        let (ds, _) = generate_synthetic(&cfg).unwrap();
        let share = ds.censored_indices().len() as f64 / ds.n() as f64;
        assert!(
            (share - 0.4).abs() < 0.03,
            "realized censored share {share} far from 0.4"
        );
    }

    #[test]
    fn calibration_solves_the_mean_share_equation() {
        let lambdas = vec![0.05, 0.1, 0.2, 0.4, 0.8];
        let r = calibrate_censor_rate(&lambdas, 0.35);
        let share: f64 = lambdas.iter().map(|&l| r / (r + l)).sum::<f64>() / lambdas.len() as f64;
        assert!((share - 0.35).abs() < 1e-10);
    }

    #[test]
    fn true_scores_are_concordant_with_generated_times() {
        let cfg = SynthConfig {
            n_samples: 800,
            dim: 5,
            beta_sparsity: 1.0,
            censor_fraction: 0.2,
            seed: 3,
            ..SynthConfig::default()
        };
        let (ds, truth) = generate_synthetic(&cfg).unwrap();
        let idx = ds.labeled_indices();
        let (times, events) = ds.labels_for(&idx).unwrap();
        let risks = truth.risk_scores(&ds.features);
        let c = concordance_index(&risks, &times, &events).unwrap();
        assert!(c > 0.7, "true-coefficient c-index {c} suspiciously low");
    }

    #[test]
    fn config_validation_rejects_bad_inputs() {
        let bad = |f: fn(&mut SynthConfig)| {
            let mut cfg = SynthConfig::default();
            f(&mut cfg);
            generate_synthetic(&cfg).is_err()
        };
        assert!(bad(|c| c.n_samples = 1));
        assert!(bad(|c| c.dim = 0));
        assert!(bad(|c| c.beta_sparsity = 0.0));
        assert!(bad(|c| c.beta_sparsity = 1.5));
        assert!(bad(|c| c.baseline_rate = 0.0));
        assert!(bad(|c| c.censor_fraction = 1.0));
        assert!(bad(|c| c.unlabeled_fraction = 0.999));
    }
}
