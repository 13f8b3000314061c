use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::metrics::km::{km_estimate, KmCurve};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LogRankResult {
    pub statistic: f64,
    pub p: f64,
}

/// Two-group log-rank test with the hypergeometric variance.
///
/// The chi-square tail probability (1 df) is computed as erfc(sqrt(s/2)), so
/// small p-values keep full precision.
pub fn logrank_test(
    times_a: &[f64],
    events_a: &[bool],
    times_b: &[f64],
    events_b: &[bool],
) -> Result<LogRankResult> {
    if times_a.len() != events_a.len() || times_b.len() != events_b.len() {
        return Err(Error::ShapeMismatch {
            op: "logrank_test",
            left: vec![times_a.len(), times_b.len()],
            right: vec![events_a.len(), events_b.len()],
        });
    }
    let mut event_times: Vec<f64> = times_a
        .iter()
        .zip(events_a)
        .chain(times_b.iter().zip(events_b))
        .filter(|&(_, &e)| e)
        .map(|(&t, _)| t)
        .collect();
    if event_times.is_empty() {
        return Err(Error::UndefinedMetric {
            detail: "log-rank test without any events".to_string(),
        });
    }
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();

    let mut observed = 0.0;
    let mut expected = 0.0;
    let mut variance = 0.0;
    for &t in &event_times {
        let n1 = times_a.iter().filter(|&&x| x >= t).count() as f64;
        let n2 = times_b.iter().filter(|&&x| x >= t).count() as f64;
        let d1 = times_a
            .iter()
            .zip(events_a)
            .filter(|&(&x, &e)| e && x == t)
            .count() as f64;
        let d2 = times_b
            .iter()
            .zip(events_b)
            .filter(|&(&x, &e)| e && x == t)
            .count() as f64;
        let n = n1 + n2;
        let d = d1 + d2;
        observed += d1;
        expected += d * n1 / n;
        if n > 1.0 {
            variance += d * (n1 / n) * (1.0 - n1 / n) * (n - d) / (n - 1.0);
        }
    }
    if variance <= 0.0 {
        return Err(Error::UndefinedMetric {
            detail: "log-rank variance is zero; the groups carry no shared event information"
                .to_string(),
        });
    }
    let statistic = (observed - expected) * (observed - expected) / variance;
    let p = erfc((statistic / 2.0).sqrt());
    Ok(LogRankResult { statistic, p })
}

/// Kaplan-Meier curves for high- and low-risk groups plus their log-rank
/// separation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratifiedCurves {
    pub threshold: f64,
    pub high: KmCurve,
    pub low: KmCurve,
    pub logrank: LogRankResult,
}

/// Split samples at `threshold` (risk > threshold goes high) and compare the
/// two survival curves. The threshold is the caller's choice; the repeated
/// cross-validation protocol passes the median of the training-set risks so
/// the test set never influences its own grouping.
pub fn stratify_and_logrank(
    risks: &[f64],
    times: &[f64],
    is_event: &[bool],
    threshold: f64,
) -> Result<StratifiedCurves> {
    if risks.len() != times.len() || times.len() != is_event.len() {
        return Err(Error::ShapeMismatch {
            op: "stratify_and_logrank",
            left: vec![risks.len(), times.len()],
            right: vec![is_event.len()],
        });
    }
    let (mut ht, mut he, mut lt, mut le) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..risks.len() {
        if risks[i] > threshold {
            ht.push(times[i]);
            he.push(is_event[i]);
        } else {
            lt.push(times[i]);
            le.push(is_event[i]);
        }
    }
    if ht.is_empty() {
        return Err(Error::EmptyStratum { which: "high-risk" });
    }
    if lt.is_empty() {
        return Err(Error::EmptyStratum { which: "low-risk" });
    }
    Ok(StratifiedCurves {
        threshold,
        high: km_estimate(&ht, &he)?,
        low: km_estimate(&lt, &le)?,
        logrank: logrank_test(&ht, &he, &lt, &le)?,
    })
}

/// Median of a non-empty slice (average of the central pair for even n).
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of an empty slice");
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub u: f64,
    pub z: f64,
    pub p: f64,
}

/// Two-sided Wilcoxon rank-sum (Mann-Whitney U) with midranks for ties, the
/// tie-corrected variance, a continuity correction of 1/2, and a normal
/// approximation evaluated through erfc.
///
/// This exact combination reproduces the floor for fully separated samples:
/// two size-20 groups with no overlap give p = 6.7956e-8.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedMetric {
            detail: "wilcoxon rank-sum needs two non-empty samples".to_string(),
        });
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::UndefinedMetric {
            detail: "wilcoxon rank-sum input contains NaN".to_string(),
        });
    }
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    let total = a.len() + b.len();

    // Degenerate case first: one shared constant carries no rank information.
    let first = a[0];
    if a.iter().chain(b).all(|&x| x == first) {
        return Ok(WilcoxonResult {
            u: n1 * n2 / 2.0,
            z: 0.0,
            p: 1.0,
        });
    }

    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&x| (x, true))
        .chain(b.iter().map(|&x| (x, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j < total && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let block = (j - i) as f64;
        let midrank = (i + 1 + j) as f64 / 2.0;
        for item in &pooled[i..j] {
            if item.1 {
                rank_sum_a += midrank;
            }
        }
        tie_term += block * block * block - block;
        i = j;
    }

    let u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
    let mean = n1 * n2 / 2.0;
    let nf = total as f64;
    let sigma2 = n1 * n2 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if sigma2 <= 0.0 {
        return Ok(WilcoxonResult { u, z: 0.0, p: 1.0 });
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / sigma2.sqrt();
    let p = erfc(z / std::f64::consts::SQRT_2).min(1.0);
    Ok(WilcoxonResult { u, z, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fully_separated_twenty_vs_twenty_hits_the_floor() {
        let a: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let b: Vec<f64> = (21..=40).map(|i| i as f64).collect();
        let r = wilcoxon_rank_sum(&a, &b).unwrap();
        assert_relative_eq!(r.p, 6.795615128173358e-8, max_relative = 1e-9);
        // direction does not matter for the two-sided p
        let r2 = wilcoxon_rank_sum(&b, &a).unwrap();
        assert_eq!(r.p.to_bits(), r2.p.to_bits());
    }

    #[test]
    fn frozen_reference_values_without_ties() {
        let a = [1.0, 2.0, 3.0, 4.0, 10.0];
        let b = [5.0, 6.0, 7.0, 8.0, 9.0];
        let r = wilcoxon_rank_sum(&a, &b).unwrap();
        assert_eq!(r.u, 5.0);
        assert_relative_eq!(r.p, 0.14367208180696023, max_relative = 1e-9);
    }

    #[test]
    fn frozen_reference_values_with_ties() {
        let a = [1.0, 2.0, 2.0, 3.0, 5.0, 5.0];
        let b = [2.0, 4.0, 5.0, 6.0, 6.0, 7.0];
        let r = wilcoxon_rank_sum(&a, &b).unwrap();
        assert_eq!(r.u, 7.0);
        assert_relative_eq!(r.p, 0.08755444133283344, max_relative = 1e-9);
    }

    #[test]
    fn frozen_reference_values_unequal_sizes() {
        let a = [0.1, 0.4, 0.5, 0.9];
        let b = [0.3, 0.6, 0.8, 1.1, 1.5, 2.0, 2.2];
        let r = wilcoxon_rank_sum(&a, &b).unwrap();
        assert_eq!(r.u, 5.0);
        assert_relative_eq!(r.p, 0.10819724752370144, max_relative = 1e-9);
    }

    #[test]
    fn identical_multisets_give_p_one() {
        let a = [1.0, 2.0, 3.0];
        let r = wilcoxon_rank_sum(&a, &a).unwrap();
        assert!(r.p >= 0.99);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn shared_constant_gives_p_one_without_dividing_by_zero() {
        let r = wilcoxon_rank_sum(&[2.0; 5], &[2.0; 7]).unwrap();
        assert_eq!(r.p, 1.0);
        assert_eq!(r.z, 0.0);
    }

    #[test]
    fn empty_or_nan_samples_are_errors() {
        assert!(wilcoxon_rank_sum(&[], &[1.0]).is_err());
        assert!(wilcoxon_rank_sum(&[1.0], &[]).is_err());
        assert!(wilcoxon_rank_sum(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn logrank_matches_hand_computation() {
        let t1 = [3.1, 5.2, 7.9, 11.0, 13.5];
        let e1 = [true, true, false, true, true];
        let t2 = [1.0, 2.2, 2.9, 4.1, 6.3];
        let e2 = [true, true, true, false, true];
        let r = logrank_test(&t1, &e1, &t2, &e2).unwrap();
        assert_relative_eq!(r.statistic, 2.9483945662184583, max_relative = 1e-10);
        assert_relative_eq!(r.p, 0.08596291533034597, max_relative = 1e-9);
    }

    #[test]
    fn logrank_separates_disjoint_groups() {
        let t1: Vec<f64> = (0..15).map(|i| 10.0 + 0.5 * i as f64).collect();
        let t2: Vec<f64> = (0..15).map(|i| 1.0 + 0.3 * i as f64).collect();
        let e = vec![true; 15];
        let r = logrank_test(&t1, &e, &t2, &e).unwrap();
        assert!(r.p < 1e-3, "p = {}", r.p);
        assert_relative_eq!(r.p, 5.0750728580796215e-9, max_relative = 1e-9);
    }

    #[test]
    fn logrank_without_events_is_an_error() {
        assert!(logrank_test(&[1.0], &[false], &[2.0], &[false]).is_err());
    }

    #[test]
    fn stratification_splits_at_threshold() {
        let risks = [2.0, 1.8, 1.5, -0.5, -1.0, -2.0];
        let times = [1.0, 2.0, 3.0, 10.0, 11.0, 12.0];
        let events = [true; 6];
        let thr = median(&risks);
        let s = stratify_and_logrank(&risks, &times, &events, thr).unwrap();
        assert_eq!(s.high.times.len(), 3);
        assert_eq!(s.low.times.len(), 3);
        // high-risk group dies earlier: lower survival at the crossover
        assert!(s.high.eval(5.0) < s.low.eval(5.0));
        assert!(s.logrank.p < 0.05);
    }

    #[test]
    fn empty_stratum_is_an_error() {
        let risks = [1.0, 2.0, 3.0];
        let times = [1.0, 2.0, 3.0];
        let events = [true; 3];
        assert!(matches!(
            stratify_and_logrank(&risks, &times, &events, 10.0),
            Err(Error::EmptyStratum { which: "high-risk" })
        ));
        assert!(matches!(
            stratify_and_logrank(&risks, &times, &events, -10.0),
            Err(Error::EmptyStratum { which: "low-risk" })
        ));
    }

    #[test]
    fn median_of_odd_and_even_lengths() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
