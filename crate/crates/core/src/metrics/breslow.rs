use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Breslow estimate of the cumulative baseline hazard, a step function over
/// distinct event times. Zero before the first event time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineHazard {
    pub times: Vec<f64>,
    pub cumhaz: Vec<f64>,
}

impl BaselineHazard {
    pub fn eval(&self, t: f64) -> f64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => 0.0,
            i => self.cumhaz[i - 1],
        }
    }
}

/// A per-sample predicted survival function on a fixed grid, right-continuous.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl SurvivalCurve {
    pub fn eval(&self, t: f64) -> f64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => 1.0,
            i => self.values[i - 1],
        }
    }
}

/// Breslow cumulative baseline hazard from fitted risk scores.
///
/// Each event at time t adds 1 / sum_{k: t_k >= t} exp(score_k); tied events
/// each add their own term against the shared denominator. Requires at least
/// one event and finite scores small enough that the denominators stay
/// finite.
pub fn breslow_cumhaz(scores: &[f64], times: &[f64], is_event: &[bool]) -> Result<BaselineHazard> {
    if scores.len() != times.len() || times.len() != is_event.len() {
        return Err(Error::ShapeMismatch {
            op: "breslow_cumhaz",
            left: vec![scores.len(), times.len()],
            right: vec![is_event.len()],
        });
    }
    if let Some((i, s)) = scores.iter().enumerate().find(|(_, s)| !s.is_finite()) {
        return Err(Error::Domain {
            op: "breslow_cumhaz",
            detail: format!("risk score {s} at index {i} is not finite"),
        });
    }
    for (i, &t) in times.iter().enumerate() {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::UndefinedMetric {
                detail: format!("sample {i} has invalid time {t}"),
            });
        }
    }
    if !is_event.iter().any(|&e| e) {
        return Err(Error::UndefinedMetric {
            detail: "no events; baseline hazard is undefined".to_string(),
        });
    }

    // Sweep times descending, accumulating the exp-score denominator once.
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut denom = 0.0;
    let mut steps: Vec<(f64, f64)> = Vec::new(); // (time, increment), descending
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut d = 0usize;
        while i < order.len() && times[order[i]] == t {
            denom += scores[order[i]].exp();
            if is_event[order[i]] {
                d += 1;
            }
            i += 1;
        }
        if d > 0 {
            if !denom.is_finite() {
                return Err(Error::Domain {
                    op: "breslow_cumhaz",
                    detail: "risk score denominator overflowed".to_string(),
                });
            }
            steps.push((t, d as f64 / denom));
        }
    }
    steps.reverse();
    let mut hazard = BaselineHazard {
        times: Vec::with_capacity(steps.len()),
        cumhaz: Vec::with_capacity(steps.len()),
    };
    let mut acc = 0.0;
    for (t, inc) in steps {
        acc += inc;
        hazard.times.push(t);
        hazard.cumhaz.push(acc);
    }
    Ok(hazard)
}

/// Predicted survival S(t) = exp(-H0(t) * exp(score)) on the given grid
/// (sorted and deduplicated internally).
pub fn predict_survival(score: f64, baseline: &BaselineHazard, grid: &[f64]) -> SurvivalCurve {
    let mut ts = grid.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let e = score.exp();
    let values = ts.iter().map(|&t| (-baseline.eval(t) * e).exp()).collect();
    SurvivalCurve { times: ts, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_scores_reduce_to_nelson_aalen() {
        let hz = breslow_cumhaz(&[0.0; 3], &[1.0, 2.0, 3.0], &[true; 3]).unwrap();
        assert_relative_eq!(hz.cumhaz[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(hz.cumhaz[1], 1.0 / 3.0 + 1.0 / 2.0, epsilon = 1e-12);
        assert_relative_eq!(hz.cumhaz[2], 1.0 / 3.0 + 1.0 / 2.0 + 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hand_computed_with_scores_and_censoring() {
        let scores = [0.5, -0.5, 1.0];
        let times = [1.0, 2.0, 3.0];
        let events = [true, false, true];
        let hz = breslow_cumhaz(&scores, &times, &events).unwrap();
        let d1 = 0.5f64.exp() + (-0.5f64).exp() + 1.0f64.exp();
        let d3 = 1.0f64.exp();
        assert_eq!(hz.times, vec![1.0, 3.0]);
        assert_relative_eq!(hz.cumhaz[0], 1.0 / d1, epsilon = 1e-12);
        assert_relative_eq!(hz.cumhaz[1], 1.0 / d1 + 1.0 / d3, epsilon = 1e-12);
    }

    #[test]
    fn tied_events_share_the_denominator() {
        let scores = [0.2, 0.8, -0.1];
        let times = [1.0, 1.0, 2.0];
        let events = [true, true, false];
        let hz = breslow_cumhaz(&scores, &times, &events).unwrap();
        let d: f64 = scores.iter().map(|s| s.exp()).sum();
        assert_eq!(hz.times, vec![1.0]);
        assert_relative_eq!(hz.cumhaz[0], 2.0 / d, epsilon = 1e-12);
    }

    #[test]
    fn eval_is_zero_before_first_event_and_monotone() {
        let hz = breslow_cumhaz(&[0.0; 4], &[2.0, 4.0, 6.0, 8.0], &[true; 4]).unwrap();
        assert_eq!(hz.eval(1.0), 0.0);
        let mut prev = 0.0;
        for t in [2.0, 3.0, 4.0, 7.0, 100.0] {
            let h = hz.eval(t);
            assert!(h >= prev);
            prev = h;
        }
    }

    #[test]
    fn predicted_curves_are_valid_survival_functions() {
        let hz = breslow_cumhaz(&[0.3, -0.3, 0.0], &[1.0, 2.0, 3.0], &[true; 3]).unwrap();
        let grid = [0.0, 1.0, 2.0, 3.0, 4.0];
        for score in [-2.0, 0.0, 2.0] {
            let s = predict_survival(score, &hz, &grid);
            let mut prev = 1.0;
            for &v in &s.values {
                assert!((0.0..=1.0).contains(&v));
                assert!(v <= prev + 1e-15);
                prev = v;
            }
            assert_eq!(s.eval(-0.5), 1.0);
        }
        // higher risk, lower survival everywhere past the first event
        let lo = predict_survival(-1.0, &hz, &grid);
        let hi = predict_survival(1.0, &hz, &grid);
        for (a, b) in lo.values.iter().zip(&hi.values).skip(2) {
            assert!(b < a);
        }
    }

    #[test]
    fn grid_is_sorted_and_deduplicated() {
        let hz = breslow_cumhaz(&[0.0], &[1.0], &[true]).unwrap();
        let s = predict_survival(0.0, &hz, &[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(s.times, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn error_cases() {
        assert!(breslow_cumhaz(&[0.0], &[1.0], &[false]).is_err());
        assert!(breslow_cumhaz(&[f64::NAN], &[1.0], &[true]).is_err());
        assert!(breslow_cumhaz(&[800.0, 0.0], &[1.0, 2.0], &[true, true]).is_err());
        assert!(breslow_cumhaz(&[0.0], &[0.0], &[true]).is_err());
    }
}
