use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A Kaplan-Meier product-limit curve.
///
/// One row per distinct observed time (whether or not a terminal event
/// happened there), with the at-risk count and terminal-event count at that
/// time. `survival` is right-continuous: `survival[i]` applies on
/// `[times[i], times[i+1])`, and the curve is 1 before the first time.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KmCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl KmCurve {
    /// S(t), right-continuous.
    pub fn eval(&self, t: f64) -> f64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => 1.0,
            i => self.survival[i - 1],
        }
    }

    /// S(t-), the left limit at t.
    pub fn eval_left(&self, t: f64) -> f64 {
        match self.times.partition_point(|&x| x < t) {
            0 => 1.0,
            i => self.survival[i - 1],
        }
    }
}

/// Kaplan-Meier estimate over observed times. `terminal[i]` marks the
/// observations treated as terminal events; the rest are censored at their
/// time. Times must be positive and finite.
pub fn km_estimate(times: &[f64], terminal: &[bool]) -> Result<KmCurve> {
    if times.len() != terminal.len() {
        return Err(Error::ShapeMismatch {
            op: "km_estimate",
            left: vec![times.len()],
            right: vec![terminal.len()],
        });
    }
    for (i, &t) in times.iter().enumerate() {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::UndefinedMetric {
                detail: format!("sample {i} has invalid time {t}"),
            });
        }
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut curve = KmCurve {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
    };
    let mut s = 1.0;
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut d = 0;
        let mut j = i;
        while j < order.len() && times[order[j]] == t {
            if terminal[order[j]] {
                d += 1;
            }
            j += 1;
        }
        let n = order.len() - i;
        if d > 0 {
            s *= 1.0 - d as f64 / n as f64;
        }
        curve.times.push(t);
        curve.survival.push(s);
        curve.at_risk.push(n);
        curve.events.push(d);
        i = j;
    }
    Ok(curve)
}

/// Censoring-distribution estimate: Kaplan-Meier with the roles of event and
/// censoring swapped. Used for inverse-probability-of-censoring weights.
pub fn reverse_km(times: &[f64], is_event: &[bool]) -> Result<KmCurve> {
    let flipped: Vec<bool> = is_event.iter().map(|e| !e).collect();
    km_estimate(times, &flipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn all_events_steps_down_by_counts() {
        let km = km_estimate(&[5.0, 8.0, 12.0], &[true; 3]).unwrap();
        assert_eq!(km.times, vec![5.0, 8.0, 12.0]);
        assert_relative_eq!(km.survival[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(km.survival[1], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(km.survival[2], 0.0, epsilon = 1e-12);
        assert_eq!(km.at_risk, vec![3, 2, 1]);
    }

    #[test]
    fn censoring_reduces_risk_set_without_a_step() {
        let km = km_estimate(&[5.0, 8.0, 12.0], &[true, false, true]).unwrap();
        assert_relative_eq!(km.eval(5.0), 2.0 / 3.0, epsilon = 1e-12);
        // no drop at the censoring time
        assert_relative_eq!(km.eval(8.0), 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(km.eval(11.9), 2.0 / 3.0, epsilon = 1e-12);
        // last at-risk count is 1, so the final factor is 0
        assert_relative_eq!(km.eval(12.0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn tied_events_share_one_step() {
        let km = km_estimate(&[2.0, 2.0, 4.0], &[true, true, true]).unwrap();
        assert_eq!(km.times, vec![2.0, 4.0]);
        assert_relative_eq!(km.survival[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(km.events, vec![2, 1]);
    }

    #[test]
    fn eval_is_right_continuous_with_left_limits() {
        let km = km_estimate(&[2.0, 4.0], &[true, true]).unwrap();
        assert_eq!(km.eval(1.9), 1.0);
        assert_relative_eq!(km.eval(2.0), 0.5, epsilon = 1e-12);
        assert_eq!(km.eval_left(2.0), 1.0);
        assert_relative_eq!(km.eval_left(4.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(km.eval_left(2.5), 0.5, epsilon = 1e-12);
        assert_eq!(km.eval(0.5), 1.0);
    }

    #[test]
    fn survival_is_monotone_nonincreasing_and_bounded() {
        let times = vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let events = vec![true, false, true, true, false, true, true, false];
        let km = km_estimate(&times, &events).unwrap();
        let mut prev = 1.0;
        for &s in &km.survival {
            assert!((0.0..=1.0).contains(&s));
            assert!(s <= prev + 1e-15);
            prev = s;
        }
    }

    #[test]
    fn reverse_km_swaps_roles() {
        let times = vec![5.0, 8.0, 12.0];
        let events = vec![true, false, true];
        let g = reverse_km(&times, &events).unwrap();
        // only the censoring at 8 is terminal: G drops to 1/2 there
        assert_eq!(g.eval(5.0), 1.0);
        assert_relative_eq!(g.eval(8.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(g.eval(12.0), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn invalid_times_rejected() {
        assert!(km_estimate(&[0.0], &[true]).is_err());
        assert!(km_estimate(&[-1.0], &[true]).is_err());
        assert!(km_estimate(&[f64::INFINITY], &[true]).is_err());
        assert!(km_estimate(&[1.0], &[true, false]).is_err());
    }

    #[test]
    fn empty_input_gives_unit_curve() {
        let km = km_estimate(&[], &[]).unwrap();
        assert!(km.times.is_empty());
        assert_eq!(km.eval(10.0), 1.0);
    }
}
