use crate::error::{Error, Result};
use crate::metrics::breslow::SurvivalCurve;
use crate::metrics::km::{reverse_km, KmCurve};

/// Expected Brier score at time `t` with inverse-probability-of-censoring
/// weights (Graf's estimator).
///
/// Samples with an event at or before `t` contribute their squared predicted
/// survival, weighted by 1/G(t_i-); samples still under observation past `t`
/// contribute the squared shortfall from 1, weighted by 1/G(t); samples
/// censored at or before `t` contribute nothing. A zero weight attached to a
/// non-empty contribution is an error.
pub fn brier_score(
    t: f64,
    curves: &[SurvivalCurve],
    times: &[f64],
    is_event: &[bool],
    censor_km: &KmCurve,
) -> Result<f64> {
    if curves.len() != times.len() || times.len() != is_event.len() {
        return Err(Error::ShapeMismatch {
            op: "brier_score",
            left: vec![curves.len(), times.len()],
            right: vec![is_event.len()],
        });
    }
    if times.is_empty() {
        return Err(Error::UndefinedMetric {
            detail: "brier score over an empty test set".to_string(),
        });
    }
    let mut acc = 0.0;
    for i in 0..times.len() {
        let s = curves[i].eval(t);
        if times[i] <= t && is_event[i] {
            let g = censor_km.eval_left(times[i]);
            if g <= 0.0 {
                return Err(Error::ZeroWeight { time: times[i] });
            }
            acc += s * s / g;
        } else if times[i] > t {
            let g = censor_km.eval(t);
            if g <= 0.0 {
                return Err(Error::ZeroWeight { time: t });
            }
            acc += (1.0 - s) * (1.0 - s) / g;
        }
    }
    Ok(acc / times.len() as f64)
}

/// Integrated Brier score and the evaluation horizon it used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbsResult {
    pub value: f64,
    pub horizon: f64,
}

/// Integrate the Brier score by the trapezoid rule over
/// {0} + {distinct test times <= T} + {T}, divided by T.
///
/// The horizon is T = min(t_max, max test time), where t_max is the largest
/// training event time whose training risk set still holds at least
/// `min_risk_set` samples (20 in the standard protocol). When no training
/// event satisfies that, the threshold falls back to max(2, n_events / 5)
/// with a loud warning, since tail estimates below the requested support are
/// unstable.
pub fn integrated_brier_score(
    curves: &[SurvivalCurve],
    test_times: &[f64],
    test_events: &[bool],
    train_times: &[f64],
    train_events: &[bool],
    min_risk_set: usize,
) -> Result<IbsResult> {
    let t_max = train_horizon(train_times, train_events, min_risk_set)?;
    let t_test_max = test_times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !t_test_max.is_finite() {
        return Err(Error::UndefinedMetric {
            detail: "empty test set".to_string(),
        });
    }
    let horizon = t_max.min(t_test_max);
    if horizon <= 0.0 {
        return Err(Error::UndefinedMetric {
            detail: format!("non-positive integration horizon {horizon}"),
        });
    }

    let mut grid = vec![0.0];
    let mut obs: Vec<f64> = test_times
        .iter()
        .copied()
        .filter(|&t| t <= horizon)
        .collect();
    obs.push(horizon);
    obs.sort_by(f64::total_cmp);
    obs.dedup();
    grid.extend(obs);

    let censor_km = reverse_km(test_times, test_events)?;
    let scores: Vec<f64> = grid
        .iter()
        .map(|&t| brier_score(t, curves, test_times, test_events, &censor_km))
        .collect::<Result<_>>()?;

    let mut integral = 0.0;
    for w in grid.windows(2).zip(scores.windows(2)) {
        let (ts, bs) = w;
        integral += (ts[1] - ts[0]) * (bs[1] + bs[0]) / 2.0;
    }
    Ok(IbsResult {
        value: integral / horizon,
        horizon,
    })
}

/// Largest training event time whose risk set keeps `min_risk_set` samples.
fn train_horizon(train_times: &[f64], train_events: &[bool], min_risk_set: usize) -> Result<f64> {
    if train_times.len() != train_events.len() {
        return Err(Error::ShapeMismatch {
            op: "integrated_brier_score",
            left: vec![train_times.len()],
            right: vec![train_events.len()],
        });
    }
    let n_events = train_events.iter().filter(|&&e| e).count();
    if n_events == 0 {
        return Err(Error::UndefinedMetric {
            detail: "no training events; integration horizon is undefined".to_string(),
        });
    }
    let risk_count = |t: f64| -> usize { train_times.iter().filter(|&&x| x >= t).count() };
    let qualifying = |threshold: usize| -> Option<f64> {
        train_times
            .iter()
            .zip(train_events)
            .filter(|&(&t, &e)| e && risk_count(t) >= threshold)
            .map(|(&t, _)| t)
            .fold(None, |acc: Option<f64>, t| {
                Some(acc.map_or(t, |a| a.max(t)))
            })
    };
    if let Some(t) = qualifying(min_risk_set) {
        return Ok(t);
    }
    let fallback = (n_events / 5).max(2);
    log::warn!(
        "no training event time keeps {min_risk_set} samples at risk; \
         falling back to a risk-set threshold of {fallback}. Tail estimates \
         past this support are unstable."
    );
    qualifying(fallback).ok_or_else(|| Error::UndefinedMetric {
        detail: format!("no training event time keeps even {fallback} samples at risk"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn step_curve(drop_at: f64, horizon: f64) -> SurvivalCurve {
        SurvivalCurve {
            times: vec![drop_at, horizon.max(drop_at)],
            values: vec![0.0, 0.0],
        }
    }

    fn constant_curve(v: f64) -> SurvivalCurve {
        SurvivalCurve {
            times: vec![0.0],
            values: vec![v],
        }
    }

    #[test]
    fn perfect_predictor_scores_zero() {
        let times = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let events = vec![true; 5];
        let curves: Vec<SurvivalCurve> = times.iter().map(|&t| step_curve(t, 5.0)).collect();
        let r = integrated_brier_score(&curves, &times, &events, &times, &events, 2).unwrap();
        assert_relative_eq!(r.value, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn coin_flip_predictor_scores_quarter() {
        let times: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let events = vec![true; 10];
        let curves: Vec<SurvivalCurve> = times.iter().map(|_| constant_curve(0.5)).collect();
        let r = integrated_brier_score(&curves, &times, &events, &times, &events, 2).unwrap();
        assert_relative_eq!(r.value, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn hand_computed_weights_under_censoring() {
        let times = vec![2.0, 4.0, 6.0];
        let events = vec![true, false, true];
        let g = reverse_km(&times, &events).unwrap();
        let curves: Vec<SurvivalCurve> = (0..3).map(|_| constant_curve(0.6)).collect();
        // BS(5): event at 2 weighted 1/G(2-) = 1, censored at 4 drops out,
        // survivor at 6 weighted 1/G(5) = 2
        let bs = brier_score(5.0, &curves, &times, &events, &g).unwrap();
        assert_relative_eq!(bs, (0.36 + 2.0 * 0.16) / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn horizon_respects_risk_set_support() {
        // train risk set falls below 3 after t = 8: qualifying times with
        // threshold 3 are events at t <= 8
        let train_times = vec![2.0, 4.0, 6.0, 8.0, 10.0];
        let train_events = vec![true; 5];
        let t = train_horizon(&train_times, &train_events, 3).unwrap();
        assert_eq!(t, 6.0);
        // and the full-rule horizon caps the integration
        let test_times = vec![1.0, 5.0, 9.0];
        let test_events = vec![true, true, true];
        let curves: Vec<SurvivalCurve> = test_times.iter().map(|_| constant_curve(0.5)).collect();
        let r = integrated_brier_score(
            &curves,
            &test_times,
            &test_events,
            &train_times,
            &train_events,
            3,
        )
        .unwrap();
        assert_eq!(r.horizon, 6.0);
    }

    #[test]
    fn fallback_threshold_kicks_in() {
        // only 2 samples, so no event keeps 20 at risk; fallback max(2, 0) = 2
        let train_times = vec![1.0, 2.0];
        let train_events = vec![true, true];
        let t = train_horizon(&train_times, &train_events, 20).unwrap();
        assert_eq!(t, 1.0);
    }

    #[test]
    fn zero_weight_is_detected() {
        let times = vec![1.0, 2.0];
        let events = vec![true, true];
        let curves = vec![constant_curve(0.5), constant_curve(0.5)];
        // artificial censoring curve that is zero everywhere
        let g = KmCurve {
            times: vec![0.5],
            survival: vec![0.0],
            at_risk: vec![2],
            events: vec![2],
        };
        assert!(matches!(
            brier_score(1.5, &curves, &times, &events, &g),
            Err(Error::ZeroWeight { .. })
        ));
    }

    #[test]
    fn error_cases() {
        let c = vec![constant_curve(0.5)];
        let g = reverse_km(&[1.0], &[true]).unwrap();
        assert!(brier_score(1.0, &c, &[1.0, 2.0], &[true, true], &g).is_err());
        assert!(brier_score(1.0, &[], &[], &[], &g).is_err());
        assert!(integrated_brier_score(&c, &[1.0], &[true], &[1.0], &[false], 2).is_err());
    }
}
