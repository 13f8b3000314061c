//! Cox partial likelihood and student/teacher consistency losses.
//!
//! The supervised term is the negative log partial likelihood with Breslow's
//! convention for tied event times: the risk set at an event time contains
//! every labeled sample (event or censored) whose time is greater or equal,
//! including samples tied with the event. The consistency term is the mean
//! squared difference between student and teacher scores over the unlabeled
//! plus censored pool; the teacher side enters as a constant, which is the
//! stop-gradient.

use rand::seq::index::sample;
use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Risk sets for a fixed labeled cohort, in event-time order.
///
/// `events[i]` is the index (into the labeled arrays) of the i-th event when
/// events are sorted by time ascending; `at_risk[i]` lists every labeled
/// index still at risk at that time, always including `events[i]` itself.
#[derive(Debug, Clone)]
pub struct RiskSetIndex {
    pub events: Vec<usize>,
    pub at_risk: Vec<Vec<usize>>,
    pub n_labeled: usize,
}

impl RiskSetIndex {
    pub fn n_events(&self) -> usize {
        self.events.len()
    }
}

/// Build risk sets from labeled survival data.
///
/// `times[j]` must be positive and finite; `is_event[j]` marks observed
/// events (false = right-censored). At least one event is required, otherwise
/// the partial likelihood is undefined.
pub fn build_risk_sets(times: &[f64], is_event: &[bool]) -> Result<RiskSetIndex> {
    if times.len() != is_event.len() {
        return Err(Error::ShapeMismatch {
            op: "build_risk_sets",
            left: vec![times.len()],
            right: vec![is_event.len()],
        });
    }
    for (j, &t) in times.iter().enumerate() {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::InvalidRiskSet {
                detail: format!("labeled sample {j} has invalid time {t}"),
            });
        }
    }
    let mut event_idx: Vec<usize> = (0..times.len()).filter(|&j| is_event[j]).collect();
    if event_idx.is_empty() {
        return Err(Error::InvalidRiskSet {
            detail: "no event samples; the partial likelihood is undefined".to_string(),
        });
    }
    event_idx.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));

    // Sweep from the latest event down, growing the at-risk prefix once.
    let mut by_time_desc: Vec<usize> = (0..times.len()).collect();
    by_time_desc.sort_by(|&a, &b| times[b].total_cmp(&times[a]).then(a.cmp(&b)));
    let mut at_risk_rev: Vec<Vec<usize>> = Vec::with_capacity(event_idx.len());
    let mut prefix: Vec<usize> = Vec::new();
    let mut cursor = 0;
    for &e in event_idx.iter().rev() {
        let t = times[e];
        while cursor < by_time_desc.len() && times[by_time_desc[cursor]] >= t {
            prefix.push(by_time_desc[cursor]);
            cursor += 1;
        }
        at_risk_rev.push(prefix.clone());
    }
    at_risk_rev.reverse();

    let index = RiskSetIndex {
        events: event_idx,
        at_risk: at_risk_rev,
        n_labeled: times.len(),
    };
    debug_assert!(index
        .events
        .iter()
        .zip(&index.at_risk)
        .all(|(e, r)| r.contains(e)));
    Ok(index)
}

/// Negative Cox log partial likelihood, averaged over events.
///
/// `scores` holds one model output per labeled sample (shape [n] or [n, 1]),
/// aligned with the arrays `risk_sets` was built from. Log-sum-exp terms are
/// computed against the subset maximum, so large scores stay finite.
pub fn supervised_loss(scores: &Tensor, risk_sets: &RiskSetIndex) -> Result<Tensor> {
    if scores.numel() != risk_sets.n_labeled {
        return Err(Error::ShapeMismatch {
            op: "supervised_loss",
            left: scores.shape().to_vec(),
            right: vec![risk_sets.n_labeled],
        });
    }
    let mut acc: Option<Tensor> = None;
    for at_risk in &risk_sets.at_risk {
        let lse = scores.log_sum_exp(at_risk)?;
        acc = Some(match acc {
            None => lse,
            Some(a) => a.add(&lse)?,
        });
    }
    let lse_sum = acc.expect("risk set index has at least one event");
    let event_sum = scores.gather(&risk_sets.events).sum();
    Ok(lse_sum
        .sub(&event_sum)?
        .scale(1.0 / risk_sets.n_events() as f64))
}

/// Mean squared student/teacher disagreement over the consistency pool.
///
/// Teacher scores are plain values: no gradient flows into the teacher. An
/// empty pool yields exact zero (with a warning), so configurations without
/// unlabeled data degrade gracefully.
pub fn consistency_loss(student_scores: &Tensor, teacher_scores: &[f64]) -> Result<Tensor> {
    if student_scores.numel() != teacher_scores.len() {
        return Err(Error::ShapeMismatch {
            op: "consistency_loss",
            left: student_scores.shape().to_vec(),
            right: vec![teacher_scores.len()],
        });
    }
    if teacher_scores.is_empty() {
        log::warn!("consistency loss over an empty pool; returning 0");
        return Ok(Tensor::scalar(0.0));
    }
    let teacher = Tensor::from_vec(student_scores.shape().to_vec(), teacher_scores.to_vec());
    let d = student_scores.sub(&teacher)?;
    d.mul(&d)?.mean()
}

/// Combined objective: supervised + weight * consistency.
pub fn total_loss(supervised: &Tensor, consistency: &Tensor, weight: f64) -> Result<Tensor> {
    if weight < 0.0 || !weight.is_finite() {
        return Err(Error::config(format!(
            "consistency weight {weight} must be finite and non-negative"
        )));
    }
    supervised.add(&consistency.scale(weight))
}

/// Minibatch sizes; `events_per_batch = 0` means full batch (no subsampling).
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinibatchConfig {
    pub events_per_batch: usize,
    pub controls_per_event: usize,
    pub consistency_size: usize,
}

impl MinibatchConfig {
    pub fn full_batch() -> MinibatchConfig {
        MinibatchConfig {
            events_per_batch: 0,
            controls_per_event: 0,
            consistency_size: 0,
        }
    }

    pub fn is_full_batch(&self) -> bool {
        self.events_per_batch == 0
    }
}

/// One sampled step: event anchors with per-anchor risk-set controls, plus a
/// consistency batch drawn from the unlabeled + censored pool.
#[derive(Debug, Clone)]
pub struct Minibatch {
    /// Subsampled risk structure over the labeled arrays.
    pub risk_sets: RiskSetIndex,
    /// Indices into the consistency pool.
    pub consistency: Vec<usize>,
}

/// Draw a minibatch. Anchors are sampled events; each anchor's control set is
/// a subset of its full risk set and always contains the anchor itself, so
/// every log-sum-exp term stays well defined.
pub fn sample_minibatch<R: Rng>(
    full: &RiskSetIndex,
    pool_size: usize,
    cfg: &MinibatchConfig,
    rng: &mut R,
) -> Minibatch {
    let n_anchors = cfg.events_per_batch.min(full.n_events()).max(1);
    let anchor_pos: Vec<usize> = if n_anchors == full.n_events() {
        (0..full.n_events()).collect()
    } else {
        let mut picked = sample(rng, full.n_events(), n_anchors).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut events = Vec::with_capacity(anchor_pos.len());
    let mut at_risk = Vec::with_capacity(anchor_pos.len());
    for p in anchor_pos {
        let anchor = full.events[p];
        let others: Vec<usize> = full.at_risk[p]
            .iter()
            .copied()
            .filter(|&j| j != anchor)
            .collect();
        let n_controls = cfg.controls_per_event.min(others.len());
        let mut subset: Vec<usize> = if n_controls == others.len() {
            others
        } else {
            sample(rng, others.len(), n_controls)
                .into_iter()
                .map(|i| others[i])
                .collect()
        };
        subset.push(anchor);
        events.push(anchor);
        at_risk.push(subset);
    }

    let n_cons = cfg.consistency_size.min(pool_size);
    let consistency = if n_cons == pool_size {
        (0..pool_size).collect()
    } else {
        let mut picked = sample(rng, pool_size, n_cons).into_vec();
        picked.sort_unstable();
        picked
    };

    Minibatch {
        risk_sets: RiskSetIndex {
            events,
            at_risk,
            n_labeled: full.n_labeled,
        },
        consistency,
    }
}
