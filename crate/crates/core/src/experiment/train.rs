//! The student/teacher training loop.
//!
//! Each epoch: perturb the labeled batch (input noise + dropout), compute
//! the partial-likelihood loss, optionally add the weighted consistency
//! penalty between independently perturbed student and teacher passes over
//! the unlabeled + censored pool, step the student with Adam, then move the
//! teacher by an exponential moving average. With `consistency_weight = 0`
//! the teacher, its RNG stream and the pool pass are skipped entirely, so
//! the run is bit-identical to a plain supervised fit.

use serde::{Deserialize, Serialize};

use crate::autodiff::{zero_grads, Optimizer, Tape, Tensor};
use crate::data::{SampleStatus, SurvivalDataset};
use crate::error::{Error, Result};
use crate::loss::{
    build_risk_sets, consistency_loss, sample_minibatch, supervised_loss, total_loss,
    MinibatchConfig,
};
use crate::metrics::concordance_index;
use crate::model::{init_mlp, Mlp, MlpSpec, Model, StudentTeacherPair};
use crate::seeds::{self, Stream};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Standard deviation of the Gaussian input perturbation.
    pub noise_sigma: f64,
    pub dropout: f64,
    /// Weight on the consistency term; 0 disables the teacher entirely.
    pub consistency_weight: f64,
    pub ema_alpha: f64,
    pub hidden: Vec<usize>,
    /// Stop after this many epochs without a validation improvement;
    /// 0 disables early stopping.
    pub patience: usize,
    pub minibatch: MinibatchConfig,
    pub seed: u64,
    /// Evaluate with the student instead of the teacher.
    pub eval_student: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 200,
            lr: 1e-3,
            noise_sigma: 0.1,
            dropout: 0.2,
            consistency_weight: 1.0,
            ema_alpha: 0.99,
            hidden: vec![64, 32],
            patience: 20,
            minibatch: MinibatchConfig::full_batch(),
            seed: 0,
            eval_student: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!("lr {} must be positive", self.lr)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config(format!(
                "noise_sigma {} must be non-negative",
                self.noise_sigma
            )));
        }
        if !(self.consistency_weight.is_finite() && self.consistency_weight >= 0.0) {
            return Err(Error::config(format!(
                "consistency_weight {} must be non-negative",
                self.consistency_weight
            )));
        }
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return Err(Error::config(format!(
                "ema_alpha {} outside [0, 1]",
                self.ema_alpha
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub supervised: f64,
    pub consistency: f64,
    pub val_c_index: Option<f64>,
}

#[derive(Debug)]
pub struct TrainedModel {
    pub pair: StudentTeacherPair<Mlp>,
    pub config: TrainConfig,
    pub trace: Vec<EpochStats>,
    /// Epoch whose parameters the model carries (best validation epoch, or
    /// the last epoch when there is no validation set).
    pub best_epoch: usize,
    pub best_val_c: Option<f64>,
}

impl TrainedModel {
    /// The network used for prediction: the teacher, unless the run was
    /// purely supervised (no teacher was trained) or the config opted into
    /// student evaluation.
    pub fn eval_model(&self) -> &Mlp {
        if self.config.eval_student || self.config.consistency_weight == 0.0 {
            &self.pair.student
        } else {
            &self.pair.teacher
        }
    }
}

fn feature_rows(ds: &SurvivalDataset, idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| ds.features.row(i).to_vec()).collect()
}

/// Risk scores for the given rows under deterministic evaluation.
pub fn predict_risks(model: &Mlp, ds: &SurvivalDataset, idx: &[usize]) -> Result<Vec<f64>> {
    if idx.is_empty() {
        return Ok(Vec::new());
    }
    let x = Tensor::from_rows(&feature_rows(ds, idx));
    Ok(model.forward(&x, None)?.value_vec())
}

/// Student and teacher parameter values, one `Vec<f64>` per tensor.
type PairSnapshot = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn snapshot(pair: &StudentTeacherPair<Mlp>) -> PairSnapshot {
    let grab = |m: &Mlp| m.params().iter().map(|p| p.value_vec()).collect();
    (grab(&pair.student), grab(&pair.teacher))
}

fn restore(pair: &StudentTeacherPair<Mlp>, saved: &PairSnapshot) {
    for (p, vals) in pair.student.params().iter().zip(&saved.0) {
        p.set_values(vals);
    }
    for (p, vals) in pair.teacher.params().iter().zip(&saved.1) {
        p.set_values(vals);
    }
}

/// Train on `train_idx` (labeled and unlabeled mixed), early-stopping on the
/// validation concordance when `val_idx` is non-empty.
pub fn train_cox_mt(
    ds: &SurvivalDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let labeled: Vec<usize> = train_idx
        .iter()
        .copied()
        .filter(|&i| ds.statuses[i] != SampleStatus::Unlabeled)
        .collect();
    if labeled.is_empty() {
        return Err(Error::dataset("no labeled samples in the training set"));
    }
    // consistency pool: unlabeled plus censored training samples
    let pool: Vec<usize> = train_idx
        .iter()
        .copied()
        .filter(|&i| ds.statuses[i] != SampleStatus::Event)
        .collect();
    let (times, events) = ds.labels_for(&labeled)?;
    let full_risk = build_risk_sets(&times, &events)?;
    let labeled_rows = feature_rows(ds, &labeled);
    let pool_rows = feature_rows(ds, &pool);
    let x_labeled = Tensor::from_rows(&labeled_rows);

    let (val_labels, x_val) = if val_idx.is_empty() {
        (None, None)
    } else {
        (
            Some(ds.labels_for(val_idx)?),
            Some(Tensor::from_rows(&feature_rows(ds, val_idx))),
        )
    };

    let semi = cfg.consistency_weight > 0.0;
    let mut init_rng = seeds::rng(cfg.seed, Stream::ModelInit);
    let spec = MlpSpec::new(ds.dim(), cfg.hidden.clone(), cfg.dropout)?;
    let mut pair = StudentTeacherPair::new(init_mlp(&spec, &mut init_rng)?);
    let mut student_rng = seeds::rng(cfg.seed, Stream::StudentDraws);
    let mut teacher_rng = seeds::rng(cfg.seed, Stream::TeacherDraws);
    let mut batch_rng = seeds::rng(cfg.seed, Stream::Minibatch);
    let mut optimizer = Optimizer::adam(cfg.lr);

    let mut trace: Vec<EpochStats> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, PairSnapshot)> = None;

    for epoch in 0..cfg.epochs {
        let mb = (!cfg.minibatch.is_full_batch())
            .then(|| sample_minibatch(&full_risk, pool.len(), &cfg.minibatch, &mut batch_rng));
        let risk_sets = mb.as_ref().map_or(&full_risk, |m| &m.risk_sets);
        let pool_positions: Vec<usize> = match &mb {
            Some(m) => m.consistency.clone(),
            None => (0..pool.len()).collect(),
        };

        let (loss_val, ls_val, lu_val);
        {
            let tape = Tape::new();
            for p in pair.student.params() {
                tape.watch(p);
            }
            let noisy = x_labeled.add_noise(cfg.noise_sigma, &mut student_rng)?;
            let scores = pair.student.forward(&noisy, Some(&mut student_rng))?;
            let ls = supervised_loss(&scores, risk_sets)?;
            let loss = if semi && !pool_positions.is_empty() {
                let rows: Vec<Vec<f64>> = pool_positions
                    .iter()
                    .map(|&p| pool_rows[p].clone())
                    .collect();
                // separate tensors per branch so the untracked teacher pass
                // never touches a tape-bound input
                let x_s = Tensor::from_rows(&rows);
                let x_t = Tensor::from_rows(&rows);
                let noisy_s = x_s.add_noise(cfg.noise_sigma, &mut student_rng)?;
                let student_scores = pair.student.forward(&noisy_s, Some(&mut student_rng))?;
                let noisy_t = x_t.add_noise(cfg.noise_sigma, &mut teacher_rng)?;
                let teacher_scores = pair.teacher.forward(&noisy_t, Some(&mut teacher_rng))?;
                let lu = consistency_loss(&student_scores, &teacher_scores.value_vec())?;
                lu_val = lu.item();
                total_loss(&ls, &lu, cfg.consistency_weight)?
            } else {
                lu_val = 0.0;
                ls.clone()
            };
            ls_val = ls.item();
            loss_val = loss.item();
            if !loss_val.is_finite() {
                return Err(Error::Diverged {
                    step: epoch,
                    what: "loss",
                });
            }
            tape.backward(&loss)?;
            let params = pair.student.params();
            optimizer.step(&params)?;
            zero_grads(params);
        }
        if semi {
            pair.ema_update(cfg.ema_alpha)?;
        }

        let val_c = match (&x_val, &val_labels) {
            (Some(xv), Some((vt, ve))) => {
                let model = if cfg.eval_student || !semi {
                    &pair.student
                } else {
                    &pair.teacher
                };
                let risks = model.forward(xv, None)?.value_vec();
                match concordance_index(&risks, vt, ve) {
                    Ok(c) => Some(c),
                    Err(Error::UndefinedMetric { detail }) => {
                        log::warn!("epoch {epoch}: validation c-index undefined: {detail}");
                        None
                    }
                    Err(e) => return Err(e),
                }
            }
            _ => None,
        };

        trace.push(EpochStats {
            epoch,
            loss: loss_val,
            supervised: ls_val,
            consistency: lu_val,
            val_c_index: val_c,
        });

        if let Some(c) = val_c {
            let improved = best.as_ref().is_none_or(|(bc, _, _)| c > *bc);
            if improved {
                best = Some((c, epoch, snapshot(&pair)));
            } else if cfg.patience > 0 {
                let best_epoch = best.as_ref().map(|(_, e, _)| *e).unwrap_or(0);
                if epoch - best_epoch >= cfg.patience {
                    break;
                }
            }
        }
    }

    let (best_epoch, best_val_c) = match &best {
        Some((c, e, saved)) => {
            restore(&pair, saved);
            (*e, Some(*c))
        }
        None => (trace.len().saturating_sub(1), None),
    };
    Ok(TrainedModel {
        pair,
        config: cfg.clone(),
        trace,
        best_epoch,
        best_val_c,
    })
}

/// Plain supervised fit: the same loop with the consistency machinery off.
pub fn train_supervised_baseline(
    ds: &SurvivalDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let cfg = TrainConfig {
        consistency_weight: 0.0,
        ..cfg.clone()
    };
    train_cox_mt(ds, train_idx, val_idx, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 25,
            lr: 5e-3,
            hidden: vec![8],
            patience: 0,
            seed: 17,
            ..TrainConfig::default()
        }
    }

    fn cohort() -> SurvivalDataset {
        generate_synthetic(&SynthConfig {
            n_samples: 80,
            dim: 6,
            censor_fraction: 0.3,
            unlabeled_fraction: 0.25,
            seed: 19,
            ..SynthConfig::default()
        })
        .unwrap()
        .0
    }

    #[test]
    fn loss_decreases_and_trace_is_complete() {
        let ds = cohort();
        let all: Vec<usize> = (0..ds.n()).collect();
        let out = train_cox_mt(&ds, &all, &[], &quick_cfg()).unwrap();
        assert_eq!(out.trace.len(), 25);
        let first = out.trace.first().unwrap();
        let last = out.trace.last().unwrap();
        assert!(
            last.loss < first.loss,
            "loss went {} -> {}",
            first.loss,
            last.loss
        );
        assert!(out.trace.iter().all(|e| e.loss.is_finite()));
        assert!(out.trace.iter().any(|e| e.consistency > 0.0));
        assert_eq!(out.best_epoch, 24);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let ds = cohort();
        let all: Vec<usize> = (0..ds.n()).collect();
        let a = train_cox_mt(&ds, &all, &[], &quick_cfg()).unwrap();
        let b = train_cox_mt(&ds, &all, &[], &quick_cfg()).unwrap();
        for (pa, pb) in a.pair.student.params().iter().zip(b.pair.student.params()) {
            assert_eq!(pa.value_vec(), pb.value_vec());
        }
        let c = train_cox_mt(
            &ds,
            &all,
            &[],
            &TrainConfig {
                seed: 18,
                ..quick_cfg()
            },
        )
        .unwrap();
        assert_ne!(
            a.pair.student.weights[0].value_vec(),
            c.pair.student.weights[0].value_vec()
        );
    }

    #[test]
    fn teacher_tracks_but_lags_student() {
        let ds = cohort();
        let all: Vec<usize> = (0..ds.n()).collect();
        let out = train_cox_mt(&ds, &all, &[], &quick_cfg()).unwrap();
        let s = out.pair.student.weights[0].value_vec();
        let t = out.pair.teacher.weights[0].value_vec();
        assert_ne!(s, t, "teacher should lag the student after EMA updates");
        assert!(!out.config.eval_student);
        let eval_ptr = out.eval_model() as *const Mlp;
        assert_eq!(eval_ptr, &out.pair.teacher as *const Mlp);
    }

    #[test]
    fn zero_weight_reduces_to_the_supervised_baseline_bitwise() {
        let ds = cohort();
        let all: Vec<usize> = (0..ds.n()).collect();
        let cfg = quick_cfg();
        let mt = train_cox_mt(
            &ds,
            &all,
            &[],
            &TrainConfig {
                consistency_weight: 0.0,
                ..cfg.clone()
            },
        )
        .unwrap();
        let base = train_supervised_baseline(&ds, &all, &[], &cfg).unwrap();
        for (a, b) in mt
            .pair
            .student
            .params()
            .iter()
            .zip(base.pair.student.params())
        {
            let (va, vb) = (a.value_vec(), b.value_vec());
            for (x, y) in va.iter().zip(&vb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let eval_ptr = base.eval_model() as *const Mlp;
        assert_eq!(eval_ptr, &base.pair.student as *const Mlp);
    }

    #[test]
    fn early_stopping_restores_the_best_epoch() {
        let ds = cohort();
        let labeled = ds.labeled_indices();
        let (train, val) = labeled.split_at(labeled.len() - 12);
        let mut unl = ds.unlabeled_indices();
        let mut train: Vec<usize> = train.to_vec();
        train.append(&mut unl);
        let cfg = TrainConfig {
            epochs: 60,
            patience: 5,
            ..quick_cfg()
        };
        let out = train_cox_mt(&ds, &train, val, &cfg).unwrap();
        let best = out.best_val_c.expect("validation ran");
        let recorded_best = out
            .trace
            .iter()
            .filter_map(|e| e.val_c_index)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best.to_bits(), recorded_best.to_bits());
        // the restored parameters reproduce the best validation score
        let risks = predict_risks(out.eval_model(), &ds, val).unwrap();
        let (vt, ve) = ds.labels_for(val).unwrap();
        let c = concordance_index(&risks, &vt, &ve).unwrap();
        assert_eq!(c.to_bits(), best.to_bits());
        assert!(out.trace.len() <= 60);
    }

    #[test]
    fn minibatch_mode_runs_and_is_deterministic() {
        let ds = cohort();
        let all: Vec<usize> = (0..ds.n()).collect();
        let cfg = TrainConfig {
            minibatch: MinibatchConfig {
                events_per_batch: 8,
                controls_per_event: 4,
                consistency_size: 10,
            },
            ..quick_cfg()
        };
        let a = train_cox_mt(&ds, &all, &[], &cfg).unwrap();
        let b = train_cox_mt(&ds, &all, &[], &cfg).unwrap();
        assert_eq!(
            a.pair.student.weights[0].value_vec(),
            b.pair.student.weights[0].value_vec()
        );
        assert!(a.trace.iter().all(|e| e.loss.is_finite()));
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let ds = cohort();
        let all: Vec<usize> = (0..ds.n()).collect();
        let bad = |f: fn(&mut TrainConfig)| {
            let mut cfg = quick_cfg();
            f(&mut cfg);
            train_cox_mt(&ds, &all, &[], &cfg).is_err()
        };
        assert!(bad(|c| c.epochs = 0));
        assert!(bad(|c| c.lr = 0.0));
        assert!(bad(|c| c.noise_sigma = -0.1));
        assert!(bad(|c| c.consistency_weight = -1.0));
        assert!(bad(|c| c.ema_alpha = 1.1));
        // training on unlabeled-only data cannot work
        let unl = ds.unlabeled_indices();
        assert!(train_cox_mt(&ds, &unl, &[], &quick_cfg()).is_err());
    }
}
