//! Stratified repeated k-fold plans.
//!
//! Events, censored and unlabeled samples are shuffled separately per repeat
//! and dealt round-robin with one continuing cursor, so per-fold labeled
//! counts and per-fold event counts each differ by at most one. Unlabeled
//! samples get fold assignments too: when fold `t` is the test fold, the
//! unlabeled samples assigned to `t` sit out entirely, keeping every
//! test-fold sample (labeled or not) away from training.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::data::dataset::{SampleStatus, SurvivalDataset};
use crate::error::{Error, Result};
use crate::seeds::{self, Stream};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitOptions {
    pub k: usize,
    pub repeats: usize,
    /// Share of non-test labeled samples held out for validation, in [0, 1).
    /// Zero disables the validation split.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitOptions {
    fn default() -> SplitOptions {
        SplitOptions {
            k: 5,
            repeats: 4,
            val_fraction: 0.2,
            seed: 42,
        }
    }
}

/// Fold assignment for one repeat: `fold_of[i]` is sample `i`'s fold, and
/// `val_mask[t][i]` marks sample `i` as validation when fold `t` is the test
/// fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub repeat: usize,
    pub k: usize,
    pub seed: u64,
    pub fold_of: Vec<u8>,
    pub val_mask: Vec<Vec<bool>>,
}

/// Index sets for one (repeat, fold) job, each sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldTriple {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldPlan {
    /// Resolve the train/val/test index sets with fold `t` as the test fold.
    pub fn triple(&self, ds: &SurvivalDataset, t: usize) -> Result<FoldTriple> {
        if t >= self.k {
            return Err(Error::config(format!(
                "test fold {t} out of range for k={}",
                self.k
            )));
        }
        if ds.n() != self.fold_of.len() {
            return Err(Error::dataset(format!(
                "fold plan covers {} samples but dataset has {}",
                self.fold_of.len(),
                ds.n()
            )));
        }
        let mask = &self.val_mask[t];
        let mut triple = FoldTriple {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for (i, status) in ds.statuses.iter().enumerate() {
            let in_test_fold = self.fold_of[i] as usize == t;
            match status {
                SampleStatus::Unlabeled => {
                    // test-fold unlabeled samples are used nowhere
                    if !in_test_fold {
                        triple.train.push(i);
                    }
                }
                _ if in_test_fold => triple.test.push(i),
                _ if mask[i] => triple.val.push(i),
                _ => triple.train.push(i),
            }
        }
        Ok(triple)
    }
}

fn validate(ds: &SurvivalDataset, opts: &SplitOptions) -> Result<()> {
    if opts.k < 2 {
        return Err(Error::config("need at least 2 folds"));
    }
    if opts.k > u8::MAX as usize {
        return Err(Error::config(format!("k={} exceeds 255 folds", opts.k)));
    }
    if opts.repeats == 0 {
        return Err(Error::config("need at least 1 repeat"));
    }
    if !(0.0..1.0).contains(&opts.val_fraction) {
        return Err(Error::config(format!(
            "val_fraction {} outside [0, 1)",
            opts.val_fraction
        )));
    }
    let n_labeled = ds.labeled_indices().len();
    let n_events = ds.event_indices().len();
    if n_labeled < opts.k {
        return Err(Error::config(format!(
            "{} labeled samples cannot fill {} folds",
            n_labeled, opts.k
        )));
    }
    if n_events < opts.k {
        return Err(Error::config(format!(
            "stratified folds need at least one event per fold ({} events, k={})",
            n_events, opts.k
        )));
    }
    if opts.val_fraction > 0.0 {
        let max_fold_events = n_events.div_ceil(opts.k);
        if n_events - max_fold_events < 3 {
            return Err(Error::config(format!(
                "only {} events outside the largest test fold; need 3 to carve a validation \
                 event and keep 2 for training",
                n_events - max_fold_events
            )));
        }
    }
    Ok(())
}

/// Build one fold plan per repeat.
pub fn split_folds(ds: &SurvivalDataset, opts: &SplitOptions) -> Result<Vec<FoldPlan>> {
    validate(ds, opts)?;
    let k = opts.k;
    let shuffle_base = seeds::derive(opts.seed, Stream::FoldShuffle);
    let mut plans = Vec::with_capacity(opts.repeats);
    for repeat in 0..opts.repeats {
        let mut rng = seeds::rng(shuffle_base, Stream::Custom(repeat as u64));
        let mut events = ds.event_indices();
        let mut censored = ds.censored_indices();
        let mut unlabeled = ds.unlabeled_indices();
        events.shuffle(&mut rng);
        censored.shuffle(&mut rng);
        unlabeled.shuffle(&mut rng);

        let mut fold_of = vec![0u8; ds.n()];
        for (cursor, &i) in events.iter().chain(&censored).chain(&unlabeled).enumerate() {
            fold_of[i] = (cursor % k) as u8;
        }

        let mut val_mask = vec![vec![false; ds.n()]; k];
        if opts.val_fraction > 0.0 {
            for (t, mask) in val_mask.iter_mut().enumerate() {
                let nontest = |pool: &[usize]| -> Vec<usize> {
                    pool.iter()
                        .copied()
                        .filter(|&i| fold_of[i] as usize != t)
                        .collect()
                };
                let e_nt = nontest(&events);
                let c_nt = nontest(&censored);
                // at least 1 validation event, at least 2 left for training
                let n_val_e = ((opts.val_fraction * e_nt.len() as f64).round() as usize)
                    .clamp(1, e_nt.len() - 2);
                let n_val_c =
                    ((opts.val_fraction * c_nt.len() as f64).round() as usize).min(c_nt.len());
                for &i in e_nt.iter().take(n_val_e).chain(c_nt.iter().take(n_val_c)) {
                    mask[i] = true;
                }
            }
        }

        plans.push(FoldPlan {
            repeat,
            k,
            seed: opts.seed,
            fold_of,
            val_mask,
        });
    }
    Ok(plans)
}

/// Stratified train/validation carve without folds: shuffle events and
/// censored samples separately, hold out `val_fraction` of each (at least
/// one event, at least two events kept for training), and keep every
/// unlabeled sample on the training side. Both returned index lists are
/// sorted.
pub fn carve_validation(
    ds: &SurvivalDataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::config(format!(
            "val_fraction {val_fraction} outside [0, 1)"
        )));
    }
    let mut events = ds.event_indices();
    let mut censored = ds.censored_indices();
    if val_fraction > 0.0 && events.len() < 3 {
        return Err(Error::config(format!(
            "{} events cannot cover a validation event plus two training events",
            events.len()
        )));
    }
    let mut rng = seeds::rng(seeds::derive(seed, Stream::FoldShuffle), Stream::Custom(0));
    events.shuffle(&mut rng);
    censored.shuffle(&mut rng);
    let (n_val_e, n_val_c) = if val_fraction == 0.0 {
        (0, 0)
    } else {
        (
            ((val_fraction * events.len() as f64).round() as usize).clamp(1, events.len() - 2),
            ((val_fraction * censored.len() as f64).round() as usize).min(censored.len()),
        )
    };
    let mut val: Vec<usize> = events[..n_val_e]
        .iter()
        .chain(&censored[..n_val_c])
        .copied()
        .collect();
    let mut train: Vec<usize> = events[n_val_e..]
        .iter()
        .chain(&censored[n_val_c..])
        .copied()
        .chain(ds.unlabeled_indices())
        .collect();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

const PLAN_MAGIC: &str = "coxmt-foldplan v1";

/// Write fold plans as a small tab-separated text file. The `val` column is
/// a k-character bitstring; character `t` marks the sample as validation
/// when fold `t` is the test fold.
pub fn write_fold_plans(path: impl AsRef<Path>, plans: &[FoldPlan]) -> Result<()> {
    let path_str = path.as_ref().display().to_string();
    if plans.is_empty() {
        return Err(Error::config("no fold plans to write"));
    }
    let (k, seed, n) = (plans[0].k, plans[0].seed, plans[0].fold_of.len());
    let mut out = String::new();
    let _ = writeln!(out, "{PLAN_MAGIC}");
    let _ = writeln!(out, "k={k} repeats={} seed={seed} n={n}", plans.len());
    let _ = writeln!(out, "repeat\tsample\tfold\tval");
    for plan in plans {
        if plan.k != k || plan.fold_of.len() != n {
            return Err(Error::config("fold plans disagree on k or sample count"));
        }
        for i in 0..n {
            let bits: String = (0..k)
                .map(|t| if plan.val_mask[t][i] { '1' } else { '0' })
                .collect();
            let _ = writeln!(out, "{}\t{i}\t{}\t{bits}", plan.repeat, plan.fold_of[i]);
        }
    }
    std::fs::write(path.as_ref(), out).map_err(|e| Error::io(&path_str, e))
}

pub fn read_fold_plans(path: impl AsRef<Path>) -> Result<Vec<FoldPlan>> {
    let path_str = path.as_ref().display().to_string();
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path_str, e))?;
    let fail = |detail: String| Error::Format {
        path: path_str.clone(),
        detail,
    };
    let mut lines = text.lines();
    if lines.next() != Some(PLAN_MAGIC) {
        return Err(fail(format!("missing `{PLAN_MAGIC}` header")));
    }
    let params = lines
        .next()
        .ok_or_else(|| fail("missing parameter line".into()))?;
    let mut k = None;
    let mut repeats = None;
    let mut seed = None;
    let mut n = None;
    for pair in params.split_whitespace() {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| fail(format!("malformed parameter `{pair}`")))?;
        let parsed: u64 = value
            .parse()
            .map_err(|_| fail(format!("cannot parse `{pair}`")))?;
        match key {
            "k" => k = Some(parsed as usize),
            "repeats" => repeats = Some(parsed as usize),
            "seed" => seed = Some(parsed),
            "n" => n = Some(parsed as usize),
            other => return Err(fail(format!("unknown parameter `{other}`"))),
        }
    }
    let (k, repeats, seed, n) = match (k, repeats, seed, n) {
        (Some(k), Some(r), Some(s), Some(n)) => (k, r, s, n),
        _ => {
            return Err(fail(
                "parameter line must set k, repeats, seed and n".into(),
            ))
        }
    };
    lines.next(); // column header

    let mut plans: Vec<FoldPlan> = (0..repeats)
        .map(|repeat| FoldPlan {
            repeat,
            k,
            seed,
            fold_of: vec![0; n],
            val_mask: vec![vec![false; n]; k],
        })
        .collect();
    let mut seen = vec![vec![false; n]; repeats];
    for (lineno, line) in text.lines().enumerate().skip(3) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(fail(format!("line {}: expected 4 columns", lineno + 1)));
        }
        let parse = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| fail(format!("line {}: cannot parse `{s}`", lineno + 1)))
        };
        let (r, i, fold) = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
        if r >= repeats || i >= n || fold >= k {
            return Err(fail(format!("line {}: index out of range", lineno + 1)));
        }
        if std::mem::replace(&mut seen[r][i], true) {
            return Err(fail(format!(
                "line {}: duplicate (repeat, sample) row",
                lineno + 1
            )));
        }
        let bits = fields[3];
        if bits.len() != k || bits.bytes().any(|b| b != b'0' && b != b'1') {
            return Err(fail(format!(
                "line {}: val column must be {k} characters of 0/1",
                lineno + 1
            )));
        }
        plans[r].fold_of[i] = fold as u8;
        for (t, b) in bits.bytes().enumerate() {
            plans[r].val_mask[t][i] = b == b'1';
        }
    }
    if seen.iter().flatten().any(|&s| !s) {
        return Err(fail("missing (repeat, sample) rows".into()));
    }
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_synthetic, SynthConfig};

    fn cohort(n: usize, unlabeled: f64) -> SurvivalDataset {
        let cfg = SynthConfig {
            n_samples: n,
            censor_fraction: 0.3,
            unlabeled_fraction: unlabeled,
            seed: 5,
            ..SynthConfig::default()
        };
        generate_synthetic(&cfg).unwrap().0
    }

    #[test]
    fn folds_balance_sizes_and_events() {
        let ds = cohort(103, 0.0);
        let plans = split_folds(&ds, &SplitOptions::default()).unwrap();
        assert_eq!(plans.len(), 4);
        for plan in &plans {
            let mut sizes = vec![0usize; plan.k];
            let mut event_counts = vec![0usize; plan.k];
            for &i in &ds.labeled_indices() {
                sizes[plan.fold_of[i] as usize] += 1;
            }
            for &i in &ds.event_indices() {
                event_counts[plan.fold_of[i] as usize] += 1;
            }
            for counts in [&sizes, &event_counts] {
                let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
                assert!(spread <= 1, "unbalanced folds: {counts:?}");
            }
        }
    }

    #[test]
    fn triples_partition_without_overlap() {
        let ds = cohort(90, 0.3);
        let plans = split_folds(&ds, &SplitOptions::default()).unwrap();
        let plan = &plans[1];
        for t in 0..plan.k {
            let triple = plan.triple(&ds, t).unwrap();
            let mut all: Vec<usize> = triple
                .train
                .iter()
                .chain(&triple.val)
                .chain(&triple.test)
                .copied()
                .collect();
            all.sort_unstable();
            all.dedup();
            assert_eq!(
                all.len(),
                triple.train.len() + triple.val.len() + triple.test.len(),
                "overlapping index sets"
            );
            // test and val contain only labeled samples
            for &i in triple.test.iter().chain(&triple.val) {
                assert_ne!(ds.statuses[i], SampleStatus::Unlabeled);
            }
            // every test-fold sample (labeled or unlabeled) stays out of train
            for &i in &triple.train {
                assert_ne!(plan.fold_of[i] as usize, t);
            }
            // the held-out unlabeled samples explain the size gap
            let benched = ds
                .unlabeled_indices()
                .iter()
                .filter(|&&i| plan.fold_of[i] as usize == t)
                .count();
            assert_eq!(all.len() + benched, ds.n());
        }
    }

    #[test]
    fn val_keeps_events_on_both_sides() {
        let ds = cohort(60, 0.2);
        let plans = split_folds(&ds, &SplitOptions::default()).unwrap();
        for plan in &plans {
            for t in 0..plan.k {
                let triple = plan.triple(&ds, t).unwrap();
                let val_events = triple
                    .val
                    .iter()
                    .filter(|&&i| ds.statuses[i] == SampleStatus::Event)
                    .count();
                let train_events = triple
                    .train
                    .iter()
                    .filter(|&&i| ds.statuses[i] == SampleStatus::Event)
                    .count();
                assert!(val_events >= 1);
                assert!(train_events >= 2);
            }
        }
    }

    #[test]
    fn zero_val_fraction_disables_validation() {
        let ds = cohort(40, 0.0);
        let opts = SplitOptions {
            val_fraction: 0.0,
            ..SplitOptions::default()
        };
        let plans = split_folds(&ds, &opts).unwrap();
        let triple = plans[0].triple(&ds, 0).unwrap();
        assert!(triple.val.is_empty());
        assert_eq!(triple.train.len() + triple.test.len(), ds.n());
    }

    #[test]
    fn plans_are_deterministic_and_vary_by_repeat() {
        let ds = cohort(70, 0.1);
        let opts = SplitOptions::default();
        let a = split_folds(&ds, &opts).unwrap();
        let b = split_folds(&ds, &opts).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].fold_of, a[1].fold_of);
        let other = split_folds(&ds, &SplitOptions { seed: 43, ..opts }).unwrap();
        assert_ne!(a[0].fold_of, other[0].fold_of);
    }

    #[test]
    fn validation_rejects_impossible_requests() {
        let ds = cohort(30, 0.0);
        let bad = |f: fn(&mut SplitOptions)| {
            let mut opts = SplitOptions::default();
            f(&mut opts);
            split_folds(&ds, &opts).is_err()
        };
        assert!(bad(|o| o.k = 1));
        assert!(bad(|o| o.repeats = 0));
        assert!(bad(|o| o.val_fraction = 1.0));
        assert!(bad(|o| o.k = 29));

        // 5 events, k=2: the largest fold takes 3, leaving 2 outside, which
        // cannot cover 1 validation event plus 2 training events
        let tiny = SurvivalDataset::new(
            (0..5).map(|i| format!("t{i}")).collect(),
            vec!["f".into()],
            ndarray::Array2::zeros((5, 1)),
            (1..=5).map(|t| Some(t as f64)).collect(),
            vec![SampleStatus::Event; 5],
        )
        .unwrap();
        let opts = SplitOptions {
            k: 2,
            ..SplitOptions::default()
        };
        assert!(split_folds(&tiny, &opts).is_err());
    }

    #[test]
    fn carve_validation_is_stratified_and_exhaustive() {
        let ds = cohort(50, 0.2);
        let (train, val) = carve_validation(&ds, 0.25, 9).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.n()).collect::<Vec<_>>());
        let val_events = val
            .iter()
            .filter(|&&i| ds.statuses[i] == SampleStatus::Event)
            .count();
        let train_events = train
            .iter()
            .filter(|&&i| ds.statuses[i] == SampleStatus::Event)
            .count();
        assert!(val_events >= 1);
        assert!(train_events >= 2);
        assert!(val
            .iter()
            .all(|&i| ds.statuses[i] != SampleStatus::Unlabeled));
        // deterministic
        let again = carve_validation(&ds, 0.25, 9).unwrap();
        assert_eq!(again.0, train);
        // zero fraction keeps everything in training
        let (t0, v0) = carve_validation(&ds, 0.0, 9).unwrap();
        assert!(v0.is_empty());
        assert_eq!(t0.len(), ds.n());
    }

    #[test]
    fn plan_file_round_trips() {
        let ds = cohort(35, 0.2);
        let opts = SplitOptions {
            repeats: 2,
            ..SplitOptions::default()
        };
        let plans = split_folds(&ds, &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("folds.tsv");
        write_fold_plans(&path, &plans).unwrap();
        let back = read_fold_plans(&path).unwrap();
        assert_eq!(plans, back);
    }

    #[test]
    fn plan_file_rejects_corruption() {
        let ds = cohort(35, 0.0);
        let plans = split_folds(&ds, &SplitOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("folds.tsv");
        write_fold_plans(&path, &plans).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();

        let bad_magic = text.replacen("coxmt-foldplan v1", "foldplan v2", 1);
        std::fs::write(&path, bad_magic).unwrap();
        assert!(read_fold_plans(&path).is_err());

        let truncated: Vec<&str> = text.lines().take(10).collect();
        std::fs::write(&path, truncated.join("\n")).unwrap();
        assert!(read_fold_plans(&path).is_err());
    }
}
