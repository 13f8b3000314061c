use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::expression::ExpressionMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Event,
    Censored,
    Unlabeled,
}

/// One clinical follow-up record: observed time plus whether the terminal
/// event happened (`true`) or follow-up was censored (`false`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClinicalRecord {
    pub sample_id: String,
    pub time: f64,
    pub is_event: bool,
}

/// A feature matrix joined with (partial) survival labels.
///
/// Invariant: a sample has a time exactly when its status is labeled
/// (event or censored); unlabeled samples have `None`.
#[derive(Debug, Clone)]
pub struct SurvivalDataset {
    pub sample_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub features: Array2<f64>,
    pub times: Vec<Option<f64>>,
    pub statuses: Vec<SampleStatus>,
}

impl SurvivalDataset {
    pub fn new(
        sample_ids: Vec<String>,
        feature_names: Vec<String>,
        features: Array2<f64>,
        times: Vec<Option<f64>>,
        statuses: Vec<SampleStatus>,
    ) -> Result<SurvivalDataset> {
        let n = sample_ids.len();
        if features.nrows() != n || times.len() != n || statuses.len() != n {
            return Err(Error::dataset(format!(
                "misaligned dataset arrays: {n} ids, {} feature rows, {} times, {} statuses",
                features.nrows(),
                times.len(),
                statuses.len()
            )));
        }
        if features.ncols() != feature_names.len() {
            return Err(Error::dataset(format!(
                "{} feature columns but {} names",
                features.ncols(),
                feature_names.len()
            )));
        }
        for i in 0..n {
            match (statuses[i], times[i]) {
                (SampleStatus::Unlabeled, None) => {}
                (SampleStatus::Unlabeled, Some(t)) => {
                    return Err(Error::dataset(format!(
                        "unlabeled sample `{}` carries a time {t}",
                        sample_ids[i]
                    )))
                }
                (_, None) => {
                    return Err(Error::dataset(format!(
                        "labeled sample `{}` is missing its time",
                        sample_ids[i]
                    )))
                }
                (_, Some(t)) if !(t.is_finite() && t > 0.0) => {
                    return Err(Error::dataset(format!(
                        "sample `{}` has invalid time {t}",
                        sample_ids[i]
                    )))
                }
                _ => {}
            }
        }
        Ok(SurvivalDataset {
            sample_ids,
            feature_names,
            features,
            times,
            statuses,
        })
    }

    pub fn n(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        self.indices_with(|s| s != SampleStatus::Unlabeled)
    }

    pub fn event_indices(&self) -> Vec<usize> {
        self.indices_with(|s| s == SampleStatus::Event)
    }

    pub fn censored_indices(&self) -> Vec<usize> {
        self.indices_with(|s| s == SampleStatus::Censored)
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        self.indices_with(|s| s == SampleStatus::Unlabeled)
    }

    fn indices_with(&self, pred: impl Fn(SampleStatus) -> bool) -> Vec<usize> {
        (0..self.n()).filter(|&i| pred(self.statuses[i])).collect()
    }

    /// Times and event flags for the given indices, which must all be
    /// labeled.
    pub fn labels_for(&self, indices: &[usize]) -> Result<(Vec<f64>, Vec<bool>)> {
        let mut times = Vec::with_capacity(indices.len());
        let mut events = Vec::with_capacity(indices.len());
        for &i in indices {
            match (self.statuses[i], self.times[i]) {
                (SampleStatus::Event, Some(t)) => {
                    times.push(t);
                    events.push(true);
                }
                (SampleStatus::Censored, Some(t)) => {
                    times.push(t);
                    events.push(false);
                }
                _ => {
                    return Err(Error::dataset(format!(
                        "sample `{}` is unlabeled but was used where labels are required",
                        self.sample_ids[i]
                    )))
                }
            }
        }
        Ok((times, events))
    }

    /// Row-subset copy (features, labels and ids all restricted).
    pub fn subset(&self, indices: &[usize]) -> SurvivalDataset {
        let mut features = Array2::zeros((indices.len(), self.dim()));
        for (r, &i) in indices.iter().enumerate() {
            features.row_mut(r).assign(&self.features.row(i));
        }
        SurvivalDataset {
            sample_ids: indices
                .iter()
                .map(|&i| self.sample_ids[i].clone())
                .collect(),
            feature_names: self.feature_names.clone(),
            features,
            times: indices.iter().map(|&i| self.times[i]).collect(),
            statuses: indices.iter().map(|&i| self.statuses[i]).collect(),
        }
    }
}

/// Join tallies from `assemble_dataset`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct AssembleReport {
    pub n_events: usize,
    pub n_censored: usize,
    pub n_unlabeled: usize,
    /// Clinical rows whose sample id never appears in the expression matrix.
    pub unmatched_clinical: Vec<String>,
}

/// Load the clinical CSV (`sample_id,time,status` with status 1 = event,
/// 0 = censored; columns located by header name).
pub fn load_clinical_csv(path: impl AsRef<Path>) -> Result<Vec<ClinicalRecord>> {
    let path_str = path.as_ref().display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(&path_str, io),
            other => Error::Format {
                path: path_str.clone(),
                detail: format!("{other:?}"),
            },
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format {
            path: path_str.clone(),
            detail: e.to_string(),
        })?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Format {
                path: path_str.clone(),
                detail: format!("missing required column `{name}`"),
            })
    };
    let (ci, ct, cs) = (col("sample_id")?, col("time")?, col("status")?);

    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format {
            path: path_str.clone(),
            detail: e.to_string(),
        })?;
        let line = rec.position().map_or(i as u64 + 2, |p| p.line()) as usize;
        let id = rec.get(ci).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::CsvCell {
                path: path_str.clone(),
                line,
                column: ci + 1,
                detail: "empty sample_id".to_string(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId {
                kind: "sample",
                id,
                path: path_str.clone(),
            });
        }
        let time: f64 = rec
            .get(ct)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::CsvCell {
                path: path_str.clone(),
                line,
                column: ct + 1,
                detail: format!("cannot parse time `{}`", rec.get(ct).unwrap_or("")),
            })?;
        if !(time.is_finite() && time > 0.0) {
            return Err(Error::CsvCell {
                path: path_str.clone(),
                line,
                column: ct + 1,
                detail: format!("time {time} must be positive and finite"),
            });
        }
        let is_event = match rec.get(cs).unwrap_or("").trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::CsvCell {
                    path: path_str.clone(),
                    line,
                    column: cs + 1,
                    detail: format!("status `{other}` must be 0 or 1"),
                })
            }
        };
        out.push(ClinicalRecord {
            sample_id: id,
            time,
            is_event,
        });
    }
    Ok(out)
}

/// Join expression features with clinical labels by sample id.
///
/// Expression samples without a clinical record become the unlabeled pool;
/// clinical records without expression are reported (and logged) but ignored.
/// A join with neither events nor unlabeled samples is an error, since
/// nothing could be trained from it.
pub fn assemble_dataset(
    expression: &ExpressionMatrix,
    clinical: &[ClinicalRecord],
) -> Result<(SurvivalDataset, AssembleReport)> {
    let mut by_id: HashMap<&str, &ClinicalRecord> = HashMap::with_capacity(clinical.len());
    for rec in clinical {
        if by_id.insert(rec.sample_id.as_str(), rec).is_some() {
            return Err(Error::DuplicateId {
                kind: "sample",
                id: rec.sample_id.clone(),
                path: "<clinical records>".to_string(),
            });
        }
    }

    let mut times = Vec::with_capacity(expression.n_samples());
    let mut statuses = Vec::with_capacity(expression.n_samples());
    let mut report = AssembleReport::default();
    for sid in &expression.sample_ids {
        match by_id.remove(sid.as_str()) {
            Some(rec) => {
                times.push(Some(rec.time));
                statuses.push(if rec.is_event {
                    report.n_events += 1;
                    SampleStatus::Event
                } else {
                    report.n_censored += 1;
                    SampleStatus::Censored
                });
            }
            None => {
                times.push(None);
                statuses.push(SampleStatus::Unlabeled);
                report.n_unlabeled += 1;
            }
        }
    }
    report.unmatched_clinical = by_id.keys().map(|s| s.to_string()).collect();
    report.unmatched_clinical.sort();
    if !report.unmatched_clinical.is_empty() {
        log::warn!(
            "{} clinical record(s) have no expression sample: {:?}",
            report.unmatched_clinical.len(),
            report.unmatched_clinical
        );
    }
    if report.n_events == 0 && report.n_unlabeled == 0 {
        return Err(Error::dataset(
            "joined cohort has no events and no unlabeled samples; nothing can be trained",
        ));
    }

    let ds = SurvivalDataset::new(
        expression.sample_ids.clone(),
        expression.gene_ids.clone(),
        expression.values.clone(),
        times,
        statuses,
    )?;
    Ok((ds, report))
}

#[derive(Serialize, Deserialize)]
struct ArchiveFile {
    version: u32,
    sample_ids: Vec<String>,
    feature_names: Vec<String>,
    features: Vec<Vec<f64>>,
    times: Vec<Option<f64>>,
    statuses: Vec<SampleStatus>,
}

const ARCHIVE_VERSION: u32 = 1;

/// Write the dataset as a versioned JSON archive. Serialization is fully
/// deterministic, so re-archiving an unchanged dataset is byte-identical.
pub fn save_dataset(ds: &SurvivalDataset, path: impl AsRef<Path>) -> Result<()> {
    let path_str = path.as_ref().display().to_string();
    let file = ArchiveFile {
        version: ARCHIVE_VERSION,
        sample_ids: ds.sample_ids.clone(),
        feature_names: ds.feature_names.clone(),
        features: ds.features.rows().into_iter().map(|r| r.to_vec()).collect(),
        times: ds.times.clone(),
        statuses: ds.statuses.clone(),
    };
    let json = serde_json::to_string_pretty(&file).expect("archive serialization cannot fail");
    std::fs::write(path.as_ref(), json).map_err(|e| Error::io(&path_str, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<SurvivalDataset> {
    let path_str = path.as_ref().display().to_string();
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path_str, e))?;
    let file: ArchiveFile = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path_str.clone(),
        detail: e.to_string(),
    })?;
    if file.version != ARCHIVE_VERSION {
        return Err(Error::Format {
            path: path_str,
            detail: format!(
                "archive version {} unsupported (expected {ARCHIVE_VERSION})",
                file.version
            ),
        });
    }
    let n = file.sample_ids.len();
    let d = file.feature_names.len();
    let mut features = Array2::zeros((n, d));
    if file.features.len() != n {
        return Err(Error::Format {
            path: path_str,
            detail: "feature row count does not match sample ids".to_string(),
        });
    }
    for (r, row) in file.features.iter().enumerate() {
        if row.len() != d {
            return Err(Error::Format {
                path: path_str,
                detail: format!("feature row {r} has {} values, expected {d}", row.len()),
            });
        }
        for (c, &v) in row.iter().enumerate() {
            features[[r, c]] = v;
        }
    }
    SurvivalDataset::new(
        file.sample_ids,
        file.feature_names,
        features,
        file.times,
        file.statuses,
    )
}
