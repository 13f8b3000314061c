//! Per-sample patch feature files.
//!
//! Each sample contributes one headerless CSV (`<sample_id>.csv`) whose rows
//! are fixed-width patch feature vectors. Patch counts may differ between
//! samples; the feature width may not.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// All patch vectors for one sample, one row per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureSet {
    pub features: Array2<f64>,
}

impl PatchFeatureSet {
    pub fn n_patches(&self) -> usize {
        self.features.nrows()
    }
}

/// Patch sets keyed by sample id, all sharing one feature width.
#[derive(Debug, Clone)]
pub struct PatchStore {
    pub dim: usize,
    sets: HashMap<String, PatchFeatureSet>,
}

impl PatchStore {
    pub fn new(dim: usize) -> PatchStore {
        PatchStore {
            dim,
            sets: HashMap::new(),
        }
    }

    pub fn insert(&mut self, sample_id: String, features: Array2<f64>) -> Result<()> {
        if features.ncols() != self.dim {
            return Err(Error::dataset(format!(
                "patch set for `{sample_id}` has width {}, store expects {}",
                features.ncols(),
                self.dim
            )));
        }
        if features.nrows() == 0 {
            return Err(Error::MissingPatches { id: sample_id });
        }
        self.sets.insert(sample_id, PatchFeatureSet { features });
        Ok(())
    }

    pub fn get(&self, sample_id: &str) -> Result<&PatchFeatureSet> {
        self.sets
            .get(sample_id)
            .ok_or_else(|| Error::MissingPatches {
                id: sample_id.to_string(),
            })
    }

    pub fn contains(&self, sample_id: &str) -> bool {
        self.sets.contains_key(sample_id)
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn sample_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.sets.keys().map(|s| s.as_str()).collect();
        ids.sort_unstable();
        ids
    }
}

/// Load every `*.csv` in `dir` (file stem = sample id) into a store with the
/// given feature width. Files are visited in sorted order so failures are
/// reported deterministically.
pub fn load_patch_dir(dir: impl AsRef<Path>, dim: usize) -> Result<PatchStore> {
    let dir = dir.as_ref();
    let dir_str = dir.display().to_string();
    if dim == 0 {
        return Err(Error::config("patch feature width must be positive"));
    }
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(&dir_str, e))?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            (path.extension().is_some_and(|e| e == "csv")).then_some(path)
        })
        .collect();
    paths.sort();

    let mut store = PatchStore::new(dim);
    for path in paths {
        let path_str = path.display().to_string();
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Format {
                path: path_str.clone(),
                detail: "file stem is not a usable sample id".to_string(),
            })?
            .to_string();
        if store.contains(&stem) {
            return Err(Error::DuplicateId {
                kind: "patch sample",
                id: stem,
                path: path_str,
            });
        }

        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(&path)
            .map_err(|e| Error::Format {
                path: path_str.clone(),
                detail: e.to_string(),
            })?;
        let mut rows: Vec<f64> = Vec::new();
        let mut n_rows = 0usize;
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Format {
                path: path_str.clone(),
                detail: e.to_string(),
            })?;
            let line = rec.position().map_or(n_rows as u64 + 1, |p| p.line()) as usize;
            if rec.len() != dim {
                return Err(Error::Format {
                    path: path_str.clone(),
                    detail: format!("row {line} has {} values, expected {dim}", rec.len()),
                });
            }
            for (c, cell) in rec.iter().enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| Error::CsvCell {
                    path: path_str.clone(),
                    line,
                    column: c + 1,
                    detail: format!("cannot parse `{cell}` as a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::CsvCell {
                        path: path_str.clone(),
                        line,
                        column: c + 1,
                        detail: format!("non-finite value {v}"),
                    });
                }
                rows.push(v);
            }
            n_rows += 1;
        }
        if n_rows == 0 {
            return Err(Error::MissingPatches { id: stem });
        }
        let features = Array2::from_shape_vec((n_rows, dim), rows)
            .expect("row-major patch buffer matches recorded shape");
        store.insert(stem, features)?;
    }
    Ok(store)
}

/// Write one sample's patch rows as a headerless CSV (fixture helper and the
/// inverse of `load_patch_dir` for a single file).
pub fn write_patch_csv(path: impl AsRef<Path>, features: &Array2<f64>) -> Result<()> {
    let path_str = path.as_ref().display().to_string();
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path.as_ref())
        .map_err(|e| Error::Format {
            path: path_str.clone(),
            detail: e.to_string(),
        })?;
    for row in features.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writer.write_record(&cells).map_err(|e| Error::Format {
            path: path_str.clone(),
            detail: e.to_string(),
        })?;
    }
    writer.flush().map_err(|e| Error::io(&path_str, e))
}
