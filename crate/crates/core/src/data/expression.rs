use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};

/// The ten housekeeping genes whose pooled mean anchors cross-cohort
/// normalization.
pub const HOUSEKEEPING_GENES: [&str; 10] = [
    "C1orf43", "CHMP2A", "GPI", "PSMB2", "PSMB4", "RAB7A", "REEP5", "SNRPD3", "VCP", "VPS29",
];

/// Preprocessing progress marker. The stages have a fixed order (normalize,
/// then variance selection, then log transform, each optional) and the
/// matrix refuses out-of-order application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Raw,
    Normalized,
    Selected,
    Logged,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Raw => "raw",
            Stage::Normalized => "reference-normalized",
            Stage::Selected => "variance-selected",
            Stage::Logged => "log-transformed",
        };
        f.write_str(s)
    }
}

/// A samples x genes expression matrix with row and column ids.
#[derive(Debug, Clone)]
pub struct ExpressionMatrix {
    pub sample_ids: Vec<String>,
    pub gene_ids: Vec<String>,
    pub values: Array2<f64>,
    stage: Stage,
}

/// Which way round the CSV is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    SamplesAsRows,
    GenesAsRows,
}

/// What ingestion did: sizes after cleaning plus every gene dropped for
/// missing values.
#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestReport {
    pub n_samples: usize,
    pub n_genes: usize,
    pub dropped_genes: Vec<String>,
    pub n_missing_cells: usize,
}

impl ExpressionMatrix {
    pub fn new(
        sample_ids: Vec<String>,
        gene_ids: Vec<String>,
        values: Array2<f64>,
    ) -> Result<ExpressionMatrix> {
        if values.nrows() != sample_ids.len() || values.ncols() != gene_ids.len() {
            return Err(Error::ShapeMismatch {
                op: "expression_matrix",
                left: vec![values.nrows(), values.ncols()],
                right: vec![sample_ids.len(), gene_ids.len()],
            });
        }
        check_unique("sample", &sample_ids, "<constructed>")?;
        check_unique("gene", &gene_ids, "<constructed>")?;
        Ok(ExpressionMatrix {
            sample_ids,
            gene_ids,
            values,
            stage: Stage::Raw,
        })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_genes(&self) -> usize {
        self.values.ncols()
    }

    /// Rescale every value by E_ref / E_self, the ratio of pooled mean
    /// housekeeping expression in the reference cohort to this one. Both
    /// cohorts must still be on the raw scale and carry all ten housekeeping
    /// genes. Must run before variance selection and log transform.
    pub fn normalize_to_reference(
        mut self,
        reference: &ExpressionMatrix,
    ) -> Result<ExpressionMatrix> {
        if self.stage != Stage::Raw {
            return Err(Error::OutOfOrder {
                step: "normalize_to_reference",
                stage: self.stage.to_string(),
            });
        }
        if reference.stage == Stage::Logged {
            return Err(Error::OutOfOrder {
                step: "normalize_to_reference (reference cohort)",
                stage: reference.stage.to_string(),
            });
        }
        let e_self = self.pooled_housekeeping_mean("this cohort")?;
        let e_ref = reference.pooled_housekeeping_mean("reference cohort")?;
        if e_self <= 0.0 {
            return Err(Error::Domain {
                op: "normalize_to_reference",
                detail: format!("pooled housekeeping mean {e_self} is not positive"),
            });
        }
        let factor = e_ref / e_self;
        self.values.mapv_inplace(|x| x * factor);
        self.stage = Stage::Normalized;
        Ok(self)
    }

    fn pooled_housekeeping_mean(&self, which: &'static str) -> Result<f64> {
        let mut cols = Vec::with_capacity(HOUSEKEEPING_GENES.len());
        let mut missing = Vec::new();
        for g in HOUSEKEEPING_GENES {
            match self.gene_ids.iter().position(|id| id == g) {
                Some(c) => cols.push(c),
                None => missing.push(g.to_string()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingHousekeeping {
                which,
                genes: missing,
            });
        }
        let mut acc = 0.0;
        for &c in &cols {
            for r in 0..self.n_samples() {
                acc += self.values[[r, c]];
            }
        }
        Ok(acc / (cols.len() * self.n_samples()) as f64)
    }

    /// Keep the k genes with the highest unbiased (n-1) variance across
    /// samples, computed on the pre-log scale. Ties break toward the earlier
    /// column; surviving genes keep their original order. Must run before the
    /// log transform.
    pub fn select_top_variance_genes(mut self, k: usize) -> Result<ExpressionMatrix> {
        if self.stage > Stage::Normalized {
            return Err(Error::OutOfOrder {
                step: "select_top_variance_genes",
                stage: self.stage.to_string(),
            });
        }
        if k == 0 || k > self.n_genes() {
            return Err(Error::config(format!(
                "cannot select {k} genes from {}",
                self.n_genes()
            )));
        }
        if self.n_samples() < 2 {
            return Err(Error::config(
                "variance selection needs at least two samples",
            ));
        }
        let n = self.n_samples() as f64;
        let mut ranked: Vec<(usize, f64)> = (0..self.n_genes())
            .map(|c| {
                let col = self.values.column(c);
                let mean = col.sum() / n;
                let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
                (c, var)
            })
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut keep: Vec<usize> = ranked[..k].iter().map(|(c, _)| *c).collect();
        keep.sort_unstable();

        let mut out = Array2::zeros((self.n_samples(), k));
        for (new_c, &c) in keep.iter().enumerate() {
            out.column_mut(new_c).assign(&self.values.column(c));
        }
        self.gene_ids = keep.iter().map(|&c| self.gene_ids[c].clone()).collect();
        self.values = out;
        self.stage = Stage::Selected;
        Ok(self)
    }

    /// Replace every value x by log2(1 + x). Values below 0 are a domain
    /// error (named by sample and gene). Terminal stage.
    pub fn log_transform(mut self) -> Result<ExpressionMatrix> {
        if self.stage == Stage::Logged {
            return Err(Error::OutOfOrder {
                step: "log_transform",
                stage: self.stage.to_string(),
            });
        }
        for ((r, c), &x) in self.values.indexed_iter() {
            if x < 0.0 {
                return Err(Error::Domain {
                    op: "log_transform",
                    detail: format!(
                        "negative expression {x} for sample `{}`, gene `{}`",
                        self.sample_ids[r], self.gene_ids[c]
                    ),
                });
            }
        }
        self.values
            .mapv_inplace(|x| x.ln_1p() / std::f64::consts::LN_2);
        self.stage = Stage::Logged;
        Ok(self)
    }
}

fn check_unique(kind: &'static str, ids: &[String], path: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId {
                kind,
                id: id.clone(),
                path: path.to_string(),
            });
        }
    }
    Ok(())
}

/// Parse an expression CSV. The first row holds column ids (after a corner
/// label), the first column row ids. Empty cells and `NA` are missing; any
/// gene with a missing value is dropped and reported. Other unparseable
/// cells are errors with 1-based line/column coordinates.
pub fn load_expression_csv(
    path: impl AsRef<Path>,
    orientation: Orientation,
) -> Result<(ExpressionMatrix, IngestReport)> {
    let path_str = path.as_ref().display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path.as_ref())
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(&path_str, io),
            other => Error::Format {
                path: path_str.clone(),
                detail: format!("{other:?}"),
            },
        })?;

    let mut rows: Vec<(u64, Vec<String>)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format {
            path: path_str.clone(),
            detail: e.to_string(),
        })?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        rows.push((line, rec.iter().map(|s| s.trim().to_string()).collect()));
    }
    if rows.is_empty() {
        return Err(Error::Format {
            path: path_str,
            detail: "empty expression file".to_string(),
        });
    }
    let (_, header) = &rows[0];
    if header.len() < 2 || rows.len() < 2 {
        return Err(Error::Format {
            path: path_str,
            detail: "expression file needs at least one id row/column and one value".to_string(),
        });
    }
    let col_ids: Vec<String> = header[1..].to_vec();
    let mut row_ids = Vec::with_capacity(rows.len() - 1);
    let mut cells: Vec<Vec<Option<f64>>> = Vec::with_capacity(rows.len() - 1);
    let mut n_missing = 0usize;
    for (line, fields) in &rows[1..] {
        if fields.len() != header.len() {
            return Err(Error::Format {
                path: path_str.clone(),
                detail: format!(
                    "line {line}: expected {} fields, found {}",
                    header.len(),
                    fields.len()
                ),
            });
        }
        row_ids.push(fields[0].clone());
        let mut parsed = Vec::with_capacity(fields.len() - 1);
        for (j, cell) in fields[1..].iter().enumerate() {
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                n_missing += 1;
                parsed.push(None);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => parsed.push(Some(v)),
                _ => {
                    return Err(Error::CsvCell {
                        path: path_str.clone(),
                        line: *line as usize,
                        column: j + 2,
                        detail: format!("cannot parse `{cell}` as a finite number"),
                    })
                }
            }
        }
        cells.push(parsed);
    }

    // Reorient so rows are samples, columns genes.
    let (sample_ids, gene_ids, grid) = match orientation {
        Orientation::SamplesAsRows => (row_ids, col_ids, cells),
        Orientation::GenesAsRows => {
            let transposed: Vec<Vec<Option<f64>>> = (0..col_ids.len())
                .map(|s| (0..row_ids.len()).map(|g| cells[g][s]).collect())
                .collect();
            (col_ids, row_ids, transposed)
        }
    };
    check_unique("sample", &sample_ids, &path_str)?;
    check_unique("gene", &gene_ids, &path_str)?;

    // Drop genes with any missing value.
    let n_genes_in = gene_ids.len();
    let keep: Vec<usize> = (0..n_genes_in)
        .filter(|&g| grid.iter().all(|row| row[g].is_some()))
        .collect();
    let dropped_genes: Vec<String> = (0..n_genes_in)
        .filter(|g| !keep.contains(g))
        .map(|g| gene_ids[g].clone())
        .collect();
    if !dropped_genes.is_empty() {
        log::info!(
            "dropped {} gene(s) with missing values: {:?}",
            dropped_genes.len(),
            dropped_genes
        );
    }
    if keep.is_empty() {
        return Err(Error::Format {
            path: path_str,
            detail: "every gene has missing values".to_string(),
        });
    }

    let mut values = Array2::zeros((sample_ids.len(), keep.len()));
    for (r, row) in grid.iter().enumerate() {
        for (new_c, &g) in keep.iter().enumerate() {
            values[[r, new_c]] = row[g].expect("kept genes are complete");
        }
    }
    let kept_ids: Vec<String> = keep.iter().map(|&g| gene_ids[g].clone()).collect();
    let report = IngestReport {
        n_samples: sample_ids.len(),
        n_genes: kept_ids.len(),
        dropped_genes,
        n_missing_cells: n_missing,
    };
    let matrix = ExpressionMatrix::new(sample_ids, kept_ids, values)?;
    Ok((matrix, report))
}

/// Write samples-as-rows CSV (the inverse of `load_expression_csv` with
/// `SamplesAsRows`).
pub fn write_expression_csv(matrix: &ExpressionMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path_str = path.as_ref().display().to_string();
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Format {
        path: path_str.clone(),
        detail: e.to_string(),
    })?;
    let mut header = vec!["sample_id".to_string()];
    header.extend(matrix.gene_ids.iter().cloned());
    w.write_record(&header).map_err(|e| Error::Format {
        path: path_str.clone(),
        detail: e.to_string(),
    })?;
    for (r, sid) in matrix.sample_ids.iter().enumerate() {
        let mut rec = vec![sid.clone()];
        rec.extend(matrix.values.row(r).iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(|e| Error::Format {
            path: path_str.clone(),
            detail: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(&path_str, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_samples_as_rows() {
        let f = write_tmp("id,g1,g2,g3\ns1,1.0,2.0,3.0\ns2,4.0,5.0,6.0\n");
        let (m, rep) = load_expression_csv(f.path(), Orientation::SamplesAsRows).unwrap();
        assert_eq!(m.sample_ids, vec!["s1", "s2"]);
        assert_eq!(m.gene_ids, vec!["g1", "g2", "g3"]);
        assert_eq!(m.values[[1, 2]], 6.0);
        assert_eq!(m.stage(), Stage::Raw);
        assert_eq!(rep.n_samples, 2);
        assert_eq!(rep.n_genes, 3);
        assert!(rep.dropped_genes.is_empty());
    }

    #[test]
    fn genes_as_rows_is_the_transpose() {
        let a = write_tmp("id,g1,g2\ns1,1.0,2.0\ns2,3.0,4.0\n");
        let b = write_tmp("id,s1,s2\ng1,1.0,3.0\ng2,2.0,4.0\n");
        let (ma, _) = load_expression_csv(a.path(), Orientation::SamplesAsRows).unwrap();
        let (mb, _) = load_expression_csv(b.path(), Orientation::GenesAsRows).unwrap();
        assert_eq!(ma.sample_ids, mb.sample_ids);
        assert_eq!(ma.gene_ids, mb.gene_ids);
        assert_eq!(ma.values, mb.values);
    }

    #[test]
    fn missing_cells_drop_the_gene_and_are_reported() {
        let f = write_tmp("id,g1,g2,g3\ns1,1.0,,3.0\ns2,4.0,5.0,NA\n");
        let (m, rep) = load_expression_csv(f.path(), Orientation::SamplesAsRows).unwrap();
        assert_eq!(m.gene_ids, vec!["g1"]);
        assert_eq!(rep.dropped_genes, vec!["g2", "g3"]);
        assert_eq!(rep.n_missing_cells, 2);
    }

    #[test]
    fn bad_cell_reports_coordinates() {
        let f = write_tmp("id,g1,g2\ns1,1.0,2.0\ns2,oops,4.0\n");
        match load_expression_csv(f.path(), Orientation::SamplesAsRows) {
            Err(Error::CsvCell { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, 2);
            }
            other => panic!("expected cell error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_structural_errors() {
        let dup = write_tmp("id,g1\ns1,1.0\ns1,2.0\n");
        assert!(matches!(
            load_expression_csv(dup.path(), Orientation::SamplesAsRows),
            Err(Error::DuplicateId { kind: "sample", .. })
        ));
        let dupg = write_tmp("id,g1,g1\ns1,1.0,2.0\n");
        assert!(matches!(
            load_expression_csv(dupg.path(), Orientation::SamplesAsRows),
            Err(Error::DuplicateId { kind: "gene", .. })
        ));
        let empty = write_tmp("");
        assert!(matches!(
            load_expression_csv(empty.path(), Orientation::SamplesAsRows),
            Err(Error::Format { .. })
        ));
        let ragged = write_tmp("id,g1,g2\ns1,1.0\n");
        assert!(load_expression_csv(ragged.path(), Orientation::SamplesAsRows).is_err());
    }

    #[test]
    fn round_trip_write_then_load() {
        let m = ExpressionMatrix::new(
            vec!["s1".into(), "s2".into()],
            vec!["g1".into(), "g2".into()],
            array![[0.5, 1.25], [2.0, 0.0]],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("expr.csv");
        write_expression_csv(&m, &p).unwrap();
        let (back, _) = load_expression_csv(&p, Orientation::SamplesAsRows).unwrap();
        assert_eq!(back.sample_ids, m.sample_ids);
        assert_eq!(back.gene_ids, m.gene_ids);
        assert_eq!(back.values, m.values);
    }

    #[test]
    fn log_transform_applies_log2_1p() {
        let m = ExpressionMatrix::new(
            vec!["s1".into()],
            vec!["g1".into(), "g2".into()],
            array![[0.0, 3.0]],
        )
        .unwrap();
        let t = m.log_transform().unwrap();
        assert_eq!(t.stage(), Stage::Logged);
        assert_relative_eq!(t.values[[0, 0]], 0.0, epsilon = 1e-15);
        assert_relative_eq!(t.values[[0, 1]], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn negative_values_fail_log_with_coordinates() {
        let m =
            ExpressionMatrix::new(vec!["s1".into()], vec!["g1".into()], array![[-0.5]]).unwrap();
        match m.log_transform() {
            Err(Error::Domain { detail, .. }) => {
                assert!(detail.contains("s1") && detail.contains("g1"), "{detail}");
            }
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn variance_selection_is_unbiased_and_tie_stable() {
        // variances: g1 = 0 (constant), g2 = 8 (n-1 denom), g3 = 8, g4 = 0.5
        let m = ExpressionMatrix::new(
            vec!["s1".into(), "s2".into()],
            vec!["g1".into(), "g2".into(), "g3".into(), "g4".into()],
            array![[5.0, 1.0, 2.0, 0.0], [5.0, 5.0, 6.0, 1.0]],
        )
        .unwrap();
        let sel = m.clone().select_top_variance_genes(2).unwrap();
        // tie between g2 and g3 resolves toward the earlier column; original
        // order is preserved
        assert_eq!(sel.gene_ids, vec!["g2", "g3"]);
        assert_eq!(sel.stage(), Stage::Selected);
        let three = m.clone().select_top_variance_genes(3).unwrap();
        assert_eq!(three.gene_ids, vec!["g2", "g3", "g4"]);
        assert!(m.clone().select_top_variance_genes(5).is_err());
        assert!(m.select_top_variance_genes(0).is_err());
    }

    #[test]
    fn pipeline_refuses_out_of_order_steps() {
        let m = ExpressionMatrix::new(
            vec!["s1".into(), "s2".into()],
            vec!["g1".into(), "g2".into()],
            array![[1.0, 2.0], [3.0, 4.0]],
        )
        .unwrap();
        let logged = m.clone().log_transform().unwrap();
        assert!(matches!(
            logged.clone().select_top_variance_genes(1),
            Err(Error::OutOfOrder { .. })
        ));
        assert!(matches!(
            logged.clone().normalize_to_reference(&m),
            Err(Error::OutOfOrder { .. })
        ));
        assert!(matches!(
            logged.log_transform(),
            Err(Error::OutOfOrder { .. })
        ));
        let selected = m.clone().select_top_variance_genes(1).unwrap();
        assert!(matches!(
            selected.normalize_to_reference(&m),
            Err(Error::OutOfOrder { .. })
        ));
    }

    fn housekeeping_matrix(scale: f64, n_samples: usize) -> ExpressionMatrix {
        let mut gene_ids: Vec<String> = HOUSEKEEPING_GENES.iter().map(|s| s.to_string()).collect();
        gene_ids.push("other".into());
        let mut values = Array2::zeros((n_samples, gene_ids.len()));
        for r in 0..n_samples {
            for c in 0..gene_ids.len() {
                values[[r, c]] = scale * (1.0 + c as f64 + r as f64);
            }
        }
        ExpressionMatrix::new(
            (0..n_samples).map(|i| format!("s{i}")).collect(),
            gene_ids,
            values,
        )
        .unwrap()
    }

    #[test]
    fn normalization_matches_pooled_housekeeping_means() {
        let target = housekeeping_matrix(1.0, 3);
        let cohort = housekeeping_matrix(4.0, 2);
        let before = cohort.values.clone();
        let normalized = cohort.normalize_to_reference(&target).unwrap();
        assert_eq!(normalized.stage(), Stage::Normalized);
        // pooled housekeeping means now agree
        let e_t = target.pooled_housekeeping_mean("t").unwrap();
        let e_n = normalized.pooled_housekeeping_mean("n").unwrap();
        assert_relative_eq!(e_t, e_n, max_relative = 1e-12);
        // and the rescaling was a single global factor
        let factor = normalized.values[[0, 0]] / before[[0, 0]];
        for (a, b) in normalized.values.iter().zip(before.iter()) {
            assert_relative_eq!(a / b, factor, max_relative = 1e-12);
        }
    }

    #[test]
    fn missing_housekeeping_genes_are_listed() {
        let target = housekeeping_matrix(1.0, 2);
        let cohort = ExpressionMatrix::new(
            vec!["s1".into()],
            vec!["GPI".into(), "VCP".into()],
            array![[1.0, 2.0]],
        )
        .unwrap();
        match cohort.normalize_to_reference(&target) {
            Err(Error::MissingHousekeeping { which, genes }) => {
                assert_eq!(which, "this cohort");
                assert_eq!(genes.len(), 8);
                assert!(genes.contains(&"C1orf43".to_string()));
            }
            other => panic!("expected missing housekeeping error, got {other:?}"),
        }
    }
}
