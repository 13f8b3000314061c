//! One handler per subcommand. Handlers only orchestrate library calls and
//! file layout; all numerics live in the `coxmt` crate.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use coxmt::data::{
    assemble_dataset, carve_validation, generate_synthetic, load_clinical_csv, load_dataset,
    load_expression_csv, save_dataset, Orientation,
};
use coxmt::experiment::{
    ablate, compare_c_indices, run_protocol, train_cox_mt, unlabeled_scaling_study, AblationArm,
};
use coxmt::metrics::MetricsReport;
use coxmt::model::{save_checkpoint, Model};
use coxmt::{Error, Result};
use serde::Serialize;

use crate::config::{JobConfig, SplitOverrides, TrainOverrides};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_reports(path: &Path) -> Result<Vec<MetricsReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrientationArg {
    /// One row per gene, one column per sample.
    GenesRows,
    /// One row per sample, one column per gene.
    SamplesRows,
}

impl From<OrientationArg> for Orientation {
    fn from(v: OrientationArg) -> Orientation {
        match v {
            OrientationArg::GenesRows => Orientation::GenesAsRows,
            OrientationArg::SamplesRows => Orientation::SamplesAsRows,
        }
    }
}

#[derive(clap::Args, Debug)]
pub struct IngestArgs {
    /// Expression CSV (first cell blank, then ids; see --orientation).
    #[arg(long)]
    pub expression: PathBuf,

    /// Clinical CSV with sample_id, time and status (1 = event) columns.
    #[arg(long)]
    pub clinical: PathBuf,

    /// Output dataset archive (JSON).
    #[arg(long)]
    pub out: PathBuf,

    /// How the expression matrix is laid out on disk.
    #[arg(long, value_enum, default_value_t = OrientationArg::GenesRows)]
    pub orientation: OrientationArg,

    /// Reference cohort CSV; anchors housekeeping-gene normalization.
    #[arg(long)]
    pub reference: Option<PathBuf>,

    /// Keep only the k highest-variance genes.
    #[arg(long)]
    pub top_genes: Option<usize>,

    /// Apply log2(1 + x) after normalization and selection.
    #[arg(long)]
    pub log2: bool,

    /// Write a JSON report of what ingestion dropped and joined.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    let orientation: Orientation = a.orientation.into();
    let (mut matrix, ingest_report) = load_expression_csv(&a.expression, orientation)?;
    if let Some(ref_path) = &a.reference {
        let (reference, _) = load_expression_csv(ref_path, orientation)?;
        matrix = matrix.normalize_to_reference(&reference)?;
    }
    if let Some(k) = a.top_genes {
        matrix = matrix.select_top_variance_genes(k)?;
    }
    if a.log2 {
        matrix = matrix.log_transform()?;
    }
    let clinical = load_clinical_csv(&a.clinical)?;
    let (ds, join) = assemble_dataset(&matrix, &clinical)?;
    save_dataset(&ds, &a.out)?;
    println!(
        "ingested {} samples x {} features -> {}",
        ds.n(),
        ds.dim(),
        a.out.display()
    );
    println!(
        "  {} events, {} censored, {} unlabeled; {} genes dropped, {} clinical rows unmatched",
        join.n_events,
        join.n_censored,
        join.n_unlabeled,
        ingest_report.dropped_genes.len(),
        join.unmatched_clinical.len()
    );
    if let Some(report_path) = &a.report {
        write_json(
            report_path,
            &serde_json::json!({ "ingest": ingest_report, "join": join }),
        )?;
    }
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct SynthArgs {
    /// Output dataset archive (JSON).
    #[arg(long)]
    pub out: PathBuf,

    /// Also write the generating coefficients here (JSON).
    #[arg(long)]
    pub truth: Option<PathBuf>,

    /// Job config file providing a [synth] section.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Cohort size.
    #[arg(long)]
    pub n: Option<usize>,

    /// Feature count.
    #[arg(long)]
    pub dim: Option<usize>,

    /// Fraction of coordinates with nonzero coefficients.
    #[arg(long)]
    pub sparsity: Option<f64>,

    /// Baseline exponential hazard rate.
    #[arg(long)]
    pub baseline_rate: Option<f64>,

    /// Target expected censored share.
    #[arg(long)]
    pub censor_fraction: Option<f64>,

    /// Share of samples stripped of labels into the unlabeled pool.
    #[arg(long)]
    pub unlabeled_fraction: Option<f64>,

    /// Generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = JobConfig::load_or_default(a.config.as_deref())?.synth;
    if let Some(v) = a.n {
        cfg.n_samples = v;
    }
    if let Some(v) = a.dim {
        cfg.dim = v;
    }
    if let Some(v) = a.sparsity {
        cfg.beta_sparsity = v;
    }
    if let Some(v) = a.baseline_rate {
        cfg.baseline_rate = v;
    }
    if let Some(v) = a.censor_fraction {
        cfg.censor_fraction = v;
    }
    if let Some(v) = a.unlabeled_fraction {
        cfg.unlabeled_fraction = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let (ds, truth) = generate_synthetic(&cfg)?;
    save_dataset(&ds, &a.out)?;
    println!(
        "generated {} samples x {} features (seed {}) -> {}",
        ds.n(),
        ds.dim(),
        cfg.seed,
        a.out.display()
    );
    println!(
        "  {} events, {} censored, {} unlabeled",
        ds.event_indices().len(),
        ds.censored_indices().len(),
        ds.unlabeled_indices().len()
    );
    if let Some(truth_path) = &a.truth {
        write_json(truth_path, &truth)?;
    }
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    /// Dataset archive to fit.
    #[arg(long)]
    pub data: PathBuf,

    /// Output directory for checkpoints, the epoch trace and a summary.
    #[arg(long)]
    pub out_dir: PathBuf,

    /// Job config file.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Validation share carved off for early stopping; 0 disables.
    #[arg(long)]
    pub val_fraction: Option<f64>,

    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    n_train: usize,
    n_val: usize,
    epochs_run: usize,
    best_epoch: usize,
    best_val_c_index: Option<f64>,
    eval_network: &'static str,
    config: &'a coxmt::experiment::TrainConfig,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let job = JobConfig::load_or_default(a.config.as_deref())?;
    let mut cfg = job.train.clone();
    a.overrides.apply(&mut cfg);
    let val_fraction = a.val_fraction.unwrap_or(job.split.val_fraction);
    let (train_idx, val_idx) = if val_fraction > 0.0 {
        carve_validation(&ds, val_fraction, cfg.seed)?
    } else {
        ((0..ds.n()).collect(), Vec::new())
    };

    let model = train_cox_mt(&ds, &train_idx, &val_idx, &cfg)?;

    ensure_dir(&a.out_dir)?;
    save_checkpoint(a.out_dir.join("student.ckpt"), &model.pair.student.params())?;
    save_checkpoint(a.out_dir.join("teacher.ckpt"), &model.pair.teacher.params())?;
    write_json(&a.out_dir.join("trace.json"), &model.trace)?;
    let eval_network = if cfg.eval_student || cfg.consistency_weight == 0.0 {
        "student"
    } else {
        "teacher"
    };
    let summary = TrainSummary {
        n_train: train_idx.len(),
        n_val: val_idx.len(),
        epochs_run: model.trace.len(),
        best_epoch: model.best_epoch,
        best_val_c_index: model.best_val_c,
        eval_network,
        config: &model.config,
    };
    write_json(&a.out_dir.join("train_summary.json"), &summary)?;

    println!(
        "trained on {} samples ({} validation) for {} epochs -> {}",
        train_idx.len(),
        val_idx.len(),
        model.trace.len(),
        a.out_dir.display()
    );
    match model.best_val_c {
        Some(c) => println!(
            "  best validation c-index {:.4} at epoch {} ({} network saved for scoring)",
            c, model.best_epoch, eval_network
        ),
        None => println!("  no validation split; kept the final epoch"),
    }
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct ProtocolArgs {
    /// Dataset archive.
    #[arg(long)]
    pub data: PathBuf,

    /// Output directory for reports.json, outcomes.json and summary.json.
    #[arg(long)]
    pub out_dir: PathBuf,

    /// Job config file.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub split: SplitOverrides,

    #[command(flatten)]
    pub overrides: TrainOverrides,
}

fn effective_protocol(
    config: Option<&Path>,
    split: &SplitOverrides,
    overrides: &TrainOverrides,
) -> Result<coxmt::experiment::ProtocolConfig> {
    let mut job = JobConfig::load_or_default(config)?;
    split.apply(&mut job);
    overrides.apply(&mut job.train);
    Ok(job.protocol())
}

fn print_summary(s: &coxmt::experiment::ProtocolSummary) {
    println!(
        "{} runs: c-index mean {:.4} (sd {:.4}), median {:.4}",
        s.n_runs, s.mean_c_index, s.std_c_index, s.median_c_index
    );
    println!(
        "  integrated Brier mean {:.4}, median {:.4} (horizon mean {:.3})",
        s.mean_ibs, s.median_ibs, s.mean_ibs_horizon
    );
    println!(
        "  risk stratification significant in {}/{} runs",
        s.significant_stratifications, s.n_runs
    );
}

pub fn protocol(a: ProtocolArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let cfg = effective_protocol(a.config.as_deref(), &a.split, &a.overrides)?;
    let result = run_protocol(&ds, &cfg)?;

    ensure_dir(&a.out_dir)?;
    write_json(&a.out_dir.join("reports.json"), &result.reports())?;
    write_json(&a.out_dir.join("outcomes.json"), &result.outcomes)?;
    let summary = result.summary();
    write_json(&a.out_dir.join("summary.json"), &summary)?;

    print_summary(&summary);
    println!("  wrote {}", a.out_dir.join("reports.json").display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArmArg {
    Full,
    NoConsistency,
    NoNoise,
    NoDropout,
    NoEma,
}

impl From<ArmArg> for AblationArm {
    fn from(v: ArmArg) -> AblationArm {
        match v {
            ArmArg::Full => AblationArm::Full,
            ArmArg::NoConsistency => AblationArm::NoConsistency,
            ArmArg::NoNoise => AblationArm::NoNoise,
            ArmArg::NoDropout => AblationArm::NoDropout,
            ArmArg::NoEma => AblationArm::NoEma,
        }
    }
}

#[derive(clap::Args, Debug)]
pub struct AblateArgs {
    /// Dataset archive.
    #[arg(long)]
    pub data: PathBuf,

    /// Output directory for ablation.json.
    #[arg(long)]
    pub out_dir: PathBuf,

    /// Job config file.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Arms to run, comma separated; defaults to all of them.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub arms: Vec<ArmArg>,

    #[command(flatten)]
    pub split: SplitOverrides,

    #[command(flatten)]
    pub overrides: TrainOverrides,
}

pub fn do_ablate(a: AblateArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let cfg = effective_protocol(a.config.as_deref(), &a.split, &a.overrides)?;
    let arms: Vec<AblationArm> = if a.arms.is_empty() {
        AblationArm::ALL.to_vec()
    } else {
        a.arms.iter().map(|&x| x.into()).collect()
    };
    let outcomes = ablate(&ds, &cfg, &arms)?;

    ensure_dir(&a.out_dir)?;
    write_json(&a.out_dir.join("ablation.json"), &outcomes)?;

    for o in &outcomes {
        match &o.wilcoxon_vs_full {
            Some(w) => println!(
                "{:16} c-index mean {:.4} (sd {:.4}); vs full p = {:.3e}",
                o.arm, o.summary.mean_c_index, o.summary.std_c_index, w.p
            ),
            None => println!(
                "{:16} c-index mean {:.4} (sd {:.4})",
                o.arm, o.summary.mean_c_index, o.summary.std_c_index
            ),
        }
    }
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct ScalingArgs {
    /// Dataset archive; its unlabeled pool is subset to each size.
    #[arg(long)]
    pub data: PathBuf,

    /// Output directory for scaling.json.
    #[arg(long)]
    pub out_dir: PathBuf,

    /// Job config file.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Unlabeled pool sizes, comma separated (e.g. 0,500,1000).
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,

    #[command(flatten)]
    pub split: SplitOverrides,

    #[command(flatten)]
    pub overrides: TrainOverrides,
}

pub fn scaling(a: ScalingArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let cfg = effective_protocol(a.config.as_deref(), &a.split, &a.overrides)?;
    let points = unlabeled_scaling_study(&ds, &cfg, &a.sizes)?;

    ensure_dir(&a.out_dir)?;
    write_json(&a.out_dir.join("scaling.json"), &points)?;

    for p in &points {
        println!(
            "unlabeled {:6}: c-index mean {:.4} (sd {:.4}), median {:.4}",
            p.n_unlabeled, p.summary.mean_c_index, p.summary.std_c_index, p.summary.median_c_index
        );
    }
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct CompareArgs {
    /// First reports archive (reports.json from `protocol`).
    #[arg(long)]
    pub a: PathBuf,

    /// Second reports archive.
    #[arg(long)]
    pub b: PathBuf,

    /// Optional JSON output for the comparison.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn compare(args: CompareArgs) -> Result<()> {
    let ra = read_reports(&args.a)?;
    let rb = read_reports(&args.b)?;
    let ca: Vec<f64> = ra.iter().map(|r| r.c_index).collect();
    let cb: Vec<f64> = rb.iter().map(|r| r.c_index).collect();
    let cmp = compare_c_indices(&ca, &cb)?;

    println!(
        "A: {} runs, median c-index {:.4} ({})",
        ca.len(),
        cmp.median_a,
        args.a.display()
    );
    println!(
        "B: {} runs, median c-index {:.4} ({})",
        cb.len(),
        cmp.median_b,
        args.b.display()
    );
    println!(
        "rank-sum: U = {:.1}, z = {:.3}, p = {:.3e} ({} at 0.05)",
        cmp.wilcoxon.u,
        cmp.wilcoxon.z,
        cmp.wilcoxon.p,
        if cmp.wilcoxon.p < 0.05 {
            "significant"
        } else {
            "not significant"
        }
    );
    if let Some(out) = &args.out {
        write_json(out, &cmp)?;
    }
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct KmExportArgs {
    /// Reports archive produced by `protocol`.
    #[arg(long)]
    pub reports: PathBuf,

    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn km_export(a: KmExportArgs) -> Result<()> {
    let reports = read_reports(&a.reports)?;
    let mut csv = String::from("repeat,fold,arm,time,survival,at_risk,events\n");
    let mut rows = 0usize;
    for r in &reports {
        for (arm, curve) in [("high", &r.km_high), ("low", &r.km_low)] {
            for i in 0..curve.times.len() {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    r.repeat,
                    r.fold,
                    arm,
                    curve.times[i],
                    curve.survival[i],
                    curve.at_risk[i],
                    curve.events[i]
                );
                rows += 1;
            }
        }
    }
    fs::write(&a.out, csv).map_err(|e| Error::io(a.out.display().to_string(), e))?;
    println!(
        "wrote {} curve rows from {} runs -> {}",
        rows,
        reports.len(),
        a.out.display()
    );
    Ok(())
}
