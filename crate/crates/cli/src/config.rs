//! Job configuration files: one TOML document covering the split, the
//! trainer, the hyperparameter grid and the synthetic generator, plus the
//! command-line flags that override it.

use std::path::Path;

use coxmt::data::{SplitOptions, SynthConfig};
use coxmt::experiment::{GridPoint, ProtocolConfig, TrainConfig};
use coxmt::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

/// Everything a run can configure from a file. Unknown keys are rejected so
/// a typo fails loudly instead of silently keeping the default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobConfig {
    pub version: u32,
    /// Worker thread cap for fold jobs; 0 keeps the scheduler default.
    pub threads: usize,
    pub split: SplitOptions,
    pub train: TrainConfig,
    /// Per-fold hyperparameter grid; empty means "train the base config".
    pub grid: Vec<GridPoint>,
    /// Defaults for the `synth` subcommand.
    pub synth: SynthConfig,
}

impl Default for JobConfig {
    fn default() -> JobConfig {
        let p = ProtocolConfig::default();
        JobConfig {
            version: CONFIG_VERSION,
            threads: p.threads,
            split: p.split,
            train: p.train,
            grid: p.grid,
            synth: SynthConfig::default(),
        }
    }
}

impl JobConfig {
    pub fn load(path: &Path) -> Result<JobConfig> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: JobConfig =
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "{}: config version {} not supported (this build reads version {})",
                path.display(),
                cfg.version,
                CONFIG_VERSION
            )));
        }
        Ok(cfg)
    }

    /// Load the file if one was given, otherwise start from defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<JobConfig> {
        match path {
            Some(p) => JobConfig::load(p),
            None => Ok(JobConfig::default()),
        }
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            split: self.split,
            train: self.train.clone(),
            grid: self.grid.clone(),
            threads: self.threads,
        }
    }
}

/// Trainer flags layered on top of the config file; a flag always wins.
#[derive(clap::Args, Debug, Clone)]
pub struct TrainOverrides {
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,

    /// Standard deviation of the Gaussian input perturbation.
    #[arg(long)]
    pub noise_sigma: Option<f64>,

    /// Dropout probability on hidden layers.
    #[arg(long)]
    pub dropout: Option<f64>,

    /// Weight on the consistency term; 0 trains the supervised baseline.
    #[arg(long)]
    pub consistency_weight: Option<f64>,

    /// Teacher EMA decay.
    #[arg(long)]
    pub ema_alpha: Option<f64>,

    /// Hidden layer widths, comma separated (e.g. 64,32).
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,

    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,

    /// Base seed; every random stream is derived from it.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Evaluate with the student network instead of the teacher.
    #[arg(long)]
    pub eval_student: bool,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.noise_sigma {
            cfg.noise_sigma = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout = v;
        }
        if let Some(v) = self.consistency_weight {
            cfg.consistency_weight = v;
        }
        if let Some(v) = self.ema_alpha {
            cfg.ema_alpha = v;
        }
        if let Some(ref v) = self.hidden {
            cfg.hidden = v.clone();
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if self.eval_student {
            cfg.eval_student = true;
        }
    }
}

/// Cross-validation flags layered on top of the config file.
#[derive(clap::Args, Debug, Clone)]
pub struct SplitOverrides {
    /// Number of folds.
    #[arg(long)]
    pub folds: Option<usize>,

    /// Protocol repeats (independent fold shuffles).
    #[arg(long)]
    pub repeats: Option<usize>,

    /// Share of non-test labeled samples held out for validation.
    #[arg(long)]
    pub val_fraction: Option<f64>,

    /// Fold shuffle seed.
    #[arg(long)]
    pub split_seed: Option<u64>,

    /// Worker thread cap (0 = scheduler default).
    #[arg(long)]
    pub threads: Option<usize>,
}

impl SplitOverrides {
    pub fn apply(&self, cfg: &mut JobConfig) {
        if let Some(v) = self.folds {
            cfg.split.k = v;
        }
        if let Some(v) = self.repeats {
            cfg.split.repeats = v;
        }
        if let Some(v) = self.val_fraction {
            cfg.split.val_fraction = v;
        }
        if let Some(v) = self.split_seed {
            cfg.split.seed = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
    }
}
