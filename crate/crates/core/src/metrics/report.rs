use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::km::KmCurve;

/// Everything one evaluation run produces, plus enough bookkeeping to audit
/// split hygiene afterwards (the id lists record exactly which samples were
/// fitted on and scored).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub repeat: usize,
    pub fold: usize,
    pub seed: u64,
    pub c_index: f64,
    pub ibs: f64,
    pub ibs_horizon: f64,
    pub stratification_p: f64,
    pub km_high: KmCurve,
    pub km_low: KmCurve,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl MetricsReport {
    /// All metric fields must be finite; a NaN that sneaks into an archive
    /// poisons every downstream comparison silently, so refuse it here.
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("c_index", self.c_index),
            ("ibs", self.ibs),
            ("ibs_horizon", self.ibs_horizon),
            ("stratification_p", self.stratification_p),
        ];
        for (name, v) in checks {
            if !v.is_finite() {
                return Err(Error::UndefinedMetric {
                    detail: format!("report field {name} is not finite ({v})"),
                });
            }
        }
        if !(0.0..=1.0).contains(&self.c_index) {
            return Err(Error::UndefinedMetric {
                detail: format!("c_index {} outside [0, 1]", self.c_index),
            });
        }
        if !(0.0..=1.0).contains(&self.stratification_p) {
            return Err(Error::UndefinedMetric {
                detail: format!("stratification_p {} outside [0, 1]", self.stratification_p),
            });
        }
        Ok(())
    }
}
