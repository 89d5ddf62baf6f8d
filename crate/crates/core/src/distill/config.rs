use serde::{Deserialize, Serialize};

use super::loss::check_kd_params;
use crate::error::{Error, Result};

/// Knobs of the two training phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub temperature: f64,
    pub alpha: f64,
    pub lr_teacher: f64,
    pub lr_student: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs_teacher: usize,
    pub epochs_student: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            temperature: 2.0,
            alpha: 0.1,
            lr_teacher: 1e-4,
            lr_student: 1e-4,
            weight_decay: 1e-3,
            batch_size: 16,
            epochs_teacher: 300,
            epochs_student: 300,
            patience: 10,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        check_kd_params(self.temperature, self.alpha).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, lr) in [("lr_teacher", self.lr_teacher), ("lr_student", self.lr_student)] {
            if !(lr > 0.0) || !lr.is_finite() {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        Ok(())
    }
}
