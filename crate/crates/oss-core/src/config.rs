//! Run configuration: one self-describing JSON file drives every command.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{OssError, Result};
use crate::field::ProviderSpec;
use crate::schedule::NoiseSchedule;
use crate::search::CostMetric;
use crate::solver::MAX_ORDER;

fn default_order() -> usize {
    1
}
fn default_metric() -> CostMetric {
    CostMetric::XtMse
}
fn default_samples() -> usize {
    1
}
fn default_peak() -> f64 {
    2.0
}
fn default_calib_samples() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    #[serde(default = "default_calib_samples")]
    pub samples: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            samples: default_calib_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub provider: ProviderSpec,
    #[serde(default)]
    pub schedule: NoiseSchedule,
    pub teacher_steps: usize,
    pub student_steps: usize,
    #[serde(default = "default_order")]
    pub solver_order: usize,
    #[serde(default = "default_metric")]
    pub metric: CostMetric,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub average: bool,
    #[serde(default)]
    pub calibration: Option<CalibrationConfig>,
    #[serde(default = "default_peak")]
    pub psnr_peak: f64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            OssError::invalid(format!(
                "config parse error at line {}, column {}: {e}",
                e.line(),
                e.column()
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            OssError::InvalidArgument(msg) => {
                OssError::invalid(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.teacher_steps == 0 {
            return Err(OssError::invalid("teacher_steps must be >= 1"));
        }
        if self.student_steps == 0 || self.student_steps > self.teacher_steps {
            return Err(OssError::invalid(format!(
                "student_steps must lie in 1..=teacher_steps, got {} with N={}",
                self.student_steps, self.teacher_steps
            )));
        }
        if self.solver_order == 0 || self.solver_order > MAX_ORDER {
            return Err(OssError::invalid(format!(
                "solver_order must lie in 1..={MAX_ORDER}, got {}",
                self.solver_order
            )));
        }
        if self.samples == 0 {
            return Err(OssError::invalid("samples must be >= 1"));
        }
        if !(self.psnr_peak > 0.0) {
            return Err(OssError::invalid(format!(
                "psnr_peak must be > 0, got {}",
                self.psnr_peak
            )));
        }
        if self.provider.dim() == 0 {
            return Err(OssError::invalid("provider dimension must be >= 1"));
        }
        Ok(())
    }

    /// Hash of the canonicalized (key-sorted) config JSON.
    pub fn fingerprint(&self) -> String {
        hash_value(&serde_json::to_value(self).expect("config serializes"))
    }

    /// Fingerprint over the fields that pin the teacher: provider, schedule,
    /// teacher_steps, solver_order. Schedules produced under one teacher
    /// refuse to run under another.
    pub fn teacher_fingerprint(&self) -> String {
        hash_value(&serde_json::json!({
            "provider": self.provider,
            "schedule": self.schedule,
            "teacher_steps": self.teacher_steps,
            "solver_order": self.solver_order,
        }))
    }
}

fn hash_value(value: &serde_json::Value) -> String {
    // serde_json maps are key-sorted, so this string is canonical.
    let canonical = serde_json::to_string(value).expect("value serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
