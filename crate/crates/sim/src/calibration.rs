//! Threshold calibration from logged `vad` values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vbfl_core::validation::{percentile, suggest_threshold, VadRecord};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: suggested_vh {value} is not a usable threshold")]
    BadThreshold { path: String, value: f64 },
}

/// Contents of `calibration.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Midpoint of `legit_p90` and `malicious_p10`.
    pub suggested_vh: f64,
    pub legit_p90: f64,
    pub malicious_p10: f64,
    pub legit_median: f64,
    pub malicious_median: f64,
    pub legit_records: usize,
    pub malicious_records: usize,
}

impl Calibration {
    /// `None` unless both legitimate and malicious records are present.
    pub fn from_records(records: &[VadRecord]) -> Option<Self> {
        let suggested_vh = suggest_threshold(records)?;
        let legit: Vec<f64> = records.iter().filter(|r| !r.worker_malicious).map(|r| r.vad).collect();
        let mal: Vec<f64> = records.iter().filter(|r| r.worker_malicious).map(|r| r.vad).collect();
        Some(Calibration {
            suggested_vh,
            legit_p90: percentile(&legit, 0.9)?,
            malicious_p10: percentile(&mal, 0.1)?,
            legit_median: percentile(&legit, 0.5)?,
            malicious_median: percentile(&mal, 0.5)?,
            legit_records: legit.len(),
            malicious_records: mal.len(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| CalibrationError::Io {
            path: p.clone(),
            source,
        })?;
        let cal: Calibration = serde_json::from_str(&text).map_err(|source| CalibrationError::Json {
            path: p.clone(),
            source,
        })?;
        if !cal.suggested_vh.is_finite() || !(-1.0..=1.0).contains(&cal.suggested_vh) {
            return Err(CalibrationError::BadThreshold {
                path: p,
                value: cal.suggested_vh,
            });
        }
        Ok(cal)
    }
}
