use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Detector, DetectorError, DetectorVerdict};
use crate::model::{ContentItem, GroundTruth};
use crate::scoring::Signal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechnicalPolicy {
    /// Aggregated fake confidence at or above this binarizes to 0.
    #[serde(default = "default_theta")]
    pub theta_tech: f64,
    /// Per-detector weight; detectors not listed weigh 1.
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
    #[serde(default = "default_budget")]
    pub budget_ms: f64,
}

fn default_theta() -> f64 {
    0.5
}

fn default_budget() -> f64 {
    200.0
}

impl Default for TechnicalPolicy {
    fn default() -> Self {
        Self {
            theta_tech: default_theta(),
            weights: BTreeMap::new(),
            budget_ms: default_budget(),
        }
    }
}

impl TechnicalPolicy {
    pub fn weight(&self, detector_id: &str) -> f64 {
        self.weights.get(detector_id).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.theta_tech) {
            return Err(format!("theta_tech {} outside [0, 1]", self.theta_tech));
        }
        if self.weights.values().any(|w| !w.is_finite() || *w < 0.0) {
            return Err("detector weights must be finite and non-negative".into());
        }
        if self.budget_ms.is_nan() || self.budget_ms <= 0.0 {
            return Err("detector budget must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorFailure {
    pub detector_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechnicalResult {
    pub v_t: Signal,
    /// Weighted mean fake confidence over the detectors that succeeded.
    pub confidence: Option<f64>,
    pub verdicts: Vec<DetectorVerdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<DetectorFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TechnicalError {
    #[error("no detectors registered")]
    NoDetectors,
}

/// Runs every detector and binarizes the weighted mean confidence. Failed,
/// malformed or over-budget verdicts are excluded; if nothing usable
/// remains the result is indeterminate.
pub fn run_technical(
    item: &ContentItem,
    truth: Option<GroundTruth>,
    detectors: &[&dyn Detector],
    policy: &TechnicalPolicy,
) -> Result<TechnicalResult, TechnicalError> {
    if detectors.is_empty() {
        return Err(TechnicalError::NoDetectors);
    }
    let mut verdicts = Vec::new();
    let mut failures = Vec::new();
    for d in detectors {
        let outcome = d.detect(item, truth).and_then(|v| {
            if !v.is_well_formed() {
                Err(DetectorError::InvalidVerdict(format!(
                    "confidence {}",
                    v.confidence_fake
                )))
            } else if v.latency_ms > policy.budget_ms {
                Err(DetectorError::Timeout {
                    budget_ms: policy.budget_ms,
                })
            } else {
                Ok(v)
            }
        });
        match outcome {
            Ok(v) => verdicts.push(v),
            Err(e) => {
                log::warn!("detector {} failed on {}: {e}", d.id(), item.id);
                failures.push(DetectorFailure {
                    detector_id: d.id().to_owned(),
                    reason: e.to_string(),
                });
            }
        }
    }
    let confidence = weighted_mean(&verdicts, policy);
    let v_t = match confidence {
        None => Signal::Indeterminate,
        Some(c) => Signal::from_bool(c < policy.theta_tech),
    };
    Ok(TechnicalResult {
        v_t,
        confidence,
        verdicts,
        failures,
    })
}

/// Summed in detector-id order so the result does not depend on the order
/// detectors were registered in.
fn weighted_mean(verdicts: &[DetectorVerdict], policy: &TechnicalPolicy) -> Option<f64> {
    let mut sorted: Vec<&DetectorVerdict> = verdicts.iter().collect();
    sorted.sort_by(|a, b| a.detector_id.cmp(&b.detector_id));
    let (mut num, mut den) = (0.0, 0.0);
    for v in sorted {
        let w = policy.weight(&v.detector_id);
        num += w * v.confidence_fake;
        den += w;
    }
    (den > 0.0).then(|| (num / den).clamp(0.0, 1.0))
}
