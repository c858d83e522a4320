//! Level-2 detection: technical detectors behind a common contract and
//! aggregation of human verdicts.

mod cosign;
mod residue;
mod simulated;
mod subprocess;
mod technical;
mod trusted;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ContentItem, GroundTruth};

pub use cosign::{
    collective_sign, verify_cosign, CoSignError, CoSignature, CoSigner, VerdictSummary,
};
pub use residue::{ResidueDetector, TAMPER_CONFIDENCE};
pub use simulated::SimulatedDetector;
pub use subprocess::SubprocessDetector;
pub use technical::{
    run_technical, DetectorFailure, TechnicalError, TechnicalPolicy, TechnicalResult,
};
pub use trusted::{
    aggregate_trusted, update_reputation, DropReason, DroppedVerdict, Judgment, RegistryError,
    TrustedAggregate, TrustedPolicy, TrustedVerdict, VerifierKind, VerifierProfile,
    VerifierRegistry, DEFAULT_ETA,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorVerdict {
    pub detector_id: String,
    pub confidence_fake: f64,
    #[serde(default)]
    pub features: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub latency_ms: f64,
}

impl DetectorVerdict {
    pub fn new(detector_id: impl Into<String>, confidence_fake: f64) -> Self {
        Self {
            detector_id: detector_id.into(),
            confidence_fake,
            features: BTreeMap::new(),
            latency_ms: 0.0,
        }
    }

    pub fn with_feature(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.features.insert(key.to_owned(), value.into());
        self
    }

    pub fn is_well_formed(&self) -> bool {
        (0.0..=1.0).contains(&self.confidence_fake)
            && self.latency_ms.is_finite()
            && self.latency_ms >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("item has no ground truth")]
    MissingGroundTruth,
    #[error("detector failed: {0}")]
    Failed(String),
    #[error("detector exceeded its {budget_ms} ms budget")]
    Timeout { budget_ms: f64 },
    #[error("detector emitted an invalid verdict: {0}")]
    InvalidVerdict(String),
}

/// A technical detector. Implementations must be deterministic for a given
/// item when replay is required.
pub trait Detector: Send + Sync {
    fn id(&self) -> &str;

    fn detect(
        &self,
        item: &ContentItem,
        truth: Option<GroundTruth>,
    ) -> Result<DetectorVerdict, DetectorError>;
}
