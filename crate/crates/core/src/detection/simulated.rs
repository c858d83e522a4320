use serde::{Deserialize, Serialize};

use super::{Detector, DetectorError, DetectorVerdict};
use crate::model::{ContentItem, GroundTruth};
use crate::prng::{derive_seed, SplitMix64};

/// A detection channel with fixed error rates: fires on deepfakes with
/// probability `tpr` and on real content with probability `fpr`.
///
/// The draw for an item depends only on `(seed, item id)`, so verdicts do
/// not depend on processing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedDetector {
    #[serde(default = "default_id")]
    pub id: String,
    pub tpr: f64,
    pub fpr: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_latency")]
    pub latency_ms: f64,
}

fn default_id() -> String {
    "simulated".into()
}

fn default_latency() -> f64 {
    1.0
}

impl SimulatedDetector {
    /// Requires `0 <= fpr <= tpr <= 1`.
    pub fn new(tpr: f64, fpr: f64, seed: u64) -> Result<Self, String> {
        let d = Self {
            id: default_id(),
            tpr,
            fpr,
            seed,
            latency_ms: default_latency(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 <= self.fpr && self.fpr <= self.tpr && self.tpr <= 1.0) {
            return Err(format!(
                "need 0 <= fpr <= tpr <= 1, got tpr={} fpr={}",
                self.tpr, self.fpr
            ));
        }
        Ok(())
    }

    pub fn fires(&self, item_id: &str, truth: GroundTruth) -> bool {
        let mut g = SplitMix64::new(derive_seed(self.seed, item_id.as_bytes()));
        let u = (g.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        u < if truth.is_deepfake {
            self.tpr
        } else {
            self.fpr
        }
    }
}

impl Detector for SimulatedDetector {
    fn id(&self) -> &str {
        &self.id
    }

    fn detect(
        &self,
        item: &ContentItem,
        truth: Option<GroundTruth>,
    ) -> Result<DetectorVerdict, DetectorError> {
        let truth = truth.ok_or(DetectorError::MissingGroundTruth)?;
        let c = if self.fires(&item.id, truth) {
            1.0
        } else {
            0.0
        };
        Ok(DetectorVerdict {
            latency_ms: self.latency_ms,
            ..DetectorVerdict::new(self.id.clone(), c)
        })
    }
}
