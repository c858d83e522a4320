use super::{Detector, DetectorError, DetectorVerdict};
use crate::marker::{extract_markers, ExtractError};
use crate::model::{content_hash, ContentItem, GroundTruth, Modality};
use crate::watermark::{detect_frequency, detect_statistical, BLOCK, MIN_PIXELS};

/// Confidence reported when the marker block itself is evidence of tampering.
pub const TAMPER_CONFIDENCE: f64 = 0.9;

/// Reference detector: looks for keyed watermark residue under known
/// generator keys and for marker blocks that do not hold together.
#[derive(Debug, Clone)]
pub struct ResidueDetector {
    id: String,
    keys: Vec<u64>,
    latency_ms: f64,
}

impl ResidueDetector {
    pub fn new(keys: impl IntoIterator<Item = u64>) -> Self {
        Self {
            id: "residue".into(),
            keys: keys.into_iter().collect(),
            latency_ms: 1.0,
        }
    }

    pub fn with_latency(mut self, latency_ms: f64) -> Self {
        self.latency_ms = latency_ms;
        self
    }

    pub fn keys(&self) -> &[u64] {
        &self.keys
    }

    fn tamper_reason(item: &ContentItem) -> Option<&'static str> {
        match extract_markers(item) {
            Err(ExtractError::NoMarkerFound) => {
                item.marker_block.as_ref().map(|_| "foreign_marker_block")
            }
            Err(ExtractError::MalformedMarkerBlock(_)) => Some("malformed_marker_block"),
            Ok(markers) => {
                let digest = content_hash(item).ok();
                if markers
                    .iter()
                    .any(|m| Some(&m.payload_digest) != digest.as_ref())
                {
                    Some("digest_mismatch")
                } else if markers.windows(2).any(|w| w[0].polarity != w[1].polarity) {
                    Some("conflicting_markers")
                } else {
                    None
                }
            }
        }
    }

    fn residue(&self, item: &ContentItem) -> (f64, Option<u64>) {
        let Ok(r) = item.decode_raster() else {
            return (0.0, None);
        };
        let mut best = (0.0, None);
        for &key in &self.keys {
            let mut c = f64::NEG_INFINITY;
            if r.pixel_count() >= MIN_PIXELS {
                c = c.max(detect_statistical(item, key).unwrap_or(0.0));
            }
            if r.width >= BLOCK && r.height >= BLOCK {
                c = c.max(detect_frequency(item, key).unwrap_or(0.0));
            }
            if c > best.0 {
                best = (c, Some(key));
            }
        }
        best
    }
}

impl Detector for ResidueDetector {
    fn id(&self) -> &str {
        &self.id
    }

    fn detect(
        &self,
        item: &ContentItem,
        _truth: Option<GroundTruth>,
    ) -> Result<DetectorVerdict, DetectorError> {
        let mut v = DetectorVerdict::new(self.id.clone(), 0.0);
        v.latency_ms = self.latency_ms;
        if let Some(reason) = Self::tamper_reason(item) {
            v.confidence_fake = TAMPER_CONFIDENCE;
            return Ok(v.with_feature("tamper", reason));
        }
        if item.modality == Modality::Raster {
            let (corr, key) = self.residue(item);
            v.confidence_fake = corr.clamp(0.0, 1.0);
            v = v.with_feature("correlation", corr);
            if let Some(k) = key {
                v = v.with_feature("key", format!("{k:016x}"));
            }
        }
        Ok(v)
    }
}
