use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::trusted::{Judgment, VerifierRegistry};
use crate::crypto::{self, KeyPair};
use crate::wire::Writer;

const COSIGN_DOMAIN: &[u8] = b"DFCS-SUM";

/// What a panel of verifiers jointly attests to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictSummary {
    pub content_id: String,
    pub judgment: Judgment,
    /// Support in parts per million, so the signed bytes are exact.
    pub support_ppm: u32,
}

impl VerdictSummary {
    pub fn new(content_id: impl Into<String>, judgment: Judgment, support: f64) -> Self {
        Self {
            content_id: content_id.into(),
            judgment,
            support_ppm: (support.clamp(0.0, 1.0) * 1e6).round() as u32,
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(COSIGN_DOMAIN)
            .str(&self.content_id)
            .str(&self.judgment.to_string())
            .u32(self.support_ppm);
        w.finish()
    }

    pub fn sign(&self, verifier_id: &str, key: &KeyPair) -> CoSigner {
        CoSigner {
            verifier_id: verifier_id.to_owned(),
            signature: key.sign(&self.canonical_bytes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoSigner {
    pub verifier_id: String,
    #[serde(with = "crate::serde_util::b64_bytes")]
    pub signature: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoSignature {
    pub summary: VerdictSummary,
    pub signers: Vec<CoSigner>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoSignError {
    #[error("threshold k must be at least 1")]
    ZeroThreshold,
}

/// Bundles signatures over `summary`. Validity is decided by
/// [`verify_cosign`], not here.
pub fn collective_sign(
    summary: VerdictSummary,
    signers: Vec<CoSigner>,
    k: usize,
) -> Result<CoSignature, CoSignError> {
    if k == 0 {
        return Err(CoSignError::ZeroThreshold);
    }
    Ok(CoSignature {
        summary,
        signers,
        k,
    })
}

/// True when at least `k` distinct registered verifiers signed the summary.
pub fn verify_cosign(cosig: &CoSignature, registry: &VerifierRegistry) -> bool {
    if cosig.k == 0 {
        return false;
    }
    let msg = cosig.summary.canonical_bytes();
    let mut valid = BTreeSet::new();
    for s in &cosig.signers {
        let Some(profile) = registry.get(&s.verifier_id) else {
            log::warn!("ignoring co-signature by unknown signer {}", s.verifier_id);
            continue;
        };
        if valid.contains(s.verifier_id.as_str()) {
            log::debug!("duplicate co-signer {}", s.verifier_id);
            continue;
        }
        if crypto::verify(&profile.public_key, &msg, &s.signature) {
            valid.insert(s.verifier_id.as_str());
        }
    }
    valid.len() >= cosig.k
}
