use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, KeyPair};
use crate::scoring::{Signal, TieRule, TIE_EPSILON};
use crate::wire::Writer;

pub const DEFAULT_ETA: f64 = 0.05;
const VERDICT_DOMAIN: &[u8] = b"DFTV-SIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Judgment {
    Trustworthy,
    Untrustworthy,
    Abstain,
}

impl Judgment {
    fn tag(self) -> u8 {
        match self {
            Judgment::Trustworthy => 1,
            Judgment::Untrustworthy => 2,
            Judgment::Abstain => 3,
        }
    }
}

impl fmt::Display for Judgment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Judgment::Trustworthy => "trustworthy",
            Judgment::Untrustworthy => "untrustworthy",
            Judgment::Abstain => "abstain",
        })
    }
}

/// One human verdict about one content item. The signature covers the
/// content id as well, so a verdict cannot be replayed onto other content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustedVerdict {
    pub content_id: String,
    pub verifier_id: String,
    pub judgment: Judgment,
    #[serde(default)]
    pub rationale: String,
    #[serde(
        default,
        with = "crate::serde_util::b64_opt",
        skip_serializing_if = "Option::is_none"
    )]
    pub signature: Option<Vec<u8>>,
}

impl TrustedVerdict {
    pub fn new(
        content_id: impl Into<String>,
        verifier_id: impl Into<String>,
        judgment: Judgment,
    ) -> Self {
        Self {
            content_id: content_id.into(),
            verifier_id: verifier_id.into(),
            judgment,
            rationale: String::new(),
            signature: None,
        }
    }

    pub fn signing_message(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(VERDICT_DOMAIN)
            .str(&self.content_id)
            .str(&self.verifier_id)
            .u8(self.judgment.tag())
            .str(&self.rationale);
        w.finish()
    }

    pub fn signed(mut self, key: &KeyPair) -> Self {
        self.signature = Some(key.sign(&self.signing_message()));
        self
    }

    pub fn verifies_under(&self, public_key: &[u8]) -> bool {
        self.signature
            .as_deref()
            .is_some_and(|sig| crypto::verify(public_key, &self.signing_message(), sig))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifierKind {
    Expert,
    Crowd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierProfile {
    pub verifier_id: String,
    pub kind: VerifierKind,
    pub reputation: f64,
    #[serde(with = "crate::serde_util::hex_bytes")]
    pub public_key: Vec<u8>,
}

/// `reputation <- clamp(reputation +- eta, 0, 1)`.
pub fn update_reputation(
    profile: &VerifierProfile,
    agreed_with_consensus: bool,
    eta: f64,
) -> VerifierProfile {
    let step = if agreed_with_consensus { eta } else { -eta };
    VerifierProfile {
        reputation: (profile.reputation + step).clamp(0.0, 1.0),
        ..profile.clone()
    }
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("verifier registry is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("verifier `{0}` has reputation outside [0, 1]")]
    Reputation(String),
    #[error("verifier `{0}` has a malformed public key")]
    Key(String),
    #[error("verifier `{0}` is registered twice")]
    Duplicate(String),
}

/// Registered verifiers by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifierRegistry {
    profiles: BTreeMap<String, VerifierProfile>,
}

impl VerifierRegistry {
    pub fn new(profiles: impl IntoIterator<Item = VerifierProfile>) -> Self {
        Self {
            profiles: profiles
                .into_iter()
                .map(|p| (p.verifier_id.clone(), p))
                .collect(),
        }
    }

    pub fn get(&self, verifier_id: &str) -> Option<&VerifierProfile> {
        self.profiles.get(verifier_id)
    }

    pub fn upsert(&mut self, profile: VerifierProfile) {
        self.profiles.insert(profile.verifier_id.clone(), profile);
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &VerifierProfile> {
        self.profiles.values()
    }

    /// A JSON array of profiles.
    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let list: Vec<VerifierProfile> = serde_json::from_str(text)?;
        let mut reg = Self::default();
        for p in list {
            if !(0.0..=1.0).contains(&p.reputation) {
                return Err(RegistryError::Reputation(p.verifier_id));
            }
            if p.public_key.len() != crypto::PUBLIC_KEY_LEN {
                return Err(RegistryError::Key(p.verifier_id));
            }
            if reg.profiles.contains_key(&p.verifier_id) {
                return Err(RegistryError::Duplicate(p.verifier_id));
            }
            reg.upsert(p);
        }
        Ok(reg)
    }

    pub fn to_json(&self) -> String {
        let list: Vec<&VerifierProfile> = self.profiles.values().collect();
        serde_json::to_string_pretty(&list).expect("registry serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustedPolicy {
    #[serde(default = "default_quorum")]
    pub quorum: usize,
    /// How a support of exactly one half binarizes.
    #[serde(default)]
    pub tie_rule: TieRule,
    /// Drop verdicts that carry no signature.
    #[serde(default)]
    pub require_signatures: bool,
}

fn default_quorum() -> usize {
    3
}

impl Default for TrustedPolicy {
    fn default() -> Self {
        Self {
            quorum: default_quorum(),
            tie_rule: TieRule::default(),
            require_signatures: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    UnknownVerifier,
    InvalidSignature,
    MissingSignature,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedVerdict {
    pub verifier_id: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustedAggregate {
    pub v_tr: Signal,
    /// Reputation-weighted share of trustworthy judgments; `None` below quorum.
    pub support: Option<f64>,
    /// Non-abstaining verdicts that were counted.
    pub counted: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<DroppedVerdict>,
}

impl TrustedAggregate {
    pub fn quorum_met(&self) -> bool {
        self.v_tr.is_determinate()
    }
}

/// Reputation-weighted majority over registered verifiers. Abstentions do
/// not count towards the quorum; a verifier's first verdict wins.
pub fn aggregate_trusted(
    verdicts: &[TrustedVerdict],
    registry: &VerifierRegistry,
    policy: &TrustedPolicy,
) -> TrustedAggregate {
    let mut seen = BTreeSet::new();
    let mut dropped = Vec::new();
    let mut counted: Vec<(&TrustedVerdict, f64)> = Vec::new();
    for v in verdicts {
        let drop = |reason| DroppedVerdict {
            verifier_id: v.verifier_id.clone(),
            reason,
        };
        let Some(profile) = registry.get(&v.verifier_id) else {
            dropped.push(drop(DropReason::UnknownVerifier));
            continue;
        };
        match &v.signature {
            None if policy.require_signatures => {
                dropped.push(drop(DropReason::MissingSignature));
                continue;
            }
            Some(_) if !v.verifies_under(&profile.public_key) => {
                log::warn!(
                    "dropping verdict by {} on {}: bad signature",
                    v.verifier_id,
                    v.content_id
                );
                dropped.push(drop(DropReason::InvalidSignature));
                continue;
            }
            _ => {}
        }
        if !seen.insert(v.verifier_id.as_str()) {
            dropped.push(drop(DropReason::Duplicate));
            continue;
        }
        if v.judgment != Judgment::Abstain {
            counted.push((v, profile.reputation));
        }
    }
    if counted.len() < policy.quorum.max(1) {
        return TrustedAggregate {
            v_tr: Signal::Indeterminate,
            support: None,
            counted: counted.len(),
            dropped,
        };
    }
    counted.sort_by(|a, b| a.0.verifier_id.cmp(&b.0.verifier_id));
    let total: f64 = counted.iter().map(|(_, r)| r).sum();
    let yes: f64 = counted
        .iter()
        .filter(|(v, _)| v.judgment == Judgment::Trustworthy)
        .map(|(_, r)| r)
        .sum();
    let support = if total > 0.0 { yes / total } else { 0.0 };
    let v_tr = if (support - 0.5).abs() <= TIE_EPSILON {
        Signal::from_bool(policy.tie_rule == TieRule::Trustworthy)
    } else {
        Signal::from_bool(support > 0.5)
    };
    TrustedAggregate {
        v_tr,
        support: Some(support),
        counted: counted.len(),
        dropped,
    }
}
