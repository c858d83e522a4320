//! Downstream-risk classification from category tags and expected reach.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::OriginContext;

/// Systemic-risk areas the default policy treats as high risk.
pub const DEFAULT_HIGH_RISK: [&str; 5] = [
    "political_communication",
    "civic_discourse",
    "elections",
    "public_health",
    "catastrophic_event",
];

pub const DEFAULT_REACH_THRESHOLD: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskPolicy {
    pub high_risk_categories: BTreeSet<String>,
    pub reach_threshold: u64,
    #[serde(default)]
    pub verified_source_overrides: bool,
}

impl Default for RiskPolicy {
    fn default() -> Self {
        Self {
            high_risk_categories: DEFAULT_HIGH_RISK.iter().map(|s| s.to_string()).collect(),
            reach_threshold: DEFAULT_REACH_THRESHOLD,
            verified_source_overrides: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RiskPolicyError {
    #[error("high_risk_categories must not be empty")]
    NoCategories,
}

impl RiskPolicy {
    pub fn validate(&self) -> Result<(), RiskPolicyError> {
        if self.high_risk_categories.is_empty() {
            return Err(RiskPolicyError::NoCategories);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskLevel {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub level: RiskLevel,
    /// 1 for low risk (trustworthy context), 0 for high risk.
    pub v_r: u8,
    pub matched_categories: BTreeSet<String>,
    pub reach_exceeded: bool,
}

pub fn classify_risk(origin: &OriginContext, policy: &RiskPolicy) -> RiskAssessment {
    let matched_categories: BTreeSet<String> = origin
        .category_tags
        .intersection(&policy.high_risk_categories)
        .cloned()
        .collect();
    let reach_exceeded = origin.expected_reach >= policy.reach_threshold;
    let by_category = !matched_categories.is_empty()
        && !(policy.verified_source_overrides && origin.verified_source);
    let level = if by_category || reach_exceeded {
        RiskLevel::High
    } else {
        RiskLevel::Low
    };
    RiskAssessment {
        level,
        v_r: u8::from(level == RiskLevel::Low),
        matched_categories,
        reach_exceeded,
    }
}

pub fn is_verified_source(origin: &OriginContext, registry: &BTreeSet<String>) -> bool {
    registry.contains(&origin.source_id)
}
