//! Weighted score over the three trust signals and the four-label mapping.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trust::{MarkerVerification, VerificationStatus};

/// Scores within this distance of the threshold count as ties; keeps label
/// decisions stable when weights are rescaled.
pub const TIE_EPSILON: f64 = 1e-9;

/// One trust signal: 1 = trustworthy, 0 = untrustworthy, or not determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Option<u8>", into = "Option<u8>")]
pub enum Signal {
    Zero,
    One,
    Indeterminate,
}

impl Signal {
    pub fn from_bool(trustworthy: bool) -> Self {
        if trustworthy {
            Signal::One
        } else {
            Signal::Zero
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Signal::Zero => Some(0.0),
            Signal::One => Some(1.0),
            Signal::Indeterminate => None,
        }
    }

    pub fn is_determinate(self) -> bool {
        self != Signal::Indeterminate
    }
}

impl From<Option<u8>> for Signal {
    fn from(v: Option<u8>) -> Self {
        match v {
            Some(0) => Signal::Zero,
            Some(_) => Signal::One,
            None => Signal::Indeterminate,
        }
    }
}

impl From<Signal> for Option<u8> {
    fn from(s: Signal) -> Self {
        match s {
            Signal::Zero => Some(0),
            Signal::One => Some(1),
            Signal::Indeterminate => None,
        }
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Signal::Zero => "0",
            Signal::One => "1",
            Signal::Indeterminate => "⊥",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreVector {
    pub v_t: Signal,
    pub v_tr: Signal,
    pub v_r: Signal,
}

impl ScoreVector {
    pub fn new(v_t: Signal, v_tr: Signal, v_r: Signal) -> Self {
        Self { v_t, v_tr, v_r }
    }

    /// Binary vector from bits `(v_t, v_tr, v_r)`.
    pub fn bits(v_t: u8, v_tr: u8, v_r: u8) -> Self {
        Self::new(
            Signal::from_bool(v_t != 0),
            Signal::from_bool(v_tr != 0),
            Signal::from_bool(v_r != 0),
        )
    }

    /// All eight binary vectors, `(0,0,0)` first, `v_r` varying fastest.
    pub fn all_binary() -> impl Iterator<Item = ScoreVector> {
        (0u8..8).map(|i| Self::bits(i >> 2 & 1, i >> 1 & 1, i & 1))
    }

    pub fn is_determinate(&self) -> bool {
        self.v_t.is_determinate() && self.v_tr.is_determinate() && self.v_r.is_determinate()
    }

    /// Replaces indeterminate components with 0.
    pub fn substitute_zero(&self) -> Self {
        let z = |s: Signal| if s.is_determinate() { s } else { Signal::Zero };
        Self::new(z(self.v_t), z(self.v_tr), z(self.v_r))
    }
}

impl fmt::Display for ScoreVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.v_t, self.v_tr, self.v_r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub technical: f64,
    pub trusted: f64,
    pub risk: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            technical: 1.0,
            trusted: 1.0,
            risk: 1.0,
        }
    }
}

impl Weights {
    pub fn sum(&self) -> f64 {
        self.technical + self.trusted + self.risk
    }

    pub fn normalized(&self) -> Self {
        let s = self.sum();
        Self {
            technical: self.technical / s,
            trusted: self.trusted / s,
            risk: self.risk / s,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            technical: self.technical * c,
            trusted: self.trusted * c,
            risk: self.risk * c,
        }
    }
}

/// How a score exactly at the threshold is labeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    #[default]
    Untrustworthy,
    Trustworthy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndeterminateRule {
    /// Missing evidence counts as untrustworthy.
    #[default]
    Zero,
    /// Leave unresolved; the decision stays provisional until reviewed.
    Escalate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Deepfake,
    Untrustworthy,
    Trustworthy,
    Verified,
}

impl Label {
    pub const ALL: [Label; 4] = [
        Label::Deepfake,
        Label::Untrustworthy,
        Label::Trustworthy,
        Label::Verified,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Deepfake => "DEEPFAKE",
            Label::Untrustworthy => "UNTRUSTWORTHY",
            Label::Trustworthy => "TRUSTWORTHY",
            Label::Verified => "VERIFIED",
        }
    }

    /// Flagged labels are the ones that warn users.
    pub fn is_flagged(self) -> bool {
        matches!(self, Label::Deepfake | Label::Untrustworthy)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown label `{s}`"))
    }
}

/// Display names; presentation only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelNames {
    pub deepfake: String,
    pub untrustworthy: String,
    pub trustworthy: String,
    pub verified: String,
}

impl Default for LabelNames {
    fn default() -> Self {
        Self {
            deepfake: "Deepfake".into(),
            untrustworthy: "Untrustworthy".into(),
            trustworthy: "Trustworthy".into(),
            verified: "Verified".into(),
        }
    }
}

impl LabelNames {
    pub fn name(&self, label: Label) -> &str {
        match label {
            Label::Deepfake => &self.deepfake,
            Label::Untrustworthy => &self.untrustworthy,
            Label::Trustworthy => &self.trustworthy,
            Label::Verified => &self.verified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    #[serde(default)]
    pub weights: Weights,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub tie_rule: TieRule,
    #[serde(default)]
    pub indeterminate: IndeterminateRule,
    #[serde(default)]
    pub label_names: LabelNames,
}

fn default_threshold() -> f64 {
    0.5
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            weights: Weights::default(),
            threshold: default_threshold(),
            tie_rule: TieRule::default(),
            indeterminate: IndeterminateRule::default(),
            label_names: LabelNames::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("weights must be finite and non-negative")]
    NegativeWeight,
    #[error("weights must not all be zero")]
    ZeroWeights,
    #[error("threshold {0} outside [0, 1]")]
    ThresholdRange(f64),
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let w = &self.weights;
        if [w.technical, w.trusted, w.risk]
            .iter()
            .any(|x| !x.is_finite() || *x < 0.0)
        {
            return Err(PolicyError::NegativeWeight);
        }
        if w.sum() <= 0.0 {
            return Err(PolicyError::ZeroWeights);
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(PolicyError::ThresholdRange(self.threshold));
        }
        Ok(())
    }

    pub fn with_threshold(&self, threshold: f64) -> Self {
        Self {
            threshold,
            ..self.clone()
        }
    }

    pub fn with_weights(&self, weights: Weights) -> Self {
        Self {
            weights,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoringError {
    #[error("score vector has an unresolved indeterminate component")]
    UnresolvedIndeterminate,
    #[error("unmarked content needs a score vector")]
    MissingScore,
}

pub fn compute_score(v: &ScoreVector, config: &PolicyConfig) -> Result<f64, ScoringError> {
    let v = match (v.is_determinate(), config.indeterminate) {
        (true, _) => *v,
        (false, IndeterminateRule::Zero) => v.substitute_zero(),
        (false, IndeterminateRule::Escalate) => return Err(ScoringError::UnresolvedIndeterminate),
    };
    let w = config.weights.normalized();
    let val = |s: Signal| s.value().unwrap_or(0.0);
    let score = w.technical * val(v.v_t) + w.trusted * val(v.v_tr) + w.risk * val(v.v_r);
    Ok(score.clamp(0.0, 1.0))
}

pub fn label_for_score(score: f64, config: &PolicyConfig) -> Label {
    if (score - config.threshold).abs() <= TIE_EPSILON {
        match config.tie_rule {
            TieRule::Untrustworthy => Label::Untrustworthy,
            TieRule::Trustworthy => Label::Trustworthy,
        }
    } else if score > config.threshold {
        Label::Trustworthy
    } else {
        Label::Untrustworthy
    }
}

/// Valid markers decide the label outright; otherwise the score does.
pub fn assign_label(
    status: VerificationStatus,
    v: Option<&ScoreVector>,
    config: &PolicyConfig,
) -> Result<Label, ScoringError> {
    match status {
        VerificationStatus::ValidPositive => Ok(Label::Deepfake),
        VerificationStatus::ValidNegative => Ok(Label::Verified),
        VerificationStatus::Invalid | VerificationStatus::Absent => {
            let v = v.ok_or(ScoringError::MissingScore)?;
            compute_score(v, config).map(|s| label_for_score(s, config))
        }
    }
}

pub fn assign_label_for(
    mv: &MarkerVerification,
    v: Option<&ScoreVector>,
    config: &PolicyConfig,
) -> Result<Label, ScoringError> {
    assign_label(mv.status, v, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub marker_status: VerificationStatus,
    pub vector: ScoreVector,
    /// `None` on rows a valid marker decides.
    pub score: Option<f64>,
    pub label: Label,
}

pub const MARKER_STATES: [VerificationStatus; 4] = [
    VerificationStatus::ValidPositive,
    VerificationStatus::ValidNegative,
    VerificationStatus::Invalid,
    VerificationStatus::Absent,
];

/// Every marker state crossed with every binary vector, in a stable order.
pub fn decision_table(config: &PolicyConfig) -> Vec<DecisionRow> {
    let mut rows = Vec::with_capacity(32);
    for status in MARKER_STATES {
        for vector in ScoreVector::all_binary() {
            let label =
                assign_label(status, Some(&vector), config).expect("binary vectors always score");
            let score =
                (!status.is_valid()).then(|| compute_score(&vector, config).expect("binary"));
            rows.push(DecisionRow {
                marker_status: status,
                vector,
                score,
                label,
            });
        }
    }
    rows
}

pub const DECISION_TABLE_HEADER: &str = "marker_status,v_t,v_tr,v_r,score,label";

pub fn status_str(s: VerificationStatus) -> &'static str {
    match s {
        VerificationStatus::ValidPositive => "valid_positive",
        VerificationStatus::ValidNegative => "valid_negative",
        VerificationStatus::Invalid => "invalid",
        VerificationStatus::Absent => "absent",
    }
}

/// CSV with [`DECISION_TABLE_HEADER`]; scores to six decimals, empty for
/// marker-decided rows.
pub fn decision_table_csv(config: &PolicyConfig) -> String {
    let mut out = String::from(DECISION_TABLE_HEADER);
    out.push('\n');
    for r in decision_table(config) {
        let score = r.score.map(|s| format!("{s:.6}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            status_str(r.marker_status),
            r.vector.v_t,
            r.vector.v_tr,
            r.vector.v_r,
            score,
            r.label
        ));
    }
    out
}
