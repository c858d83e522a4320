//! Two-level moderation: marker check first, then technical detection,
//! downstream risk and trusted verdicts combined by the scoring policy.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{
    aggregate_trusted, run_technical, Detector, TechnicalPolicy, TechnicalResult, TrustedAggregate,
    TrustedPolicy, TrustedVerdict, VerifierRegistry,
};
use crate::log::{DecisionLog, LogError};
use crate::marker::{parse_marker_block, ExtractError, Marker, Polarity};
use crate::model::{content_hash, ContentItem, Digest, GroundTruth};
use crate::par::{self, Execution};
use crate::risk::{classify_risk, RiskAssessment, RiskPolicy};
use crate::scoring::{
    assign_label, compute_score, IndeterminateRule, Label, PolicyConfig, ScoreVector, Signal,
};
use crate::trust::{
    verify_marker_digest, FailureCode, MarkerVerification, Timestamp, TrustStore,
    VerificationStatus,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationPolicy {
    /// Also ask verifiers when trusted review is not mandatory.
    #[serde(default = "yes")]
    pub await_optional: bool,
    /// Review tasks expire after this many seconds.
    #[serde(default = "day")]
    pub review_expiry_secs: i64,
}

fn yes() -> bool {
    true
}

fn day() -> i64 {
    24 * 3600
}

impl Default for EscalationPolicy {
    fn default() -> Self {
        Self {
            await_optional: true,
            review_expiry_secs: day(),
        }
    }
}

/// Everything that influences a decision. Its fingerprint is stored with
/// every decision.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModerationConfig {
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub risk: RiskPolicy,
    #[serde(default)]
    pub technical: TechnicalPolicy,
    #[serde(default)]
    pub trusted: TrustedPolicy,
    #[serde(default)]
    pub escalation: EscalationPolicy,
}

impl ModerationConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |e: String| PipelineError::ConfigInvalid(e);
        self.policy.validate().map_err(|e| bad(e.to_string()))?;
        self.risk.validate().map_err(|e| bad(e.to_string()))?;
        self.technical.validate().map_err(bad)?;
        if self.trusted.quorum == 0 {
            return Err(bad("quorum must be at least 1".into()));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> Digest {
        Digest::sha256(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let c: Self =
            serde_json::from_str(text).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionStatus {
    Final,
    Provisional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustedEvidence {
    pub verdicts: Vec<TrustedVerdict>,
    pub aggregate: TrustedAggregate,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evidence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub technical: Option<TechnicalResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trusted: Option<TrustedEvidence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<RiskAssessment>,
    /// Marker failures that pinned the technical signal to 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tamper: Vec<FailureCode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationDecision {
    pub content_id: String,
    pub label: Label,
    pub score: Option<f64>,
    /// Raw signals, indeterminate components kept as such.
    pub score_vector: Option<ScoreVector>,
    pub marker_verification: MarkerVerification,
    pub evidence: Evidence,
    pub status: DecisionStatus,
    pub decided_at: Timestamp,
    pub config_fingerprint: Digest,
    /// Hash of the payload, so later markers can be checked without it.
    pub content_digest: Option<Digest>,
    pub category_tags: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_task: Option<String>,
}

impl ModerationDecision {
    /// Recomputes the label from the stored inputs.
    pub fn rederive_label(&self, policy: &PolicyConfig) -> Label {
        label_from(
            self.marker_verification.status,
            self.score_vector.as_ref(),
            policy,
        )
    }
}

/// An unresolved indeterminate under `escalate` labels conservatively.
pub fn label_from(
    status: VerificationStatus,
    v: Option<&ScoreVector>,
    policy: &PolicyConfig,
) -> Label {
    assign_label(status, v, policy).unwrap_or(Label::Untrustworthy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewState {
    Open,
    Satisfied,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub task_id: String,
    pub content_id: String,
    pub created_at: Timestamp,
    pub expires_at: Timestamp,
    pub required_quorum: usize,
    pub received: usize,
    pub state: ReviewState,
}

impl ReviewTask {
    pub fn id_for(content_id: &str) -> String {
        format!(
            "task-{}",
            &Digest::sha256(content_id.as_bytes()).to_hex()[..16]
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub decision: ModerationDecision,
    pub review_task: Option<ReviewTask>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Storage(#[from] LogError),
    #[error("no decision recorded for `{0}`")]
    UnknownContent(String),
}

/// Source of human verdicts for an item, e.g. a simulated crowd.
pub trait VerifierPool: Send + Sync {
    fn registry(&self) -> &VerifierRegistry;

    /// Verdicts that arrive within the wait budget.
    fn request(&self, item: &ContentItem, truth: Option<GroundTruth>) -> Vec<TrustedVerdict>;
}

#[derive(Debug, Default)]
pub struct Counters {
    pub items: AtomicU64,
    pub detector_runs: AtomicU64,
    pub verifier_requests: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CounterSnapshot {
    pub items: u64,
    pub detector_runs: u64,
    pub verifier_requests: u64,
}

impl Counters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            items: self.items.load(Ordering::Relaxed),
            detector_runs: self.detector_runs.load(Ordering::Relaxed),
            verifier_requests: self.verifier_requests.load(Ordering::Relaxed),
        }
    }
}

/// New evidence for an already moderated item.
#[derive(Debug, Clone, PartialEq)]
pub enum NewEvidence {
    Verdicts(Vec<TrustedVerdict>),
    MarkerBlock(Vec<u8>),
}

pub struct Engine {
    config: ModerationConfig,
    fingerprint: Digest,
    trust_store: TrustStore,
    detectors: Vec<Arc<dyn Detector>>,
    pool: Option<Arc<dyn VerifierPool>>,
    registry: VerifierRegistry,
    counters: Counters,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("fingerprint", &self.fingerprint)
            .field(
                "detectors",
                &self
                    .detectors
                    .iter()
                    .map(|d| d.id().to_owned())
                    .collect::<Vec<_>>(),
            )
            .field("pool", &self.pool.is_some())
            .finish()
    }
}

impl Engine {
    pub fn new(config: ModerationConfig, trust_store: TrustStore) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            fingerprint: config.fingerprint(),
            config,
            trust_store,
            detectors: Vec::new(),
            pool: None,
            registry: VerifierRegistry::default(),
            counters: Counters::default(),
        })
    }

    pub fn with_detector(mut self, d: Arc<dyn Detector>) -> Self {
        self.detectors.push(d);
        self
    }

    /// Also adopts the pool's registry for verdict aggregation.
    pub fn with_pool(mut self, pool: Arc<dyn VerifierPool>) -> Self {
        self.registry = pool.registry().clone();
        self.pool = Some(pool);
        self
    }

    pub fn with_registry(mut self, registry: VerifierRegistry) -> Self {
        self.registry = registry;
        self
    }

    pub fn config(&self) -> &ModerationConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> &Digest {
        &self.fingerprint
    }

    pub fn registry(&self) -> &VerifierRegistry {
        &self.registry
    }

    pub fn trust_store(&self) -> &TrustStore {
        &self.trust_store
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot()
    }

    /// Level-1 marker check over every marker attached to the item.
    pub fn check_markers(
        &self,
        item: &ContentItem,
        digest: Option<&Digest>,
        now: Timestamp,
    ) -> MarkerVerification {
        match item.marker_block.as_deref() {
            None => MarkerVerification::absent(),
            Some(block) => match parse_marker_block(block) {
                Err(ExtractError::NoMarkerFound) => {
                    MarkerVerification::invalid(vec![FailureCode::MalformedMarkerBlock], None)
                }
                Err(ExtractError::MalformedMarkerBlock(_)) => {
                    MarkerVerification::invalid(vec![FailureCode::MalformedMarkerBlock], None)
                }
                Ok(markers) => combine(&markers, digest, &self.trust_store, now),
            },
        }
    }

    pub fn moderate(
        &self,
        item: &ContentItem,
        truth: Option<GroundTruth>,
        now: Timestamp,
    ) -> Result<Outcome, PipelineError> {
        self.counters.items.fetch_add(1, Ordering::Relaxed);
        let digest = content_hash(item).ok();
        let mv = self.check_markers(item, digest.as_ref(), now);
        let base = ModerationDecision {
            content_id: item.id.clone(),
            label: Label::Untrustworthy,
            score: None,
            score_vector: None,
            marker_verification: mv,
            evidence: Evidence::default(),
            status: DecisionStatus::Final,
            decided_at: now,
            config_fingerprint: self.fingerprint.clone(),
            content_digest: digest,
            category_tags: item.origin.category_tags.clone(),
            review_task: None,
        };
        if base.marker_verification.status.is_valid() {
            return Ok(self.terminal(base));
        }

        if self.detectors.is_empty() {
            return Err(PipelineError::ConfigInvalid(
                "no detectors registered".into(),
            ));
        }
        let detectors: Vec<&dyn Detector> = self.detectors.iter().map(|d| d.as_ref()).collect();
        self.counters.detector_runs.fetch_add(1, Ordering::Relaxed);
        let technical = run_technical(item, truth, &detectors, &self.config.technical)
            .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
        let risk = classify_risk(&item.origin, &self.config.risk);
        let tamper = if base.marker_verification.status == VerificationStatus::Invalid {
            base.marker_verification.reasons.clone()
        } else {
            Vec::new()
        };
        let v_t = if tamper.is_empty() {
            technical.v_t
        } else {
            Signal::Zero
        };
        let v_r = Signal::from_bool(risk.v_r == 1);

        let mandatory = v_r == Signal::Zero || !technical.v_t.is_determinate();
        let trusted = match &self.pool {
            Some(pool) if mandatory || self.config.escalation.await_optional => {
                self.counters
                    .verifier_requests
                    .fetch_add(1, Ordering::Relaxed);
                let verdicts = pool.request(item, truth);
                let aggregate = aggregate_trusted(&verdicts, &self.registry, &self.config.trusted);
                Some(TrustedEvidence {
                    verdicts,
                    aggregate,
                })
            }
            _ => None,
        };
        let v_tr = trusted
            .as_ref()
            .map_or(Signal::Indeterminate, |t| t.aggregate.v_tr);

        let decision = ModerationDecision {
            score_vector: Some(ScoreVector::new(v_t, v_tr, v_r)),
            evidence: Evidence {
                technical: Some(technical),
                trusted,
                risk: Some(risk),
                tamper,
            },
            ..base
        };
        Ok(self.finish(decision, now))
    }

    /// Recomputes an item's decision with additional evidence. The prior
    /// decision is not modified.
    pub fn reevaluate(
        &self,
        prior: &ModerationDecision,
        evidence: NewEvidence,
        now: Timestamp,
    ) -> Outcome {
        let mut d = ModerationDecision {
            decided_at: now,
            config_fingerprint: self.fingerprint.clone(),
            review_task: None,
            ..prior.clone()
        };
        match evidence {
            NewEvidence::MarkerBlock(block) => {
                let mv = match parse_marker_block(&block) {
                    Ok(markers) => combine(
                        &markers,
                        prior.content_digest.as_ref(),
                        &self.trust_store,
                        now,
                    ),
                    Err(_) => {
                        MarkerVerification::invalid(vec![FailureCode::MalformedMarkerBlock], None)
                    }
                };
                if mv.status.is_valid() {
                    d.marker_verification = mv;
                    return self.terminal(d);
                }
                if !prior.marker_verification.status.is_valid() {
                    d.evidence.tamper = merge_reasons(&d.evidence.tamper, &mv.reasons);
                    d.marker_verification = mv;
                    if let Some(v) = d.score_vector.as_mut() {
                        v.v_t = Signal::Zero;
                    }
                }
            }
            NewEvidence::Verdicts(new) => {
                if let Some(v) = d.score_vector.as_mut() {
                    let mut verdicts = d
                        .evidence
                        .trusted
                        .take()
                        .map(|t| t.verdicts)
                        .unwrap_or_default();
                    verdicts.extend(new);
                    let aggregate =
                        aggregate_trusted(&verdicts, &self.registry, &self.config.trusted);
                    v.v_tr = aggregate.v_tr;
                    d.evidence.trusted = Some(TrustedEvidence {
                        verdicts,
                        aggregate,
                    });
                }
            }
        }
        if d.marker_verification.status.is_valid() {
            return self.terminal(d);
        }
        self.finish(d, now)
    }

    fn terminal(&self, mut d: ModerationDecision) -> Outcome {
        d.label = label_from(d.marker_verification.status, None, &self.config.policy);
        d.score = None;
        d.status = DecisionStatus::Final;
        d.review_task = None;
        Outcome {
            decision: d,
            review_task: None,
        }
    }

    fn finish(&self, mut d: ModerationDecision, now: Timestamp) -> Outcome {
        let policy = &self.config.policy;
        let v = d.score_vector.expect("level-2 decisions carry a vector");
        d.score = compute_score(&v, policy).ok();
        d.label = label_from(d.marker_verification.status, Some(&v), policy);
        let unresolved = !v.v_tr.is_determinate()
            || (!v.is_determinate() && policy.indeterminate == IndeterminateRule::Escalate);
        if !unresolved {
            d.status = DecisionStatus::Final;
            return Outcome {
                decision: d,
                review_task: None,
            };
        }
        d.status = DecisionStatus::Provisional;
        let task_id = ReviewTask::id_for(&d.content_id);
        d.review_task = Some(task_id.clone());
        let received = d
            .evidence
            .trusted
            .as_ref()
            .map_or(0, |t| t.aggregate.counted);
        let task = ReviewTask {
            task_id,
            content_id: d.content_id.clone(),
            created_at: now,
            expires_at: now + self.config.escalation.review_expiry_secs,
            required_quorum: self.config.trusted.quorum,
            received,
            state: ReviewState::Open,
        };
        Outcome {
            decision: d,
            review_task: Some(task),
        }
    }

    /// Moderates and appends. Nothing is returned unless the append
    /// succeeded.
    pub fn moderate_logged(
        &self,
        item: &ContentItem,
        truth: Option<GroundTruth>,
        now: Timestamp,
        log: &mut DecisionLog,
    ) -> Result<Outcome, PipelineError> {
        let out = self.moderate(item, truth, now)?;
        log.append(out.decision.clone())?;
        Ok(out)
    }

    pub fn reevaluate_logged(
        &self,
        content_id: &str,
        evidence: NewEvidence,
        now: Timestamp,
        log: &mut DecisionLog,
    ) -> Result<Outcome, PipelineError> {
        let prior = log
            .latest(content_id)
            .ok_or_else(|| PipelineError::UnknownContent(content_id.to_owned()))?
            .clone();
        let out = self.reevaluate(&prior, evidence, now);
        log.append(out.decision.clone())?;
        Ok(out)
    }

    /// Decides every item (in parallel when asked), then appends in input
    /// order so the log does not depend on scheduling.
    pub fn run_batch(
        &self,
        items: &[(ContentItem, Option<GroundTruth>)],
        now: Timestamp,
        exec: Execution,
        log: &mut DecisionLog,
    ) -> Result<Vec<Outcome>, PipelineError> {
        let outcomes = par::map(exec, items, |(item, truth)| {
            self.moderate(item, *truth, now)
        });
        let mut out = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            let o = o?;
            log.append(o.decision.clone())?;
            out.push(o);
        }
        Ok(out)
    }
}

fn merge_reasons(a: &[FailureCode], b: &[FailureCode]) -> Vec<FailureCode> {
    let set: BTreeSet<FailureCode> = a.iter().chain(b).copied().collect();
    set.into_iter().collect()
}

/// A valid marker wins unless valid markers disagree on polarity.
fn combine(
    markers: &[Marker],
    digest: Option<&Digest>,
    store: &TrustStore,
    now: Timestamp,
) -> MarkerVerification {
    let results: Vec<MarkerVerification> = markers
        .iter()
        .map(|m| verify_marker_digest(m, digest, store, now))
        .collect();
    let valid: Vec<&MarkerVerification> = results.iter().filter(|r| r.status.is_valid()).collect();
    let polarities: BTreeSet<Polarity> = valid
        .iter()
        .filter_map(|r| r.marker.as_ref().map(|m| m.polarity))
        .collect();
    if polarities.len() > 1 {
        return MarkerVerification::invalid(
            vec![FailureCode::ConflictingMarkers],
            markers.first().cloned(),
        );
    }
    if let Some(v) = valid.first() {
        return (*v).clone();
    }
    let reasons = results
        .iter()
        .fold(Vec::new(), |acc, r| merge_reasons(&acc, &r.reasons));
    MarkerVerification::invalid(reasons, markers.first().cloned())
}
