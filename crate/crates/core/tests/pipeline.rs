mod common;

use common::*;
use modpipe_core::detection::{Judgment, TrustedVerdict};
use modpipe_core::log::DecisionLog;
use modpipe_core::marker::{Polarity, Scheme};
use modpipe_core::par::Execution;
use modpipe_core::pipeline::{
    DecisionStatus, ModerationConfig, NewEvidence, PipelineError, ReviewState,
};
use modpipe_core::scoring::{IndeterminateRule, Label, ScoreVector, Signal, Weights};
use modpipe_core::trust::{FailureCode, VerificationStatus};

#[test]
fn valid_positive_marker_short_circuits() {
    let gen = pki("gen");
    let e = engine(
        ModerationConfig::default(),
        store(&[&gen]),
        Some(pool(1.0, 1.0)),
    );
    let item = marked(&scene("a", 1), &gen, Scheme::Metadata, Polarity::Positive);
    let out = e.moderate(&item, fake(), NOW).unwrap();
    assert_eq!(out.decision.label, Label::Deepfake);
    assert_eq!(out.decision.status, DecisionStatus::Final);
    assert!(out.decision.score.is_none() && out.review_task.is_none());
    let c = e.counters();
    assert_eq!((c.items, c.detector_runs, c.verifier_requests), (1, 0, 0));
}

#[test]
fn valid_negative_marker_is_verified() {
    let cam = pki("cam");
    let e = engine(ModerationConfig::default(), store(&[&cam]), None);
    let item = marked(
        &scene("b", 2),
        &cam,
        Scheme::Cryptographic,
        Polarity::Negative,
    );
    let d = e.moderate(&item, real(), NOW).unwrap().decision;
    assert_eq!(d.label, Label::Verified);
    assert_eq!(e.counters().detector_runs, 0);
}

#[test]
fn unmarked_harmless_with_quorum_is_trustworthy() {
    let e = engine(
        ModerationConfig::default(),
        store(&[]),
        Some(pool(1.0, 1.0)),
    );
    let item = with_tags(scene("c", 3), &["animals"], 10);
    let d = e.moderate(&item, real(), NOW).unwrap().decision;
    assert_eq!(d.score_vector, Some(ScoreVector::bits(1, 1, 1)));
    assert_eq!(
        (d.label, d.status),
        (Label::Trustworthy, DecisionStatus::Final)
    );
    assert_eq!(d.score, Some(1.0));
}

#[test]
fn high_risk_without_quorum_is_provisional() {
    let e = engine(
        ModerationConfig::default(),
        store(&[]),
        Some(pool(1.0, 0.0)),
    );
    let item = with_tags(scene("d", 4), &["political_communication"], 10);
    let out = e.moderate(&item, real(), NOW).unwrap();
    let d = &out.decision;
    assert_eq!(
        d.score_vector,
        Some(ScoreVector::new(
            Signal::One,
            Signal::Indeterminate,
            Signal::Zero
        ))
    );
    assert_eq!(
        (d.label, d.status),
        (Label::Untrustworthy, DecisionStatus::Provisional)
    );
    let task = out.review_task.unwrap();
    assert_eq!(task.state, ReviewState::Open);
    assert_eq!(d.review_task.as_deref(), Some(task.task_id.as_str()));
    assert_eq!(task.required_quorum, 3);
}

#[test]
fn late_quorum_flips_provisional_to_final() {
    let p = pool(1.0, 0.0);
    let keys: Vec<_> = ["verifier-00", "verifier-01", "verifier-02"]
        .iter()
        .map(|id| (id.to_string(), p.key(id).unwrap().clone()))
        .collect();
    let e = engine(ModerationConfig::default(), store(&[]), Some(p));
    let item = with_tags(scene("e", 5), &["elections"], 10);
    let mut log = DecisionLog::in_memory();
    e.moderate_logged(&item, real(), NOW, &mut log).unwrap();

    let verdicts: Vec<_> = keys
        .iter()
        .map(|(id, k)| TrustedVerdict::new("e", id.clone(), Judgment::Trustworthy).signed(k))
        .collect();
    let two = e
        .reevaluate_logged(
            "e",
            NewEvidence::Verdicts(verdicts[..2].to_vec()),
            NOW + 1,
            &mut log,
        )
        .unwrap();
    assert_eq!(two.decision.status, DecisionStatus::Provisional);
    let three = e
        .reevaluate_logged(
            "e",
            NewEvidence::Verdicts(verdicts[2..].to_vec()),
            NOW + 2,
            &mut log,
        )
        .unwrap();
    assert_eq!(
        three.decision.score_vector,
        Some(ScoreVector::bits(1, 1, 0))
    );
    assert_eq!(
        (three.decision.label, three.decision.status),
        (Label::Trustworthy, DecisionStatus::Final)
    );
    assert!(three.review_task.is_none());

    let history = log.history("e");
    assert_eq!(history.len(), 3);
    assert_eq!(history[0].label, Label::Untrustworthy);
    assert_eq!(history[0].status, DecisionStatus::Provisional);
}

#[test]
fn identical_evidence_gives_identical_label() {
    let e = engine(
        ModerationConfig::default(),
        store(&[]),
        Some(pool(1.0, 1.0)),
    );
    let mut log = DecisionLog::in_memory();
    let item = with_tags(scene("f", 6), &["music"], 10);
    let first = e.moderate_logged(&item, real(), NOW, &mut log).unwrap();
    let again = e
        .reevaluate_logged("f", NewEvidence::Verdicts(vec![]), NOW, &mut log)
        .unwrap();
    assert_eq!(again.decision, first.decision);
    assert_eq!(log.len(), 2);
}

#[test]
fn late_positive_marker_overrides_score() {
    let gen = pki("gen");
    let e = engine(
        ModerationConfig::default(),
        store(&[&gen]),
        Some(pool(1.0, 1.0)),
    );
    let item = with_tags(scene("g", 7), &["animals"], 10);
    let mut log = DecisionLog::in_memory();
    let first = e.moderate_logged(&item, real(), NOW, &mut log).unwrap();
    assert_eq!(first.decision.label, Label::Trustworthy);
    let block = marked(&item, &gen, Scheme::Metadata, Polarity::Positive)
        .marker_block
        .unwrap();
    let out = e
        .reevaluate_logged("g", NewEvidence::MarkerBlock(block), NOW + 5, &mut log)
        .unwrap();
    assert_eq!(
        (out.decision.label, out.decision.status),
        (Label::Deepfake, DecisionStatus::Final)
    );
}

#[test]
fn unknown_content_cannot_be_reevaluated() {
    let e = engine(ModerationConfig::default(), store(&[]), None);
    let mut log = DecisionLog::in_memory();
    assert!(matches!(
        e.reevaluate_logged("nope", NewEvidence::Verdicts(vec![]), NOW, &mut log),
        Err(PipelineError::UnknownContent(_))
    ));
}

#[test]
fn invalid_marker_pins_technical_signal() {
    let gen = pki("gen");
    let e = engine(
        ModerationConfig::default(),
        store(&[]),
        Some(pool(1.0, 1.0)),
    );
    let item = with_tags(
        marked(&scene("h", 8), &gen, Scheme::Metadata, Polarity::Negative),
        &["animals"],
        1,
    );
    let d = e.moderate(&item, real(), NOW).unwrap().decision;
    assert_eq!(d.marker_verification.status, VerificationStatus::Invalid);
    assert_eq!(d.evidence.tamper, vec![FailureCode::UntrustedRoot]);
    assert_eq!(d.score_vector.unwrap().v_t, Signal::Zero);
    assert_eq!(e.counters().detector_runs, 1);
}

#[test]
fn conflicting_valid_markers_are_invalid() {
    let gen = pki("gen");
    let cam = pki("cam");
    let e = engine(ModerationConfig::default(), store(&[&gen, &cam]), None);
    let item = marked(&scene("i", 9), &gen, Scheme::Metadata, Polarity::Positive);
    let both = marked(&item, &cam, Scheme::Metadata, Polarity::Negative);
    let d = e.moderate(&both, real(), NOW).unwrap().decision;
    assert_eq!(d.marker_verification.status, VerificationStatus::Invalid);
    assert_eq!(
        d.marker_verification.reasons,
        vec![FailureCode::ConflictingMarkers]
    );
}

#[test]
fn truncated_block_is_tamper_evidence() {
    let cam = pki("cam");
    let e = engine(ModerationConfig::default(), store(&[&cam]), None);
    let mut item = marked(&scene("j", 10), &cam, Scheme::Metadata, Polarity::Negative);
    let block = item.marker_block.as_mut().unwrap();
    block.truncate(block.len() - 3);
    let d = e.moderate(&item, real(), NOW).unwrap().decision;
    assert_eq!(
        d.marker_verification.reasons,
        vec![FailureCode::MalformedMarkerBlock]
    );
    let residue = &d.evidence.technical.as_ref().unwrap().verdicts[1];
    assert_eq!(residue.confidence_fake, 0.9);
}

#[test]
fn escalate_leaves_score_unresolved() {
    let mut cfg = ModerationConfig::default();
    cfg.policy.indeterminate = IndeterminateRule::Escalate;
    let e = engine(cfg, store(&[]), None);
    let d = e
        .moderate(&with_tags(scene("k", 11), &["animals"], 1), real(), NOW)
        .unwrap()
        .decision;
    assert_eq!(d.score, None);
    assert_eq!(
        (d.label, d.status),
        (Label::Untrustworthy, DecisionStatus::Provisional)
    );
}

#[test]
fn optional_review_can_be_skipped() {
    let mut cfg = ModerationConfig::default();
    cfg.escalation.await_optional = false;
    let e = engine(cfg, store(&[]), Some(pool(1.0, 1.0)));
    let low = e
        .moderate(&with_tags(scene("l", 12), &["animals"], 1), real(), NOW)
        .unwrap();
    assert_eq!(low.decision.status, DecisionStatus::Provisional);
    assert_eq!(e.counters().verifier_requests, 0);
    let high = e
        .moderate(&with_tags(scene("m", 13), &["elections"], 1), real(), NOW)
        .unwrap();
    assert_eq!(high.decision.status, DecisionStatus::Final);
    assert_eq!(e.counters().verifier_requests, 1);
}

#[test]
fn config_is_validated_and_fingerprinted() {
    let mut cfg = ModerationConfig::default();
    cfg.policy.weights = Weights {
        technical: 0.0,
        trusted: 0.0,
        risk: 0.0,
    };
    assert!(matches!(
        modpipe_core::pipeline::Engine::new(cfg, store(&[])),
        Err(PipelineError::ConfigInvalid(_))
    ));
    let a = ModerationConfig::default();
    let b = ModerationConfig {
        policy: a.policy.with_threshold(0.6),
        ..a.clone()
    };
    assert_ne!(a.fingerprint(), b.fingerprint());
    assert_eq!(
        a.fingerprint(),
        ModerationConfig::from_json("{}").unwrap().fingerprint()
    );
}

#[test]
fn batch_modes_produce_identical_logs_and_rederivable_labels() {
    let gen = pki("gen");
    let e = engine(
        ModerationConfig::default(),
        store(&[&gen]),
        Some(pool(0.8, 0.7)),
    );
    let items: Vec<_> = (0..40)
        .map(|i| {
            let tags: &[&str] = if i % 3 == 0 {
                &["elections"]
            } else {
                &["sports"]
            };
            let mut it = with_tags(scene(&format!("b{i}"), i), tags, i * 1000);
            if i % 5 == 0 {
                it = marked(&it, &gen, Scheme::Metadata, Polarity::Positive);
            }
            (it, if i % 2 == 0 { fake() } else { real() })
        })
        .collect();
    let mut a = DecisionLog::in_memory();
    let mut b = DecisionLog::in_memory();
    e.run_batch(&items, NOW, Execution::Parallel, &mut a)
        .unwrap();
    e.run_batch(&items, NOW, Execution::Sequential, &mut b)
        .unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    for d in a.entries() {
        assert_eq!(d.rederive_label(&e.config().policy), d.label);
        assert_eq!(&d.config_fingerprint, e.fingerprint());
    }
}
