//! Acceptance checks. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line even when an earlier one fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use modpipe_core::attack::{apply_attack, AttackSpec};
use modpipe_core::audit::{self, cache_cases, evaluate, parse_grid, sweep, Strata, Z_95};
use modpipe_core::corpus::{generate_corpus, CorpusSpec, SimulatedVerifierPool, VerifierPoolSpec};
use modpipe_core::detection::{aggregate_trusted, Judgment, TrustedPolicy};
use modpipe_core::log::DecisionLog;
use modpipe_core::marker::{
    embed_metadata_marker, extract_markers, sign_content, sign_marker, ExtractError, Marker,
    Polarity, Scheme,
};
use modpipe_core::media::Raster;
use modpipe_core::model::{content_hash, ContentItem, GroundTruth};
use modpipe_core::par::Execution;
use modpipe_core::pipeline::{ModerationConfig, ModerationDecision, VerifierPool};
use modpipe_core::prng::{derive_seed, SplitMix64};
use modpipe_core::scoring::{decision_table, Label, PolicyConfig, Signal};
use modpipe_core::trust::{verify_marker, IssuerPki, TrustStore, VerificationStatus};
use modpipe_core::watermark::{
    classify_correlation, detect_frequency, detect_statistical, embed_frequency, embed_statistical,
    DEFAULT_DELTA, DEFAULT_TAU,
};

const NOW: i64 = 1_700_000_000;

// Tolerances and budgets.
const TABLE_BUDGET: Duration = Duration::from_secs(1);
const ROUND_TRIP_ITEMS: usize = 100;
const ROUND_TRIP_BUDGET: Duration = Duration::from_secs(30);
const ATTACK_ITEMS: usize = 100;
const ATTACK_SUCCESS: f64 = 0.95;
const ATTACK_BUDGET: Duration = Duration::from_secs(120);
const FUZZ_MUTATIONS: u64 = 10_000;
const FUZZ_BUDGET: Duration = Duration::from_secs(60);
const CONDORCET_TRIALS: usize = 10_000;
const CONDORCET_TOLERANCE: f64 = 0.01;
const SWEEP_ITEMS: usize = 10_000;
const CI_REPETITIONS: u64 = 200;
const CI_SAMPLE: usize = 200;
const CI_MIN_COVERAGE: f64 = 0.93;
const THROUGHPUT_ITEMS: usize = 4_000;
const THROUGHPUT_MIN: f64 = 1_000.0;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check {
        pass,
        detail: detail.into(),
    }
}

fn timed(budget: Option<Duration>, f: impl FnOnce() -> Check) -> Check {
    let t = Instant::now();
    let mut c = f();
    let elapsed = t.elapsed();
    match budget {
        Some(b) => {
            c.pass &= elapsed < b;
            c.detail = format!(
                "{}; {:.2} s of {} s",
                c.detail,
                elapsed.as_secs_f64(),
                b.as_secs()
            );
        }
        None => c.detail = format!("{}; {:.2} s", c.detail, elapsed.as_secs_f64()),
    }
    c
}

fn pki(name: &str) -> IssuerPki {
    IssuerPki::generate(11, name, NOW - 1000, NOW + 1000)
}

/// Uniform noise raster with a random size between 16x16 and 96x96.
fn random_content(seed: u64) -> ContentItem {
    let mut g = SplitMix64::new(seed);
    let w = 16 + g.below(81) as usize;
    let h = 16 + g.below(81) as usize;
    let mut r = Raster::new(w, h, 3);
    for v in r.data.iter_mut() {
        *v = g.below(256) as u8;
    }
    ContentItem::raster(format!("rand-{seed}"), &r)
}

fn random_polarity(seed: u64) -> Polarity {
    if seed & 1 == 0 {
        Polarity::Positive
    } else {
        Polarity::Negative
    }
}

fn attach(item: &ContentItem, p: &IssuerPki, scheme: Scheme, pol: Polarity) -> ContentItem {
    let m = match scheme {
        Scheme::Cryptographic => sign_content(item, &p.issuer_key, pol, &p.chain),
        _ => sign_marker(item, &p.issuer_key, scheme, pol, &p.chain),
    }
    .unwrap();
    embed_metadata_marker(item, &m).unwrap()
}

fn valid_status(pol: Polarity) -> VerificationStatus {
    match pol {
        Polarity::Positive => VerificationStatus::ValidPositive,
        Polarity::Negative => VerificationStatus::ValidNegative,
    }
}

// 1 ---------------------------------------------------------------------

fn oracle_label(status: VerificationStatus, ones: usize) -> Label {
    match status {
        VerificationStatus::ValidPositive => Label::Deepfake,
        VerificationStatus::ValidNegative => Label::Verified,
        _ if ones >= 2 => Label::Trustworthy,
        _ => Label::Untrustworthy,
    }
}

fn criterion_1() -> Check {
    let rows = decision_table(&PolicyConfig::default());
    let mut seen = std::collections::BTreeSet::new();
    let mut mismatches = 0;
    for row in &rows {
        let v = row.vector;
        let ones = [v.v_t, v.v_tr, v.v_r]
            .iter()
            .filter(|s| **s == Signal::One)
            .count();
        assert!(v.is_determinate());
        seen.insert(format!("{:?}{:?}", row.marker_status, v));
        if row.label != oracle_label(row.marker_status, ones) {
            mismatches += 1;
        }
    }
    check(
        rows.len() == 32 && seen.len() == 32 && mismatches == 0,
        format!(
            "{} rows, {} distinct, {mismatches} mismatches",
            rows.len(),
            seen.len()
        ),
    )
}

// 2 ---------------------------------------------------------------------

fn criterion_2() -> Check {
    let p = pki("studio");
    let store = p.trust_store();
    let mut failures = Vec::new();
    let mut min_corr = f64::INFINITY;
    for i in 0..ROUND_TRIP_ITEMS as u64 {
        let item = random_content(i);
        let pol = random_polarity(derive_seed(i, b"polarity"));
        let key = derive_seed(i, b"key");
        for scheme in [Scheme::Metadata, Scheme::Cryptographic] {
            let marked = attach(&item, &p, scheme, pol);
            let ok = match extract_markers(&marked) {
                Ok(ms) => {
                    ms.len() == 1
                        && verify_marker(&ms[0], &marked, &store, NOW).status == valid_status(pol)
                }
                Err(_) => false,
            };
            if !ok {
                failures.push(format!("{scheme:?}#{i}"));
            }
        }
        let stat = detect_statistical(&embed_statistical(&item, key, pol).unwrap(), key).unwrap();
        let freq = detect_frequency(
            &embed_frequency(&item, key, pol, DEFAULT_DELTA).unwrap(),
            key,
        )
        .unwrap();
        for (scheme, c) in [(Scheme::Statistical, stat), (Scheme::Frequency, freq)] {
            min_corr = min_corr.min(c.abs());
            if classify_correlation(c, DEFAULT_TAU) != Some(pol) {
                failures.push(format!("{scheme:?}#{i} ({c:.3})"));
            }
        }
    }
    check(
        failures.is_empty(),
        format!(
            "{} items x 4 schemes, {} failures {:?}, min keyed |corr| {min_corr:.3}",
            ROUND_TRIP_ITEMS,
            failures.len(),
            &failures[..failures.len().min(5)]
        ),
    )
}

// 3 ---------------------------------------------------------------------

fn detection_score(scheme: Scheme, item: &ContentItem, key: u64, store: &TrustStore) -> f64 {
    match scheme {
        Scheme::Metadata | Scheme::Cryptographic => {
            let valid = extract_markers(item).is_ok_and(|ms| {
                ms.iter().any(|m| {
                    m.scheme == scheme && verify_marker(m, item, store, NOW).status.is_valid()
                })
            });
            if valid {
                1.0
            } else {
                0.0
            }
        }
        Scheme::Statistical => detect_statistical(item, key).map_or(0.0, f64::abs),
        Scheme::Frequency => detect_frequency(item, key).map_or(0.0, f64::abs),
    }
}

fn battery(item: &ContentItem, seed: u64) -> Vec<AttackSpec> {
    let r = item.decode_raster().unwrap();
    vec![
        AttackSpec::StripMetadata,
        AttackSpec::Recompress { q: 4 },
        AttackSpec::Recompress { q: 16 },
        AttackSpec::Crop {
            x: 3,
            y: 3,
            width: r.width - 6,
            height: r.height - 6,
        },
        AttackSpec::Noise {
            sigma: 1,
            seed,
            density: 0.15,
        },
        AttackSpec::Noise {
            sigma: 16,
            seed,
            density: 1.0,
        },
    ]
}

fn attack_name(a: &AttackSpec) -> &'static str {
    match a {
        AttackSpec::StripMetadata => "strip",
        AttackSpec::Recompress { q: 4 } => "recompress4",
        AttackSpec::Recompress { .. } => "recompress16",
        AttackSpec::Crop { .. } => "crop",
        AttackSpec::Noise { sigma: 1, .. } => "noise1@.15",
        AttackSpec::Noise { .. } => "noise16",
    }
}

fn criterion_3() -> Check {
    let p = pki("studio");
    let store = p.trust_store();

    // Strip on metadata-marked items that also carry a statistical watermark.
    let (mut stripped, mut survived) = (0, 0);
    for i in 0..ATTACK_ITEMS as u64 {
        let key = derive_seed(i, b"key");
        let pol = random_polarity(i);
        let wm = embed_statistical(&random_content(1000 + i), key, pol).unwrap();
        let both = attach(&wm, &p, Scheme::Metadata, pol);
        let attacked = apply_attack(&both, &AttackSpec::StripMetadata).unwrap();
        if extract_markers(&attacked) == Err(ExtractError::NoMarkerFound) {
            stripped += 1;
        }
        if detect_statistical(&attacked, key).unwrap().abs() >= DEFAULT_TAU {
            survived += 1;
        }
    }
    let strip_ok = stripped == ATTACK_ITEMS && survived == ATTACK_ITEMS;

    let mut per_scheme = Vec::new();
    let mut all_schemes_ok = true;
    for scheme in Scheme::ALL {
        let mut defeated: BTreeMap<&str, usize> = BTreeMap::new();
        for i in 0..ATTACK_ITEMS as u64 {
            let key = derive_seed(i, b"key");
            let pol = random_polarity(i);
            let base = random_content(2000 + i);
            let marked = match scheme {
                Scheme::Statistical => embed_statistical(&base, key, pol).unwrap(),
                Scheme::Frequency => embed_frequency(&base, key, pol, DEFAULT_DELTA).unwrap(),
                _ => attach(&base, &p, scheme, pol),
            };
            let s0 = detection_score(scheme, &marked, key, &store);
            assert!(s0 >= DEFAULT_TAU, "{scheme:?} {i} {s0}");
            for a in battery(&marked, i) {
                let score = apply_attack(&marked, &a)
                    .map_or(0.0, |x| detection_score(scheme, &x, key, &store));
                *defeated.entry(attack_name(&a)).or_default() += usize::from(score < DEFAULT_TAU);
            }
        }
        let (best, n) = defeated
            .iter()
            .max_by_key(|(_, n)| **n)
            .map(|(k, n)| (*k, *n))
            .unwrap();
        let rate = n as f64 / ATTACK_ITEMS as f64;
        all_schemes_ok &= rate >= ATTACK_SUCCESS;
        per_scheme.push(format!("{scheme:?}:{best}={rate:.2}"));
    }
    check(
        strip_ok && all_schemes_ok,
        format!(
            "strip NoMarkerFound {stripped}/{ATTACK_ITEMS}, statistical kept {survived}/{ATTACK_ITEMS}; best attacks {}",
            per_scheme.join(" ")
        ),
    )
}

// 4 ---------------------------------------------------------------------

fn flip_byte(g: &mut SplitMix64, bytes: &mut Vec<u8>) {
    if bytes.is_empty() {
        bytes.push(1);
        return;
    }
    let i = g.below(bytes.len() as u64) as usize;
    bytes[i] ^= 1 + g.below(255) as u8;
}

fn mutate_string(g: &mut SplitMix64, s: &mut String) {
    let mut b = s.clone().into_bytes();
    flip_byte(g, &mut b);
    *s = match String::from_utf8(b) {
        Ok(t) if t != *s => t,
        _ => format!("{s}x"),
    };
}

fn shift(g: &mut SplitMix64, t: &mut i64) {
    let d = 1 + g.below(5000) as i64;
    *t += if g.bit() { d } else { -d };
}

/// Applies one single-field mutation; returns the mutated item and the
/// field name.
fn mutate(g: &mut SplitMix64, item: &ContentItem, marker: &Marker) -> (ContentItem, &'static str) {
    let mut m = marker.clone();
    let mut payload = item.payload.clone();
    let field = match g.below(9) {
        0 => {
            let others: Vec<_> = Scheme::ALL.into_iter().filter(|s| *s != m.scheme).collect();
            m.scheme = others[g.below(others.len() as u64) as usize];
            "scheme"
        }
        1 => {
            m.polarity = m.polarity.flipped();
            "polarity"
        }
        2 => {
            mutate_string(g, &mut m.issuer_id);
            "issuer_id"
        }
        3 => {
            mutate_string(g, &mut m.key_id);
            "key_id"
        }
        4 => {
            if g.bit() {
                mutate_string(g, &mut m.payload_digest.algorithm_id);
            } else {
                flip_byte(g, &mut m.payload_digest.bytes);
            }
            "payload_digest"
        }
        5 => {
            flip_byte(g, &mut m.signature);
            "signature"
        }
        6 => {
            let chain = &mut m.chain.0;
            let i = g.below(chain.len() as u64) as usize;
            let c = &mut chain[i];
            match g.below(6) {
                0 => mutate_string(g, &mut c.subject_id),
                1 => flip_byte(g, &mut c.public_key),
                2 => mutate_string(g, &mut c.issuer_id),
                3 => flip_byte(g, &mut c.signature),
                4 => shift(g, &mut c.not_before),
                _ => shift(g, &mut c.not_after),
            }
            "certificate"
        }
        7 => {
            let chain = &mut m.chain.0;
            if g.bit() {
                chain.remove(g.below(chain.len() as u64) as usize);
            } else {
                let i = g.below(chain.len() as u64 - 1) as usize;
                chain.swap(i, i + 1);
            }
            "chain_shape"
        }
        _ => {
            flip_byte(g, &mut payload);
            "payload"
        }
    };
    let mutated = ContentItem {
        payload,
        ..item.clone()
    }
    .with_marker_block(Some(m.to_block()));
    (mutated, field)
}

fn criterion_4() -> Check {
    let p = pki("studio");
    let store = p.trust_store();
    let mut bases = Vec::new();
    for (i, scheme) in Scheme::ALL.into_iter().enumerate() {
        let item = random_content(3000 + i as u64);
        let pol = random_polarity(i as u64);
        let m = sign_marker(&item, &p.issuer_key, scheme, pol, &p.chain).unwrap();
        bases.push((item, m));
    }
    let text = ContentItem::text("doc", "a statement attributed to a candidate");
    let m = sign_content(&text, &p.issuer_key, Polarity::Negative, &p.chain).unwrap();
    bases.push((text, m));
    for (item, m) in &bases {
        assert!(verify_marker(m, item, &store, NOW).status.is_valid());
    }

    let mut valid: BTreeMap<&str, usize> = BTreeMap::new();
    let mut tried: BTreeMap<&str, usize> = BTreeMap::new();
    for k in 0..FUZZ_MUTATIONS {
        let mut g = SplitMix64::new(derive_seed(k, b"fuzz"));
        let (item, marker) = &bases[g.below(bases.len() as u64) as usize];
        let (mutated, field) = if g.below(10) == 0 {
            let mut block = marker.to_block();
            flip_byte(&mut g, &mut block);
            (item.clone().with_marker_block(Some(block)), "block_byte")
        } else {
            mutate(&mut g, item, marker)
        };
        *tried.entry(field).or_default() += 1;
        let digest = content_hash(&mutated).ok();
        let status = match extract_markers(&mutated) {
            Ok(ms) => ms
                .iter()
                .map(|m| {
                    modpipe_core::trust::verify_marker_digest(m, digest.as_ref(), &store, NOW)
                        .status
                })
                .find(|s| s.is_valid())
                .unwrap_or(VerificationStatus::Invalid),
            Err(_) => VerificationStatus::Invalid,
        };
        if status.is_valid() {
            *valid.entry(field).or_default() += 1;
        }
    }
    let total_valid: usize = valid.values().sum();
    check(
        total_valid == 0,
        format!(
            "{FUZZ_MUTATIONS} mutations over {} fields, {total_valid} valid {valid:?}",
            tried.len()
        ),
    )
}

// 5 ---------------------------------------------------------------------

fn binomial_majority(n: u64, p: f64) -> f64 {
    let choose = |n: u64, k: u64| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    (n / 2 + 1..=n)
        .map(|k| choose(n, k) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32))
        .sum()
}

fn criterion_5() -> Check {
    let expected = binomial_majority(9, 0.8);
    assert!((expected - 0.980_418_56).abs() < 1e-8);
    let pool = SimulatedVerifierPool::new(
        VerifierPoolSpec {
            n: 9,
            accuracy: 0.8,
            ..VerifierPoolSpec::default()
        },
        2024,
    );
    assert!(pool.registry().iter().all(|v| v.reputation == 1.0));
    let policy = TrustedPolicy::default();
    let mut correct = 0;
    for t in 0..CONDORCET_TRIALS {
        let truth = GroundTruth {
            is_deepfake: t % 2 == 0,
        };
        let verdicts = pool.verdicts_for(&format!("trial-{t}"), truth);
        let agg = aggregate_trusted(&verdicts, pool.registry(), &policy);
        assert!(verdicts.iter().all(|v| v.judgment != Judgment::Abstain));
        if agg.v_tr == Signal::from_bool(!truth.is_deepfake) {
            correct += 1;
        }
    }
    let empirical = correct as f64 / CONDORCET_TRIALS as f64;
    check(
        (empirical - expected).abs() <= CONDORCET_TOLERANCE,
        format!("empirical {empirical:.4} vs binomial {expected:.6} over {CONDORCET_TRIALS} trials, tol {CONDORCET_TOLERANCE}"),
    )
}

// 6, 7, 8 ---------------------------------------------------------------

fn sweep_spec() -> CorpusSpec {
    let mut spec = CorpusSpec::new(SWEEP_ITEMS, 0.5, 0.8, 0.1, 42);
    spec.marker_coverage = 0.3;
    spec
}

fn run_corpus(spec: &CorpusSpec, exec: Execution) -> (DecisionLog, BTreeMap<String, GroundTruth>) {
    let corpus = generate_corpus(spec).unwrap();
    let engine = corpus.engine(ModerationConfig::default()).unwrap();
    let mut log = DecisionLog::in_memory();
    engine
        .run_batch(&corpus.inputs(), NOW, exec, &mut log)
        .unwrap();
    (log, corpus.truth())
}

fn criterion_6(decisions: &[&ModerationDecision], truth: &BTreeMap<String, GroundTruth>) -> Check {
    let cases = cache_cases(decisions, truth).unwrap();
    let thetas = parse_grid("0:1:0.05").unwrap();
    assert_eq!(thetas.len(), 21);
    let rows = sweep(
        &cases,
        &PolicyConfig::default(),
        &thetas,
        &[],
        Execution::default(),
    )
    .unwrap();
    let fp: Vec<usize> = rows.iter().map(|r| r.counts.fp).collect();
    let fn_: Vec<usize> = rows.iter().map(|r| r.counts.fn_).collect();
    let fp_ok = fp.windows(2).all(|w| w[0] <= w[1]);
    let fn_ok = fn_.windows(2).all(|w| w[0] >= w[1]);
    let first = &rows[0];
    let last = &rows[rows.len() - 1];
    check(
        fp_ok && fn_ok && rows.len() == 21,
        format!(
            "{} items, {} thetas; FP {:.4}->{:.4}, FN {:.4}->{:.4}",
            decisions.len(),
            rows.len(),
            first.fp_rate.unwrap_or(f64::NAN),
            last.fp_rate.unwrap_or(f64::NAN),
            first.fn_rate.unwrap_or(f64::NAN),
            last.fn_rate.unwrap_or(f64::NAN),
        ),
    )
}

fn criterion_7(decisions: &[&ModerationDecision], truth: &BTreeMap<String, GroundTruth>) -> Check {
    let mut population = audit::Confusion::default();
    for d in decisions {
        population.add(d.label, truth[&d.content_id]);
    }
    let true_fp = population.fp as f64 / (population.fp + population.tn) as f64;
    let mut covered = 0;
    for rep in 0..CI_REPETITIONS {
        let s = audit::sample(
            decisions,
            Strata::Label,
            CI_SAMPLE,
            derive_seed(rep, b"audit"),
        )
        .unwrap();
        let report = evaluate(&s, truth).unwrap();
        covered += usize::from(report.fp_rate.contains(true_fp));
    }
    let coverage = covered as f64 / CI_REPETITIONS as f64;
    check(
        coverage >= CI_MIN_COVERAGE,
        format!("true FP {true_fp:.4}; covered {covered}/{CI_REPETITIONS} = {coverage:.3} (z={Z_95:.4}, min {CI_MIN_COVERAGE})"),
    )
}

fn criterion_8(first: &DecisionLog) -> Check {
    let (second, _) = run_corpus(&sweep_spec(), Execution::Sequential);
    let a = first.to_bytes();
    let b = second.to_bytes();
    let fingerprints_match = first
        .entries()
        .iter()
        .zip(second.entries())
        .all(|(x, y)| x.config_fingerprint == y.config_fingerprint);
    check(
        a == b && fingerprints_match,
        format!(
            "{} bytes vs {} bytes, identical={}",
            a.len(),
            b.len(),
            a == b
        ),
    )
}

// 9 ---------------------------------------------------------------------

fn criterion_9() -> Check {
    let mut spec = CorpusSpec::new(THROUGHPUT_ITEMS, 0.5, 0.8, 0.1, 9);
    spec.marker_coverage = 0.3;
    spec.negative_marker_coverage = 0.3;
    spec.verifiers = None;
    let corpus = generate_corpus(&spec).unwrap();
    let engine = corpus.engine(ModerationConfig::default()).unwrap();
    let inputs = corpus.inputs();
    let mut log = DecisionLog::in_memory();
    let t = Instant::now();
    engine
        .run_batch(&inputs, NOW, Execution::default(), &mut log)
        .unwrap();
    let rate = inputs.len() as f64 / t.elapsed().as_secs_f64();
    check(
        rate >= THROUGHPUT_MIN,
        format!(
            "{rate:.0} items/s on {} 64x64 rasters ({:?}, {} threads), min {THROUGHPUT_MIN}",
            inputs.len(),
            Execution::default(),
            std::thread::available_parallelism().map_or(1, |n| n.get())
        ),
    )
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    let mut report = |n: usize, name: &str, c: Check| {
        println!(
            "[{}] {n} {name}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.detail
        );
        results.push(c.pass);
    };
    report(
        1,
        "decision table brute force",
        timed(Some(TABLE_BUDGET), criterion_1),
    );
    report(
        2,
        "marker round trips",
        timed(Some(ROUND_TRIP_BUDGET), criterion_2),
    );
    report(3, "attack matrix", timed(Some(ATTACK_BUDGET), criterion_3));
    report(
        4,
        "chain tamper fuzz",
        timed(Some(FUZZ_BUDGET), criterion_4),
    );
    report(5, "crowd majority accuracy", timed(None, criterion_5));

    let t = Instant::now();
    let (log, truth) = run_corpus(&sweep_spec(), Execution::default());
    println!(
        "corpus of {SWEEP_ITEMS} moderated in {:.2} s",
        t.elapsed().as_secs_f64()
    );
    let decisions: Vec<&ModerationDecision> = log.entries().iter().collect();
    report(
        6,
        "threshold sweep monotonicity",
        timed(None, || criterion_6(&decisions, &truth)),
    );
    report(
        7,
        "audit interval calibration",
        timed(None, || criterion_7(&decisions, &truth)),
    );
    report(8, "replay determinism", timed(None, || criterion_8(&log)));
    report(9, "throughput", criterion_9());

    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
