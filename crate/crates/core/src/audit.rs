//! Random-sample audits of logged decisions and threshold/weight tradeoff
//! sweeps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::GroundTruth;
use crate::par::{self, Execution};
use crate::pipeline::{label_from, ModerationDecision};
use crate::prng::{derive_seed, SplitMix64};
use crate::scoring::{Label, PolicyConfig, ScoreVector, Weights};
use crate::trust::VerificationStatus;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("requested {requested} items from a population of {population}")]
    InsufficientPopulation { requested: usize, population: usize },
    #[error("no ground truth for `{0}`")]
    MissingGroundTruth(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strata {
    #[default]
    Label,
    Category,
}

impl std::str::FromStr for Strata {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "label" => Ok(Strata::Label),
            "category" => Ok(Strata::Category),
            other => Err(format!("unknown strata `{other}`")),
        }
    }
}

fn stratum_key(d: &ModerationDecision, strata: Strata) -> String {
    match strata {
        Strata::Label => d.label.to_string(),
        Strata::Category => d
            .category_tags
            .iter()
            .next()
            .cloned()
            .unwrap_or_else(|| crate::model::UNCATEGORIZED.to_owned()),
    }
}

/// Proportional allocation of `n` over strata of the given sizes, rounded
/// by largest remainder. Ties in the remainder go to the earlier stratum.
pub fn allocate(sizes: &[usize], n: usize) -> Result<Vec<usize>, AuditError> {
    let total: usize = sizes.iter().sum();
    if n > total {
        return Err(AuditError::InsufficientPopulation {
            requested: n,
            population: total,
        });
    }
    if total == 0 {
        return Ok(vec![0; sizes.len()]);
    }
    let mut alloc: Vec<usize> = sizes.iter().map(|s| s * n / total).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // Remainders compared exactly as (s * n) mod total.
    order.sort_by_key(|&i| std::cmp::Reverse(sizes[i] * n % total));
    let mut left = n - alloc.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        if alloc[i] < sizes[i] {
            alloc[i] += 1;
            left -= 1;
        }
    }
    Ok(alloc)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumAllocation {
    pub population: usize,
    pub sampled: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleDescriptor {
    pub strata: Strata,
    pub n: usize,
    pub seed: u64,
    pub allocation: BTreeMap<String, StratumAllocation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<'a> {
    pub descriptor: SampleDescriptor,
    pub decisions: Vec<&'a ModerationDecision>,
}

/// Stratified sample without replacement from `population` (one decision
/// per item, typically the latest).
pub fn sample<'a>(
    population: &[&'a ModerationDecision],
    strata: Strata,
    n: usize,
    seed: u64,
) -> Result<Sample<'a>, AuditError> {
    let mut groups: BTreeMap<String, Vec<&'a ModerationDecision>> = BTreeMap::new();
    for d in population {
        groups.entry(stratum_key(d, strata)).or_default().push(d);
    }
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let alloc = allocate(&sizes, n)?;
    let mut decisions = Vec::with_capacity(n);
    let mut allocation = BTreeMap::new();
    for ((key, mut members), k) in groups.into_iter().zip(alloc) {
        let mut g = SplitMix64::new(derive_seed(seed, key.as_bytes()));
        let len = members.len();
        for i in 0..k {
            let j = i + g.below((len - i) as u64) as usize;
            members.swap(i, j);
        }
        decisions.extend_from_slice(&members[..k]);
        allocation.insert(
            key,
            StratumAllocation {
                population: len,
                sampled: k,
            },
        );
    }
    Ok(Sample {
        descriptor: SampleDescriptor {
            strata,
            n,
            seed,
            allocation,
        },
        decisions,
    })
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub count: usize,
    pub of: usize,
    /// `None` when the denominator is empty.
    pub value: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Rate {
    pub fn new(count: usize, of: usize) -> Self {
        let (ci_low, ci_high) = wilson(count, of, Z_95);
        Self {
            count,
            of,
            value: (of > 0).then(|| count as f64 / of as f64),
            ci_low,
            ci_high,
        }
    }

    pub fn contains(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    /// Flagged labels on deepfakes are true positives; unflagged labels on
    /// deepfakes are false negatives.
    pub fn add(&mut self, label: Label, truth: GroundTruth) {
        match (truth.is_deepfake, label.is_flagged()) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `fp / (fp + tn)`.
    pub fn fp_rate(&self) -> Rate {
        Rate::new(self.fp, self.fp + self.tn)
    }

    /// `fn / (fn + tp)`.
    pub fn fn_rate(&self) -> Rate {
        Rate::new(self.fn_, self.fn_ + self.tp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    #[serde(flatten)]
    pub counts: Confusion,
    pub n: usize,
    pub fp_rate: Rate,
    pub fn_rate: Rate,
    pub sample: SampleDescriptor,
}

pub fn evaluate(
    sample: &Sample<'_>,
    truth: &BTreeMap<String, GroundTruth>,
) -> Result<ConfusionReport, AuditError> {
    let mut counts = Confusion::default();
    for d in &sample.decisions {
        let t = truth
            .get(&d.content_id)
            .ok_or_else(|| AuditError::MissingGroundTruth(d.content_id.clone()))?;
        counts.add(d.label, *t);
    }
    Ok(ConfusionReport {
        counts,
        n: counts.total(),
        fp_rate: counts.fp_rate(),
        fn_rate: counts.fn_rate(),
        sample: sample.descriptor.clone(),
    })
}

/// The scoring inputs of one logged decision, replayable under another
/// policy without re-running detectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedCase {
    pub status: VerificationStatus,
    pub vector: Option<ScoreVector>,
    pub truth: GroundTruth,
}

pub fn cache_cases(
    decisions: &[&ModerationDecision],
    truth: &BTreeMap<String, GroundTruth>,
) -> Result<Vec<CachedCase>, AuditError> {
    decisions
        .iter()
        .map(|d| {
            let t = truth
                .get(&d.content_id)
                .ok_or_else(|| AuditError::MissingGroundTruth(d.content_id.clone()))?;
            Ok(CachedCase {
                status: d.marker_verification.status,
                vector: d.score_vector,
                truth: *t,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta: f64,
    pub weights: Weights,
    #[serde(flatten)]
    pub counts: Confusion,
    pub fp_rate: Option<f64>,
    pub fn_rate: Option<f64>,
}

pub fn replay(cases: &[CachedCase], policy: &PolicyConfig) -> Confusion {
    let mut c = Confusion::default();
    for case in cases {
        c.add(
            label_from(case.status, case.vector.as_ref(), policy),
            case.truth,
        );
    }
    c
}

/// One scoring replay per (θ, weights) point, sorted by θ.
pub fn sweep(
    cases: &[CachedCase],
    base: &PolicyConfig,
    thetas: &[f64],
    weights: &[Weights],
    exec: Execution,
) -> Result<Vec<SweepRow>, AuditError> {
    if thetas.is_empty() {
        return Err(AuditError::InvalidGrid("empty θ grid".into()));
    }
    let weight_grid: Vec<Weights> = if weights.is_empty() {
        vec![base.weights]
    } else {
        weights.to_vec()
    };
    let mut points = Vec::new();
    for &t in thetas {
        for w in &weight_grid {
            let p = base.with_threshold(t).with_weights(*w);
            p.validate()
                .map_err(|e| AuditError::InvalidGrid(e.to_string()))?;
            points.push(p);
        }
    }
    let mut rows = par::map(exec, &points, |p| {
        let counts = replay(cases, p);
        SweepRow {
            theta: p.threshold,
            weights: p.weights,
            counts,
            fp_rate: counts.fp_rate().value,
            fn_rate: counts.fn_rate().value,
        }
    });
    rows.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "theta,w_technical,w_trusted,w_risk,tp,fp,tn,fn,fp_rate,fn_rate";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    let rate = |r: Option<f64>| r.map(|v| format!("{v:.6}")).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.theta,
            r.weights.technical,
            r.weights.trusted,
            r.weights.risk,
            r.counts.tp,
            r.counts.fp,
            r.counts.tn,
            r.counts.fn_,
            rate(r.fp_rate),
            rate(r.fn_rate)
        ));
    }
    out
}

/// `start:end:step`, inclusive of both ends; values rounded to 1e-9 so
/// that `0:1:0.05` yields exactly 0.05, 0.1, ...
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, AuditError> {
    let bad = || AuditError::InvalidGrid(spec.to_owned());
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [v] => Ok(vec![v]),
        [start, end, step] if step > 0.0 && end >= start => {
            let k = ((end - start) / step + 1e-9).floor() as usize;
            Ok((0..=k)
                .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
                .collect())
        }
        _ => Err(bad()),
    }
}
