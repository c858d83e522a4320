//! Seeded synthetic corpora with ground truth, plus the simulated detection
//! channel and crowd that go with them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::KeyPair;
use crate::detection::{
    Detector, Judgment, ResidueDetector, SimulatedDetector, TrustedVerdict, VerifierKind,
    VerifierProfile, VerifierRegistry,
};
use crate::marker::{embed_metadata_marker, sign_marker, Polarity, Scheme};
use crate::media::Raster;
use crate::model::{
    parse_manifest, write_manifest, ContentItem, GroundTruth, ManifestError, ManifestRecord,
    Modality, OriginContext,
};
use crate::par::{self, Execution};
use crate::pipeline::{Engine, ModerationConfig, PipelineError, VerifierPool};
use crate::prng::{derive_seed, SplitMix64};
use crate::trust::{IssuerPki, Timestamp, TrustStore, TrustStoreError};
use crate::watermark::{embed_frequency, embed_statistical, DEFAULT_DELTA};

pub const GENERATOR_ISSUER: &str = "genai-studio";
pub const CAMERA_ISSUER: &str = "newsroom-camera";
const FORGER_ISSUER: &str = "forger";
const KEY_COUNT: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierPoolSpec {
    #[serde(default = "nine")]
    pub n: usize,
    #[serde(default = "point_eight")]
    pub accuracy: f64,
    #[serde(default = "three")]
    pub quorum: usize,
    /// Probability that a verifier answers within the wait budget.
    #[serde(default = "one")]
    pub response_rate: f64,
    #[serde(default = "yes")]
    pub signed: bool,
}

fn nine() -> usize {
    9
}
fn three() -> usize {
    3
}
fn point_eight() -> f64 {
    0.8
}
fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

impl Default for VerifierPoolSpec {
    fn default() -> Self {
        Self {
            n: nine(),
            accuracy: point_eight(),
            quorum: three(),
            response_rate: one(),
            signed: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_items: usize,
    pub deepfake_fraction: f64,
    /// Share of deepfakes carrying a valid positive marker.
    #[serde(default)]
    pub marker_coverage: f64,
    /// Share of real items carrying a valid negative marker.
    #[serde(default)]
    pub negative_marker_coverage: f64,
    #[serde(default)]
    pub tamper_fraction: f64,
    /// Share of unmarked deepfakes that still carry generator watermark
    /// residue.
    #[serde(default)]
    pub watermark_fraction: f64,
    /// Relative weights of category tags.
    #[serde(default = "default_mix")]
    pub category_mix: BTreeMap<String, f64>,
    /// Expected reach is uniform on `[0, reach_max]`.
    #[serde(default = "default_reach_max")]
    pub reach_max: u64,
    pub detector: ChannelSpec,
    #[serde(default)]
    pub verifiers: Option<VerifierPoolSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_now")]
    pub now: Timestamp,
}

fn default_mix() -> BTreeMap<String, f64> {
    [
        ("animals", 0.3),
        ("sports", 0.2),
        ("music", 0.15),
        ("political_communication", 0.15),
        ("public_health", 0.1),
        ("elections", 0.1),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v))
    .collect()
}

fn default_reach_max() -> u64 {
    200_000
}

fn default_side() -> usize {
    64
}

fn default_now() -> Timestamp {
    1_700_000_000
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    TrustStore(#[from] TrustStoreError),
    #[error("item `{0}` has no ground truth")]
    MissingGroundTruth(String),
}

impl CorpusSpec {
    pub fn new(n_items: usize, deepfake_fraction: f64, tpr: f64, fpr: f64, seed: u64) -> Self {
        Self {
            n_items,
            deepfake_fraction,
            marker_coverage: 0.0,
            negative_marker_coverage: 0.0,
            tamper_fraction: 0.0,
            watermark_fraction: 0.0,
            category_mix: default_mix(),
            reach_max: default_reach_max(),
            detector: ChannelSpec { tpr, fpr },
            verifiers: Some(VerifierPoolSpec::default()),
            seed,
            width: default_side(),
            height: default_side(),
            now: default_now(),
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidSpec(m.to_owned()));
        if self.n_items == 0 {
            return bad("n_items must be positive");
        }
        let fractions = [
            self.deepfake_fraction,
            self.marker_coverage,
            self.negative_marker_coverage,
            self.tamper_fraction,
            self.watermark_fraction,
        ];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("fractions must lie in [0, 1]");
        }
        if self.category_mix.is_empty()
            || self
                .category_mix
                .values()
                .any(|w| !w.is_finite() || *w < 0.0)
            || self.category_mix.values().sum::<f64>() <= 0.0
        {
            return bad("category_mix needs non-negative weights with a positive sum");
        }
        SimulatedDetector::new(self.detector.tpr, self.detector.fpr, 0)
            .map_err(CorpusError::InvalidSpec)?;
        if let Some(v) = &self.verifiers {
            if v.n == 0 || v.quorum == 0 {
                return bad("verifier pool needs n >= 1 and quorum >= 1");
            }
            if !(0.0..=1.0).contains(&v.accuracy) || !(0.0..=1.0).contains(&v.response_rate) {
                return bad("verifier accuracy and response_rate must lie in [0, 1]");
            }
        }
        if self.width < 8 || self.height < 8 {
            return bad("rasters must be at least 8x8");
        }
        Ok(())
    }

    pub fn generator_keys(&self) -> Vec<u64> {
        (0..KEY_COUNT)
            .map(|i| derive_seed(self.seed, format!("generator-key-{i}").as_bytes()))
            .collect()
    }

    fn pki(&self, issuer: &str) -> IssuerPki {
        let year = 365 * 24 * 3600;
        IssuerPki::generate(self.seed, issuer, self.now - year, self.now + year)
    }

    pub fn trust_store(&self) -> TrustStore {
        TrustStore::new([
            self.pki(GENERATOR_ISSUER).root,
            self.pki(CAMERA_ISSUER).root,
        ])
    }

    pub fn channel(&self) -> SimulatedDetector {
        SimulatedDetector {
            id: "simulated".into(),
            tpr: self.detector.tpr,
            fpr: self.detector.fpr,
            seed: derive_seed(self.seed, b"channel"),
            latency_ms: 1.0,
        }
    }

    pub fn residue(&self) -> ResidueDetector {
        ResidueDetector::new(self.generator_keys())
    }

    pub fn pool(&self) -> Option<SimulatedVerifierPool> {
        self.verifiers
            .as_ref()
            .map(|v| SimulatedVerifierPool::new(v.clone(), derive_seed(self.seed, b"verifiers")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub item: ContentItem,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub items: Vec<CorpusItem>,
    pub trust_store: TrustStore,
}

struct Issuers {
    generator: IssuerPki,
    camera: IssuerPki,
    forger: IssuerPki,
    keys: Vec<u64>,
}

fn uniform(g: &mut SplitMix64) -> f64 {
    (g.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// A smooth scene: a gradient plus a bump, light texture, values in
/// `[16, 239]` so embedding never clips.
fn scene(g: &mut SplitMix64, w: usize, h: usize) -> Raster {
    let mut r = Raster::new(w, h, 3);
    let base: [i64; 3] = std::array::from_fn(|_| 60 + g.below(100) as i64);
    let gx = g.below(5) as i64 - 2;
    let gy = g.below(5) as i64 - 2;
    let (cx, cy) = (g.below(w as u64) as i64, g.below(h as u64) as i64);
    let radius = (w.min(h) / 4).max(2) as i64;
    let amp = g.below(40) as i64 + 10;
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let d2 = (x - cx).pow(2) + (y - cy).pow(2);
            let bump = (radius * radius - d2).max(0) * amp / (radius * radius);
            for (c, b) in base.iter().enumerate() {
                let texture = g.below(5) as i64 - 2;
                let v =
                    b + gx * (x - w as i64 / 2) / 2 + gy * (y - h as i64 / 2) / 2 + bump + texture;
                r.data[(y as usize * w + x as usize) * 3 + c] = v.clamp(16, 239) as u8;
            }
        }
    }
    r
}

fn pick_category(g: &mut SplitMix64, mix: &BTreeMap<String, f64>) -> String {
    let total: f64 = mix.values().sum();
    let mut u = uniform(g) * total;
    for (k, w) in mix {
        if u < *w {
            return k.clone();
        }
        u -= w;
    }
    mix.keys().next_back().expect("non-empty mix").clone()
}

fn signed_item(
    item: ContentItem,
    pki: &IssuerPki,
    scheme: Scheme,
    polarity: Polarity,
    key: u64,
) -> ContentItem {
    let item = match scheme {
        Scheme::Statistical => {
            embed_statistical(&item, key, polarity).expect("corpus rasters are large enough")
        }
        Scheme::Frequency => {
            embed_frequency(&item, key, polarity, DEFAULT_DELTA).expect("corpus rasters are 8x8+")
        }
        Scheme::Metadata | Scheme::Cryptographic => item,
    };
    let mut marker = sign_marker(&item, &pki.issuer_key, scheme, polarity, &pki.chain)
        .expect("leaf key matches");
    if scheme.is_keyed() {
        marker.key_id = format!("{key:016x}");
        marker.signature = pki.issuer_key.sign(&marker.signing_message());
    }
    embed_metadata_marker(&item, &marker).expect("fresh item has no block")
}

fn generate_item(spec: &CorpusSpec, issuers: &Issuers, i: usize) -> CorpusItem {
    let id = format!("item-{i:06}");
    let mut g = SplitMix64::new(derive_seed(spec.seed, id.as_bytes()));
    let is_deepfake = uniform(&mut g) < spec.deepfake_fraction;
    let category = pick_category(&mut g, &spec.category_mix);
    let reach = g.below(spec.reach_max.saturating_add(1));
    let source = format!("src-{}", g.below(50));
    let raster = scene(&mut g, spec.width, spec.height);
    let origin = OriginContext::new(source, [category], reach);
    let mut item = ContentItem::raster(id, &raster).with_origin(origin);

    let (u_mark, u_wm, u_tamper) = (uniform(&mut g), uniform(&mut g), uniform(&mut g));
    let scheme = Scheme::ALL[g.below(4) as usize];
    let key = issuers.keys[g.below(issuers.keys.len() as u64) as usize];
    if is_deepfake {
        if u_mark < spec.marker_coverage {
            item = signed_item(item, &issuers.generator, scheme, Polarity::Positive, key);
        } else if u_wm < spec.watermark_fraction {
            item = embed_statistical(&item, key, Polarity::Positive).expect("large enough");
        }
        if u_tamper < spec.tamper_fraction {
            // A forged authenticity claim from an issuer outside the store.
            let bare = item.clone().with_marker_block(None);
            item = signed_item(
                bare,
                &issuers.forger,
                Scheme::Metadata,
                Polarity::Negative,
                key,
            );
        }
    } else {
        if u_mark < spec.negative_marker_coverage {
            item = signed_item(item, &issuers.camera, scheme, Polarity::Negative, key);
        }
        if u_tamper < spec.tamper_fraction {
            let marked = match item.marker_block {
                Some(_) => item.clone(),
                None => signed_item(
                    item.clone(),
                    &issuers.camera,
                    Scheme::Metadata,
                    Polarity::Negative,
                    key,
                ),
            };
            let mut block = marked.marker_block.clone().expect("just marked");
            block.truncate(block.len() - 7);
            item = marked.with_marker_block(Some(block));
        }
    }
    CorpusItem {
        item,
        truth: GroundTruth { is_deepfake },
    }
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus, CorpusError> {
    generate_corpus_with(spec, Execution::default())
}

pub fn generate_corpus_with(spec: &CorpusSpec, exec: Execution) -> Result<Corpus, CorpusError> {
    spec.validate()?;
    let issuers = Issuers {
        generator: spec.pki(GENERATOR_ISSUER),
        camera: spec.pki(CAMERA_ISSUER),
        forger: IssuerPki::generate(
            spec.seed ^ 0xF0F0,
            FORGER_ISSUER,
            spec.now - 3600,
            spec.now + 3600,
        ),
        keys: spec.generator_keys(),
    };
    let items = par::map_range(exec, spec.n_items, |i| generate_item(spec, &issuers, i));
    Ok(Corpus {
        spec: spec.clone(),
        items,
        trust_store: spec.trust_store(),
    })
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SPEC_FILE: &str = "spec.json";
pub const TRUST_STORE_FILE: &str = "trust_store.json";
pub const KEYS_FILE: &str = "generator_keys.json";
pub const VERIFIERS_FILE: &str = "verifiers.json";
pub const TRUTH_FILE: &str = "truth.jsonl";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CorpusError> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

impl Corpus {
    pub fn detectors(&self) -> Vec<Arc<dyn Detector>> {
        vec![Arc::new(self.spec.residue()), Arc::new(self.spec.channel())]
    }

    /// An engine with the corpus trust store, reference detectors and the
    /// simulated crowd (when `spec.verifiers` is set).
    pub fn engine(&self, config: ModerationConfig) -> Result<Engine, PipelineError> {
        let mut e = Engine::new(config, self.trust_store.clone())?;
        for d in self.detectors() {
            e = e.with_detector(d);
        }
        if let Some(pool) = self.spec.pool() {
            e = e.with_pool(Arc::new(pool));
        }
        Ok(e)
    }

    pub fn inputs(&self) -> Vec<(ContentItem, Option<GroundTruth>)> {
        self.items
            .iter()
            .map(|c| (c.item.clone(), Some(c.truth)))
            .collect()
    }

    pub fn truth(&self) -> BTreeMap<String, GroundTruth> {
        self.items
            .iter()
            .map(|c| (c.item.id.clone(), c.truth))
            .collect()
    }

    /// Writes media, marker sidecars, the manifest and supporting files.
    pub fn write(&self, dir: &Path) -> Result<(), CorpusError> {
        let media = dir.join("media");
        std::fs::create_dir_all(&media).map_err(io_err(&media))?;
        let mut records = Vec::with_capacity(self.items.len());
        let mut truth = String::new();
        for c in &self.items {
            let payload_path = PathBuf::from("media").join(format!(
                "{}.{}",
                c.item.id,
                extension(c.item.modality)
            ));
            write(&dir.join(&payload_path), &c.item.payload)?;
            let marker_path = match &c.item.marker_block {
                Some(block) => {
                    let p = PathBuf::from("media").join(format!("{}.dfmk", c.item.id));
                    write(&dir.join(&p), block)?;
                    Some(p)
                }
                None => None,
            };
            records.push(ManifestRecord {
                id: c.item.id.clone(),
                modality: c.item.modality,
                payload_path,
                origin: c.item.origin.clone(),
                ground_truth: Some(c.truth),
                marker_path,
            });
            truth.push_str(
                &serde_json::json!({"id": c.item.id, "is_deepfake": c.truth.is_deepfake})
                    .to_string(),
            );
            truth.push('\n');
        }
        write(
            &dir.join(MANIFEST_FILE),
            write_manifest(&records).as_bytes(),
        )?;
        write(&dir.join(TRUTH_FILE), truth.as_bytes())?;
        let spec = serde_json::to_string_pretty(&self.spec).expect("spec serializes");
        write(&dir.join(SPEC_FILE), spec.as_bytes())?;
        write(
            &dir.join(TRUST_STORE_FILE),
            self.trust_store.to_json().as_bytes(),
        )?;
        let keys: Vec<String> = self
            .spec
            .generator_keys()
            .iter()
            .map(|k| format!("{k:016x}"))
            .collect();
        write(
            &dir.join(KEYS_FILE),
            serde_json::to_string_pretty(&keys)
                .expect("keys")
                .as_bytes(),
        )?;
        if let Some(pool) = self.spec.pool() {
            write(
                &dir.join(VERIFIERS_FILE),
                pool.registry().to_json().as_bytes(),
            )?;
        }
        Ok(())
    }

    /// Reads a corpus written by [`Corpus::write`].
    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(io_err(&p))
        };
        let spec_path = dir.join(SPEC_FILE);
        let spec: CorpusSpec =
            serde_json::from_str(&read(SPEC_FILE)?).map_err(|source| CorpusError::Json {
                path: spec_path,
                source,
            })?;
        let trust_store = TrustStore::from_json(&read(TRUST_STORE_FILE)?)?;
        let records = parse_manifest(&read(MANIFEST_FILE)?)?;
        let mut items = Vec::with_capacity(records.len());
        for r in records {
            let truth = r
                .ground_truth
                .ok_or_else(|| CorpusError::MissingGroundTruth(r.id.clone()))?;
            items.push(CorpusItem {
                item: r.load(dir)?,
                truth,
            });
        }
        Ok(Self {
            spec,
            items,
            trust_store,
        })
    }
}

/// Reads the hex key list written to `generator_keys.json`.
pub fn parse_generator_keys(text: &str) -> Result<Vec<u64>, String> {
    let keys: Vec<String> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    keys.iter()
        .map(|k| u64::from_str_radix(k, 16).map_err(|_| format!("bad key `{k}`")))
        .collect()
}

pub fn extension(m: Modality) -> &'static str {
    match m {
        Modality::Raster => "ppm",
        Modality::Audio => "pcm",
        Modality::Text => "txt",
    }
}

/// Parses a truth file: one `{"id":..,"is_deepfake":..}` object per line.
pub fn parse_truth(text: &str) -> Result<BTreeMap<String, GroundTruth>, serde_json::Error> {
    #[derive(Deserialize)]
    struct Line {
        id: String,
        is_deepfake: bool,
    }
    let mut out = BTreeMap::new();
    for l in text.lines().filter(|l| !l.trim().is_empty()) {
        let line: Line = serde_json::from_str(l)?;
        out.insert(
            line.id,
            GroundTruth {
                is_deepfake: line.is_deepfake,
            },
        );
    }
    Ok(out)
}

/// Independent verifiers of fixed accuracy. Each verifier's response to an
/// item depends only on `(seed, item id, verifier id)`.
#[derive(Debug, Clone)]
pub struct SimulatedVerifierPool {
    spec: VerifierPoolSpec,
    seed: u64,
    keys: Vec<KeyPair>,
    registry: VerifierRegistry,
}

impl SimulatedVerifierPool {
    pub fn new(spec: VerifierPoolSpec, seed: u64) -> Self {
        let ids: Vec<String> = (0..spec.n).map(|i| format!("verifier-{i:02}")).collect();
        let keys: Vec<KeyPair> = ids.iter().map(|id| KeyPair::derive(seed, id)).collect();
        let registry =
            VerifierRegistry::new(ids.iter().zip(&keys).map(|(id, k)| VerifierProfile {
                verifier_id: id.clone(),
                kind: VerifierKind::Crowd,
                reputation: 1.0,
                public_key: k.public_key(),
            }));
        Self {
            spec,
            seed,
            keys,
            registry,
        }
    }

    pub fn spec(&self) -> &VerifierPoolSpec {
        &self.spec
    }

    pub fn key(&self, verifier_id: &str) -> Option<&KeyPair> {
        self.registry
            .iter()
            .position(|p| p.verifier_id == verifier_id)
            .map(|i| &self.keys[i])
    }

    pub fn verdicts_for(&self, content_id: &str, truth: GroundTruth) -> Vec<TrustedVerdict> {
        let mut out = Vec::new();
        for (profile, key) in self.registry.iter().zip(&self.keys) {
            let label = format!("{content_id}/{}", profile.verifier_id);
            let mut g = SplitMix64::new(derive_seed(self.seed, label.as_bytes()));
            let responds = uniform(&mut g) < self.spec.response_rate;
            let correct = uniform(&mut g) < self.spec.accuracy;
            if !responds {
                continue;
            }
            let says_fake = truth.is_deepfake == correct;
            let judgment = if says_fake {
                Judgment::Untrustworthy
            } else {
                Judgment::Trustworthy
            };
            let v = TrustedVerdict::new(content_id, profile.verifier_id.clone(), judgment);
            out.push(if self.spec.signed { v.signed(key) } else { v });
        }
        out
    }
}

impl VerifierPool for SimulatedVerifierPool {
    fn registry(&self) -> &VerifierRegistry {
        &self.registry
    }

    fn request(&self, item: &ContentItem, truth: Option<GroundTruth>) -> Vec<TrustedVerdict> {
        match truth {
            Some(t) => self.verdicts_for(&item.id, t),
            None => Vec::new(),
        }
    }
}
