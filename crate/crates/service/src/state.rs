use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use modpipe_core::audit::{evaluate, sample, ConfusionReport, Strata};
use modpipe_core::corpus::{extension, parse_generator_keys};
use modpipe_core::detection::{
    Detector, ResidueDetector, SubprocessDetector, TrustedVerdict, VerifierRegistry,
};
use modpipe_core::log::{DecisionLog, LogError};
use modpipe_core::model::{ContentItem, GroundTruth, Modality};
use modpipe_core::pipeline::{
    Engine, ModerationConfig, ModerationDecision, NewEvidence, PipelineError, ReviewState,
    ReviewTask,
};
use modpipe_core::scoring::{decision_table_csv, Label};
use modpipe_core::trust::{Timestamp, TrustStore, TrustStoreError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ApiError;
use crate::jsonl::JsonlFile;
use crate::reviews::ReviewBook;

pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs() as Timestamp)
    })
}

pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const REVIEWS_FILE: &str = "reviews.jsonl";
pub const POLICIES_FILE: &str = "policies.jsonl";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("${var}: {reason}")]
    Env { var: &'static str, reason: String },
    #[error(transparent)]
    TrustStore(#[from] TrustStoreError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Log(#[from] LogError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ServiceError + '_ {
    move |source| ServiceError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Everything needed to start the service.
#[derive(Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub trust_store: TrustStore,
    pub registry: VerifierRegistry,
    pub detectors: Vec<Arc<dyn Detector>>,
    /// Used only when the data directory has no policy history yet.
    pub policy: Option<ModerationConfig>,
    pub clock: Clock,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            trust_store: TrustStore::default(),
            registry: VerifierRegistry::default(),
            detectors: vec![Arc::new(ResidueDetector::new([]))],
            policy: None,
            clock: system_clock(),
        }
    }

    /// Reads `MODPIPE_PORT`, `MODPIPE_DATA_DIR`, `MODPIPE_TRUST_STORE`,
    /// `MODPIPE_VERIFIERS`, `MODPIPE_GENERATOR_KEYS`, `MODPIPE_POLICY` and
    /// `MODPIPE_DETECTOR_CMD`.
    pub fn from_env() -> Result<(Self, u16), ServiceError> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        let read = |p: &str| std::fs::read_to_string(p).map_err(io_err(Path::new(p)));
        let port = match var("MODPIPE_PORT") {
            Some(p) => p.parse().map_err(|_| ServiceError::Env {
                var: "MODPIPE_PORT",
                reason: format!("not a port: {p}"),
            })?,
            None => DEFAULT_PORT,
        };
        let mut cfg = Self::new(var("MODPIPE_DATA_DIR").unwrap_or_else(|| "modpipe-data".into()));
        if let Some(p) = var("MODPIPE_TRUST_STORE") {
            cfg.trust_store = TrustStore::from_json(&read(&p)?)?;
        }
        if let Some(p) = var("MODPIPE_VERIFIERS") {
            cfg.registry =
                VerifierRegistry::from_json(&read(&p)?).map_err(|e| ServiceError::Env {
                    var: "MODPIPE_VERIFIERS",
                    reason: e.to_string(),
                })?;
        }
        if let Some(p) = var("MODPIPE_GENERATOR_KEYS") {
            let keys = parse_generator_keys(&read(&p)?).map_err(|reason| ServiceError::Env {
                var: "MODPIPE_GENERATOR_KEYS",
                reason,
            })?;
            cfg.detectors = vec![Arc::new(ResidueDetector::new(keys))];
        }
        if let Some(cmd) = var("MODPIPE_DETECTOR_CMD") {
            let mut parts = cmd.split_whitespace().map(str::to_owned);
            let program = parts.next().expect("non-empty");
            cfg.detectors.push(Arc::new(SubprocessDetector::new(
                "external",
                program,
                parts.collect(),
            )));
        }
        if let Some(p) = var("MODPIPE_POLICY") {
            cfg.policy = Some(ModerationConfig::from_json(&read(&p)?)?);
        }
        Ok((cfg, port))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyView {
    pub fingerprint: String,
    pub config: ModerationConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyRecord {
    fingerprint: String,
    at: Timestamp,
    config: ModerationConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestReceipt {
    pub content_id: String,
    pub created: bool,
    pub decision: ModerationDecision,
}

/// What a verifier sees of an open task: the decision so far, without any
/// peer verdicts or their count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueueEntry {
    pub task_id: String,
    pub content_id: String,
    pub created_at: Timestamp,
    pub expires_at: Timestamp,
    pub required_quorum: usize,
    pub decision: ModerationDecision,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictReceipt {
    pub task_id: String,
    pub state: ReviewState,
    pub quorum_reached: bool,
    /// The re-evaluated decision, once quorum is reached.
    pub decision: Option<ModerationDecision>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRequest {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strata: Strata,
    pub truth: BTreeMap<String, GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub audit_id: String,
    pub created_at: Timestamp,
    pub config_fingerprint: String,
    /// Items with both a decision and uploaded ground truth.
    pub population: usize,
    pub report: ConfusionReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub content_id: String,
    pub fingerprint: String,
    pub fingerprint_known: bool,
    pub stored_label: Label,
    pub rederived_label: Option<Label>,
    pub consistent: bool,
}

struct Shared {
    trust_store: TrustStore,
    registry: VerifierRegistry,
    detectors: Vec<Arc<dyn Detector>>,
    clock: Clock,
    engine: RwLock<Arc<Engine>>,
    policies: Mutex<(JsonlFile, BTreeMap<String, ModerationConfig>)>,
    log: Mutex<DecisionLog>,
    reviews: Mutex<ReviewBook>,
    audits: Mutex<BTreeMap<String, AuditRecord>>,
    owners: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    media_dir: PathBuf,
    audit_dir: PathBuf,
}

/// Shared service state. Writes to the decision log are serialized by one
/// mutex; operations on the same content id are serialized by an owner lock.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn build_engine(
    config: ModerationConfig,
    store: &TrustStore,
    detectors: &[Arc<dyn Detector>],
    registry: &VerifierRegistry,
) -> Result<Engine, PipelineError> {
    let mut e = Engine::new(config, store.clone())?.with_registry(registry.clone());
    for d in detectors {
        e = e.with_detector(d.clone());
    }
    Ok(e)
}

impl AppState {
    pub fn open(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        let dir = &cfg.data_dir;
        let media_dir = dir.join("media");
        let audit_dir = dir.join("audits");
        for d in [dir, &media_dir, &audit_dir] {
            std::fs::create_dir_all(d).map_err(io_err(d))?;
        }

        let policy_path = dir.join(POLICIES_FILE);
        let (mut policy_file, history) =
            JsonlFile::open::<PolicyRecord>(&policy_path).map_err(io_err(&policy_path))?;
        let now = (cfg.clock)();
        let current = match history.last() {
            Some(r) => r.config.clone(),
            None => {
                let config = cfg.policy.clone().unwrap_or_default();
                config.validate()?;
                let record = PolicyRecord {
                    fingerprint: config.fingerprint().to_hex(),
                    at: now,
                    config: config.clone(),
                };
                policy_file.append(&record).map_err(io_err(&policy_path))?;
                config
            }
        };
        let mut known: BTreeMap<String, ModerationConfig> = history
            .into_iter()
            .map(|r| (r.fingerprint, r.config))
            .collect();
        known.insert(current.fingerprint().to_hex(), current.clone());
        let engine = build_engine(current, &cfg.trust_store, &cfg.detectors, &cfg.registry)?;

        let (log, recovery) = DecisionLog::open(dir.join(DECISIONS_FILE))?;
        if recovery.discarded_bytes > 0 {
            log::warn!(
                "decision log: discarded {} byte torn tail",
                recovery.discarded_bytes
            );
        }
        let review_path = dir.join(REVIEWS_FILE);
        let reviews = ReviewBook::open(&review_path).map_err(io_err(&review_path))?;

        let mut audits = BTreeMap::new();
        for entry in std::fs::read_dir(&audit_dir).map_err(io_err(&audit_dir))? {
            let path = entry.map_err(io_err(&audit_dir))?.path();
            let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            match serde_json::from_str::<AuditRecord>(&text) {
                Ok(r) => {
                    audits.insert(r.audit_id.clone(), r);
                }
                Err(e) => log::warn!("skipping unreadable audit {}: {e}", path.display()),
            }
        }

        let state = Self(Arc::new(Shared {
            trust_store: cfg.trust_store,
            registry: cfg.registry,
            detectors: cfg.detectors,
            clock: cfg.clock,
            engine: RwLock::new(Arc::new(engine)),
            policies: Mutex::new((policy_file, known)),
            log: Mutex::new(log),
            reviews: Mutex::new(reviews),
            audits: Mutex::new(audits),
            owners: Mutex::new(HashMap::new()),
            media_dir,
            audit_dir,
        }));
        state.reconcile().map_err(|e| ServiceError::Io {
            path: review_path,
            source: std::io::Error::other(e.to_string()),
        })?;
        Ok(state)
    }

    /// Reopens review tasks for provisional decisions whose task never made
    /// it to disk (a crash between the two appends).
    fn reconcile(&self) -> Result<(), ApiError> {
        let engine = self.engine();
        let log = lock(&self.0.log);
        let mut reviews = lock(&self.0.reviews);
        for d in log.latest_per_item() {
            if let Some(task_id) = &d.review_task {
                if reviews.get(task_id).is_none() {
                    let esc = &engine.config().escalation;
                    reviews.open_task(ReviewTask {
                        task_id: task_id.clone(),
                        content_id: d.content_id.clone(),
                        created_at: d.decided_at,
                        expires_at: d.decided_at + esc.review_expiry_secs,
                        required_quorum: engine.config().trusted.quorum,
                        received: 0,
                        state: ReviewState::Open,
                    })?;
                }
            }
        }
        Ok(())
    }

    pub fn now(&self) -> Timestamp {
        (self.0.clock)()
    }

    pub fn engine(&self) -> Arc<Engine> {
        self.0
            .engine
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
    }

    fn owner(&self, content_id: &str) -> Arc<Mutex<()>> {
        lock(&self.0.owners)
            .entry(content_id.to_owned())
            .or_default()
            .clone()
    }

    fn media_path(&self, content_id: &str, modality: Modality) -> PathBuf {
        self.0.media_dir.join(format!(
            "{}.{}",
            hex::encode(content_id),
            extension(modality)
        ))
    }

    /// Moderates a new item. Re-submitting a known id returns the stored
    /// decision without running anything.
    pub fn ingest(&self, item: ContentItem) -> Result<IngestReceipt, ApiError> {
        let owner = self.owner(&item.id);
        let _owned = lock(&owner);
        if let Some(d) = lock(&self.0.log).latest(&item.id) {
            return Ok(IngestReceipt {
                content_id: item.id.clone(),
                created: false,
                decision: d.clone(),
            });
        }
        std::fs::write(self.media_path(&item.id, item.modality), &item.payload)?;
        let out = self.engine().moderate(&item, None, self.now())?;
        lock(&self.0.log).append(out.decision.clone())?;
        if let Some(task) = out.review_task {
            lock(&self.0.reviews).open_task(task)?;
        }
        Ok(IngestReceipt {
            content_id: item.id,
            created: true,
            decision: out.decision,
        })
    }

    pub fn decision(&self, content_id: &str) -> Option<ModerationDecision> {
        lock(&self.0.log).latest(content_id).cloned()
    }

    pub fn history(&self, content_id: &str) -> Vec<ModerationDecision> {
        lock(&self.0.log)
            .history(content_id)
            .into_iter()
            .cloned()
            .collect()
    }

    pub fn media(&self, content_id: &str) -> Option<(Modality, Vec<u8>)> {
        [Modality::Raster, Modality::Audio, Modality::Text]
            .into_iter()
            .find_map(|m| {
                std::fs::read(self.media_path(content_id, m))
                    .ok()
                    .map(|b| (m, b))
            })
    }

    fn require_verifier(&self, verifier_id: &str) -> Result<(), ApiError> {
        match self.0.registry.get(verifier_id) {
            Some(_) => Ok(()),
            None => Err(ApiError::Unauthorized(format!(
                "unknown verifier `{verifier_id}`"
            ))),
        }
    }

    pub fn queue(&self, verifier_id: &str) -> Result<Vec<QueueEntry>, ApiError> {
        self.require_verifier(verifier_id)?;
        let mut reviews = lock(&self.0.reviews);
        reviews.expire_due(self.now())?;
        let log = lock(&self.0.log);
        let entries = reviews
            .queue_for(verifier_id)
            .into_iter()
            .filter_map(|r| {
                let mut decision = log.latest(&r.task.content_id)?.clone();
                decision.evidence.trusted = None;
                Some(QueueEntry {
                    task_id: r.task.task_id.clone(),
                    content_id: r.task.content_id.clone(),
                    created_at: r.task.created_at,
                    expires_at: r.task.expires_at,
                    required_quorum: r.task.required_quorum,
                    decision,
                })
            })
            .collect();
        Ok(entries)
    }

    /// Records a verdict; the verdict that completes the quorum triggers
    /// re-evaluation and closes the task.
    pub fn submit_verdict(
        &self,
        task_id: &str,
        verdict: TrustedVerdict,
    ) -> Result<VerdictReceipt, ApiError> {
        let now = self.now();
        let mut reviews = lock(&self.0.reviews);
        reviews.expire_due(now)?;
        let record = reviews.submit(task_id, verdict, &self.0.registry)?;
        if !record.quorum_reached() {
            return Ok(VerdictReceipt {
                task_id: task_id.to_owned(),
                state: record.task.state,
                quorum_reached: false,
                decision: None,
            });
        }
        let content_id = record.task.content_id.clone();
        let verdicts = record.verdicts.clone();
        let out = {
            let mut log = lock(&self.0.log);
            self.engine().reevaluate_logged(
                &content_id,
                NewEvidence::Verdicts(verdicts),
                now,
                &mut log,
            )?
        };
        reviews.close(task_id, ReviewState::Satisfied, now)?;
        Ok(VerdictReceipt {
            task_id: task_id.to_owned(),
            state: ReviewState::Satisfied,
            quorum_reached: true,
            decision: Some(out.decision),
        })
    }

    pub fn policy(&self) -> PolicyView {
        let e = self.engine();
        PolicyView {
            fingerprint: e.fingerprint().to_hex(),
            config: e.config().clone(),
        }
    }

    /// Validates, persists, then swaps the engine. Existing decisions keep
    /// their old fingerprint.
    pub fn set_policy(&self, config: ModerationConfig) -> Result<PolicyView, ApiError> {
        let engine = build_engine(
            config.clone(),
            &self.0.trust_store,
            &self.0.detectors,
            &self.0.registry,
        )?;
        let fingerprint = engine.fingerprint().to_hex();
        let mut policies = lock(&self.0.policies);
        policies.0.append(&PolicyRecord {
            fingerprint: fingerprint.clone(),
            at: self.now(),
            config: config.clone(),
        })?;
        policies.1.insert(fingerprint.clone(), config.clone());
        *self.0.engine.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(engine);
        Ok(PolicyView {
            fingerprint,
            config,
        })
    }

    pub fn decision_table_csv(&self) -> String {
        decision_table_csv(&self.engine().config().policy)
    }

    pub fn run_audit(&self, req: AuditRequest) -> Result<AuditRecord, ApiError> {
        if req.truth.is_empty() {
            return Err(ApiError::BadRequest("no ground truth uploaded".into()));
        }
        let report_and_population = {
            let log = lock(&self.0.log);
            let population: Vec<&ModerationDecision> = log
                .latest_per_item()
                .into_iter()
                .filter(|d| req.truth.contains_key(&d.content_id))
                .collect();
            let s = sample(&population, req.strata, req.n, req.seed)?;
            (evaluate(&s, &req.truth)?, population.len())
        };
        let (report, population) = report_and_population;
        let mut audits = lock(&self.0.audits);
        let record = AuditRecord {
            audit_id: format!("audit-{:06}", audits.len() + 1),
            created_at: self.now(),
            config_fingerprint: self.engine().fingerprint().to_hex(),
            population,
            report,
        };
        let path = self.0.audit_dir.join(format!("{}.json", record.audit_id));
        let json =
            serde_json::to_string_pretty(&record).map_err(|e| ApiError::Internal(e.to_string()))?;
        std::fs::write(path, json)?;
        audits.insert(record.audit_id.clone(), record.clone());
        Ok(record)
    }

    pub fn audit(&self, audit_id: &str) -> Option<AuditRecord> {
        lock(&self.0.audits).get(audit_id).cloned()
    }

    /// Re-derives the stored label from the stored score vector under the
    /// policy the decision was made with.
    pub fn verify(&self, content_id: &str) -> Option<VerifyReport> {
        let d = self.decision(content_id)?;
        let fingerprint = d.config_fingerprint.to_hex();
        let config = lock(&self.0.policies).1.get(&fingerprint).cloned();
        let rederived = config.map(|c| d.rederive_label(&c.policy));
        Some(VerifyReport {
            content_id: d.content_id,
            fingerprint_known: rederived.is_some(),
            fingerprint,
            stored_label: d.label,
            rederived_label: rederived,
            consistent: rederived == Some(d.label),
        })
    }

    pub fn open_task_count(&self) -> usize {
        lock(&self.0.reviews).open_tasks().count()
    }

    pub fn task_for(&self, content_id: &str) -> Option<ReviewTask> {
        lock(&self.0.reviews)
            .for_content(content_id)
            .map(|r| r.task.clone())
    }
}
