use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use modpipe_core::crypto::KeyPair;
use modpipe_core::detection::{
    Judgment, TrustedVerdict, VerifierKind, VerifierProfile, VerifierRegistry,
};
use modpipe_core::marker::{embed_metadata_marker, sign_marker, Polarity, Scheme};
use modpipe_core::media::Raster;
use modpipe_core::model::ContentItem;
use modpipe_core::pipeline::ModerationConfig;
use modpipe_core::scoring::decision_table_csv;
use modpipe_core::trust::IssuerPki;
use modpipe_service::{router, AppState, ServiceConfig, DECISIONS_FILE};
use serde_json::{json, Value};
use tower::ServiceExt;

const NOW: i64 = 1_700_000_000;
const BOUNDARY: &str = "modpipe-test-boundary";

struct Harness {
    _dir: tempfile::TempDir,
    path: std::path::PathBuf,
    clock: Arc<AtomicI64>,
    pki: IssuerPki,
    keys: Vec<KeyPair>,
    state: AppState,
    app: Router,
}

fn config(
    path: &std::path::Path,
    pki: &IssuerPki,
    keys: &[KeyPair],
    clock: &Arc<AtomicI64>,
) -> ServiceConfig {
    let mut cfg = ServiceConfig::new(path);
    cfg.trust_store = pki.trust_store();
    cfg.registry = VerifierRegistry::new(keys.iter().enumerate().map(|(i, k)| VerifierProfile {
        verifier_id: format!("verifier-{i:02}"),
        kind: VerifierKind::Expert,
        reputation: 1.0,
        public_key: k.public_key(),
    }));
    let c = clock.clone();
    cfg.clock = Arc::new(move || c.load(Ordering::SeqCst));
    cfg
}

impl Harness {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().to_owned();
        let clock = Arc::new(AtomicI64::new(NOW));
        let pki = IssuerPki::generate(3, "genai-studio", NOW - 1000, NOW + 10 * 86_400);
        let keys: Vec<_> = (0..4)
            .map(|i| KeyPair::derive(8, &format!("verifier-{i}")))
            .collect();
        let state = AppState::open(config(&path, &pki, &keys, &clock)).unwrap();
        let app = router(state.clone());
        Self {
            _dir: dir,
            path,
            clock,
            pki,
            keys,
            state,
            app,
        }
    }

    fn reopen(&mut self) {
        self.state =
            AppState::open(config(&self.path, &self.pki, &self.keys, &self.clock)).unwrap();
        self.app = router(self.state.clone());
    }

    async fn send(&self, req: Request<Body>) -> (StatusCode, Vec<u8>) {
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp
            .into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec();
        (status, bytes)
    }

    async fn json(&self, req: Request<Body>) -> (StatusCode, Value) {
        let (s, b) = self.send(req).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.json(Request::get(uri).body(Body::empty()).unwrap())
            .await
    }

    async fn post_json(&self, uri: &str, body: &Value) -> (StatusCode, Value) {
        self.json(
            Request::post(uri)
                .header("content-type", "application/json")
                .body(Body::from(body.to_string()))
                .unwrap(),
        )
        .await
    }

    async fn put_json(&self, uri: &str, body: &Value) -> (StatusCode, Value) {
        self.json(
            Request::put(uri)
                .header("content-type", "application/json")
                .body(Body::from(body.to_string()))
                .unwrap(),
        )
        .await
    }

    async fn ingest(&self, item: &ContentItem) -> (StatusCode, Value) {
        let manifest = json!({"id": item.id, "modality": item.modality, "origin": item.origin});
        let mut parts = vec![
            ("manifest", manifest.to_string().into_bytes()),
            ("media", item.payload.clone()),
        ];
        if let Some(b) = &item.marker_block {
            parts.push(("marker", b.clone()));
        }
        self.json(multipart(&parts)).await
    }

    fn verdict(&self, i: usize, content_id: &str, judgment: Judgment) -> Value {
        let v = TrustedVerdict::new(content_id, format!("verifier-{i:02}"), judgment)
            .signed(&self.keys[i]);
        serde_json::to_value(v).unwrap()
    }
}

fn multipart(parts: &[(&str, Vec<u8>)]) -> Request<Body> {
    let mut body = Vec::new();
    for (name, bytes) in parts {
        body.extend(
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n")
                .as_bytes(),
        );
        body.extend(bytes);
        body.extend(b"\r\n");
    }
    body.extend(format!("--{BOUNDARY}--\r\n").as_bytes());
    Request::post("/v1/content")
        .header(
            "content-type",
            format!("multipart/form-data; boundary={BOUNDARY}"),
        )
        .body(Body::from(body))
        .unwrap()
}

fn scene(id: &str, tags: &[&str]) -> ContentItem {
    let mut r = Raster::new(32, 32, 3);
    for (i, v) in r.data.iter_mut().enumerate() {
        *v = (60 + (i / 3) % 32 * 3) as u8;
    }
    let origin = modpipe_core::model::OriginContext::new("uploader", tags.iter().copied(), 10);
    ContentItem::raster(id, &r).with_origin(origin)
}

#[tokio::test]
async fn positive_marker_is_final_deepfake_and_ingest_is_idempotent() {
    let h = Harness::new();
    let item = scene("img-1", &["animals"]);
    let m = sign_marker(
        &item,
        &h.pki.issuer_key,
        Scheme::Metadata,
        Polarity::Positive,
        &h.pki.chain,
    )
    .unwrap();
    let item = embed_metadata_marker(&item, &m).unwrap();

    let (s, body) = h.ingest(&item).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(body["content_id"], "img-1");
    let (s, d) = h.get("/v1/content/img-1/decision").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(
        (d["label"].as_str(), d["status"].as_str()),
        (Some("DEEPFAKE"), Some("final"))
    );

    let (s, again) = h.ingest(&item).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(again["created"], false);
    assert_eq!(again["decision"], d);
    assert_eq!(h.state.engine().counters().items, 1);

    let (s, _) = h.get("/v1/content/nope/decision").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, bytes) = h
        .send(
            Request::get("/v1/content/img-1/media")
                .body(Body::empty())
                .unwrap(),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(bytes, item.payload);
}

#[tokio::test]
async fn review_quorum_flips_provisional_decision() {
    let h = Harness::new();
    let (s, body) = h.ingest(&scene("clip-7", &["elections"])).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let d = &body["decision"];
    assert_eq!(
        (d["label"].as_str(), d["status"].as_str()),
        (Some("UNTRUSTWORTHY"), Some("provisional"))
    );
    assert_eq!(d["score_vector"], json!({"v_t": 1, "v_tr": null, "v_r": 0}));
    let task = d["review_task"].as_str().unwrap().to_owned();

    let (s, q) = h.get("/v1/review/queue?verifier=verifier-00").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(q.as_array().unwrap().len(), 1);
    assert_eq!(q[0]["task_id"], task.as_str());
    assert!(q[0].get("received").is_none());
    let (s, _) = h.get("/v1/review/queue?verifier=stranger").await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);

    let uri = format!("/v1/review/{task}/verdict");
    let (s, r) = h
        .post_json(&uri, &h.verdict(0, "clip-7", Judgment::Trustworthy))
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["quorum_reached"], false);
    let (s, _) = h
        .post_json(&uri, &h.verdict(0, "clip-7", Judgment::Trustworthy))
        .await;
    assert_eq!(s, StatusCode::CONFLICT);

    // Peers never see each other's verdicts; verifier-00 no longer sees the task.
    let (_, q0) = h.get("/v1/review/queue?verifier=verifier-00").await;
    assert!(q0.as_array().unwrap().is_empty());
    let (_, q1) = h.get("/v1/review/queue?verifier=verifier-01").await;
    assert_eq!(q1[0]["decision"]["evidence"]["trusted"], Value::Null);

    let mut forged = h.verdict(1, "clip-7", Judgment::Trustworthy);
    forged["judgment"] = json!("untrustworthy");
    let (s, _) = h.post_json(&uri, &forged).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = h
        .post_json(&uri, &h.verdict(1, "other", Judgment::Trustworthy))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (_, r) = h
        .post_json(&uri, &h.verdict(1, "clip-7", Judgment::Trustworthy))
        .await;
    assert_eq!(r["quorum_reached"], false);
    assert_eq!(
        h.get("/v1/content/clip-7/decision").await.1["status"],
        "provisional"
    );
    let (s, r) = h
        .post_json(&uri, &h.verdict(2, "clip-7", Judgment::Trustworthy))
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["quorum_reached"], true);
    assert_eq!(r["state"], "satisfied");

    let (_, d) = h.get("/v1/content/clip-7/decision").await;
    assert_eq!(d["score_vector"], json!({"v_t": 1, "v_tr": 1, "v_r": 0}));
    assert_eq!(
        (d["label"].as_str(), d["status"].as_str()),
        (Some("TRUSTWORTHY"), Some("final"))
    );
    let (s, _) = h
        .post_json(&uri, &h.verdict(3, "clip-7", Judgment::Untrustworthy))
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (_, hist) = h.get("/v1/content/clip-7/history").await;
    assert_eq!(hist.as_array().unwrap().len(), 2);
    let (s, _) = h
        .post_json(
            "/v1/review/task-unknown/verdict",
            &h.verdict(0, "x", Judgment::Trustworthy),
        )
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn expired_task_leaves_decision_provisional() {
    let h = Harness::new();
    let (_, body) = h.ingest(&scene("late", &["public_health"])).await;
    let task = body["decision"]["review_task"].as_str().unwrap().to_owned();
    h.clock.store(NOW + 86_400, Ordering::SeqCst);
    let (_, q) = h.get("/v1/review/queue?verifier=verifier-00").await;
    assert!(q.as_array().unwrap().is_empty());
    let (s, _) = h
        .post_json(
            &format!("/v1/review/{task}/verdict"),
            &h.verdict(0, "late", Judgment::Trustworthy),
        )
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (_, d) = h.get("/v1/content/late/decision").await;
    assert_eq!(
        (d["label"].as_str(), d["status"].as_str()),
        (Some("UNTRUSTWORTHY"), Some("provisional"))
    );
    assert_eq!(h.state.open_task_count(), 0);
}

#[tokio::test]
async fn policy_updates_validate_and_do_not_rewrite_history() {
    let h = Harness::new();
    let (_, before) = h.get("/v1/policy").await;
    h.ingest(&scene("a", &["sports"])).await;

    let mut zero = before["config"].clone();
    zero["policy"]["weights"] = json!({"technical": 0.0, "trusted": 0.0, "risk": 0.0});
    let (s, err) = h.put_json("/v1/policy", &zero).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "bad_request");
    let mut out_of_range = before["config"].clone();
    out_of_range["policy"]["threshold"] = json!(1.5);
    assert_eq!(
        h.put_json("/v1/policy", &out_of_range).await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        h.put_json("/v1/policy", &json!("nonsense")).await.0,
        StatusCode::BAD_REQUEST
    );

    let mut next = before["config"].clone();
    next["policy"]["threshold"] = json!(0.7);
    let (s, after) = h.put_json("/v1/policy", &next).await;
    assert_eq!(s, StatusCode::OK);
    assert_ne!(after["fingerprint"], before["fingerprint"]);
    assert_eq!(h.get("/v1/policy").await.1, after);
    let (_, d) = h.get("/v1/content/a/decision").await;
    assert_eq!(d["config_fingerprint"]["bytes"], before["fingerprint"]);

    let (s, csv) = h
        .send(
            Request::get("/v1/policy/decision-table")
                .body(Body::empty())
                .unwrap(),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    let cfg: ModerationConfig = serde_json::from_value(next).unwrap();
    assert_eq!(
        String::from_utf8(csv).unwrap(),
        decision_table_csv(&cfg.policy)
    );

    let (_, v) = h.get("/v1/debug/verify/a").await;
    assert_eq!(
        (v["consistent"].as_bool(), v["fingerprint_known"].as_bool()),
        (Some(true), Some(true))
    );
}

#[tokio::test]
async fn audit_runs_against_uploaded_truth() {
    let h = Harness::new();
    let mut truth = serde_json::Map::new();
    for i in 0..20 {
        let id = format!("c{i}");
        h.ingest(&scene(&id, &["music"])).await;
        truth.insert(id, json!({"is_deepfake": i % 4 == 0}));
    }
    let req = json!({"n": 10, "seed": 3, "truth": truth});
    let (s, rec) = h.post_json("/v1/audit/run", &req).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(rec["population"], 20);
    assert_eq!(rec["report"]["n"], 10);
    let id = rec["audit_id"].as_str().unwrap();
    assert_eq!(h.get(&format!("/v1/audit/{id}")).await.1, rec);
    assert_eq!(
        h.get("/v1/audit/audit-999999").await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        h.post_json("/v1/audit/run", &json!({"n": 50, "truth": truth}))
            .await
            .0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        h.post_json("/v1/audit/run", &json!({"n": 1, "truth": {}}))
            .await
            .0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test]
async fn malformed_uploads_are_rejected() {
    let h = Harness::new();
    let (s, _) = h
        .json(multipart(&[(
            "manifest",
            br#"{"id":"x","modality":"raster"}"#.to_vec(),
        )]))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = h
        .json(multipart(&[
            ("manifest", br#"{"id":"x","modality":"raster"}"#.to_vec()),
            ("media", b"not a pixmap".to_vec()),
        ]))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = h
        .json(multipart(&[
            ("manifest", b"{".to_vec()),
            ("media", b"hi".to_vec()),
        ]))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(
        h.get("/v1/content/x/decision").await.0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn state_survives_restart_and_torn_tail() {
    let mut h = Harness::new();
    let (_, body) = h.ingest(&scene("keep", &["elections"])).await;
    let task = body["decision"]["review_task"].as_str().unwrap().to_owned();
    h.post_json(
        &format!("/v1/review/{task}/verdict"),
        &h.verdict(0, "keep", Judgment::Trustworthy),
    )
    .await;
    let mut next = h.get("/v1/policy").await.1["config"].clone();
    next["trusted"]["quorum"] = json!(2);
    let (_, policy) = h.put_json("/v1/policy", &next).await;

    let log = h.path.join(DECISIONS_FILE);
    let mut bytes = std::fs::read(&log).unwrap();
    let intact = bytes.len();
    bytes.extend_from_slice(br#"{"seq":1,"checksum":"00"#);
    std::fs::write(&log, &bytes).unwrap();

    h.reopen();
    assert_eq!(std::fs::read(&log).unwrap().len(), intact);
    assert_eq!(h.get("/v1/policy").await.1, policy);
    let (_, d) = h.get("/v1/content/keep/decision").await;
    assert_eq!(d["status"], "provisional");
    let (_, q) = h.get("/v1/review/queue?verifier=verifier-00").await;
    assert!(q.as_array().unwrap().is_empty());
    // The task keeps the quorum it was opened with.
    let (_, r) = h
        .post_json(
            &format!("/v1/review/{task}/verdict"),
            &h.verdict(1, "keep", Judgment::Trustworthy),
        )
        .await;
    assert_eq!(r["quorum_reached"], false);
    let (_, r) = h
        .post_json(
            &format!("/v1/review/{task}/verdict"),
            &h.verdict(2, "keep", Judgment::Trustworthy),
        )
        .await;
    assert_eq!(r["quorum_reached"], true);
    assert_eq!(r["decision"]["label"], "TRUSTWORTHY");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_ingest_of_one_id_runs_once() {
    let h = Harness::new();
    let item = scene("dup", &["animals"]);
    let manifest =
        json!({"id": item.id, "modality": item.modality, "origin": item.origin}).to_string();
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let app = h.app.clone();
            let req = multipart(&[
                ("manifest", manifest.clone().into_bytes()),
                ("media", item.payload.clone()),
            ]);
            tokio::spawn(async move { app.oneshot(req).await.unwrap().status() })
        })
        .collect();
    let mut created = 0;
    for handle in handles {
        let s = handle.await.unwrap();
        assert!(s == StatusCode::ACCEPTED || s == StatusCode::OK, "{s}");
        created += usize::from(s == StatusCode::ACCEPTED);
    }
    assert_eq!(created, 1);
    assert_eq!(h.state.history("dup").len(), 1);
    assert_eq!(h.state.engine().counters().items, 1);
}
