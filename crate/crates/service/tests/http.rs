// SPDX-License-Identifier: Apache-2.0

use std::net::SocketAddr;
use std::sync::Arc;

use base64::engine::general_purpose::{STANDARD, URL_SAFE_NO_PAD};
use base64::Engine;
use reqwest::StatusCode;
use serde_json::Value;
use shellgate_core::classify::{CentroidClassifier, CoastClassifier};
use shellgate_core::embed::{Embedder, ReferenceEmbedder, INPUT_SIZE};
use shellgate_core::synth::{ood_image, shell_image};
use shellgate_core::{build_index, Coast, GateConfig, Status, TriageContext, VerdictJson};
use shellgate_service::{
    audit, mint_token, AppState, AuditLog, Auth, Health, LatencyStats, PredictRequest,
    ServiceConfig,
};

const SECRET: &[u8] = b"test-secret-for-integration";
const DIM: usize = 1000;

fn context() -> TriageContext {
    let e = ReferenceEmbedder::new(DIM).unwrap();
    let mut items = Vec::new();
    for coast in Coast::ALL {
        for v in 0..12 {
            items.push((
                format!("{coast}-{v}"),
                coast,
                e.embed(&shell_image(coast, v, INPUT_SIZE)).unwrap(),
            ));
        }
    }
    let index = Arc::new(build_index(items).unwrap());
    let c: Arc<dyn CoastClassifier> =
        Arc::new(CentroidClassifier::from_index(&index, 1.0).unwrap());
    TriageContext::new(Arc::new(e), index, GateConfig::default(), c).unwrap()
}

fn auth() -> Auth {
    Auth::new(SECRET, "shellgate").unwrap()
}

fn token() -> String {
    mint_token(SECRET, "shellgate", 600).unwrap()
}

async fn start(state: Arc<AppState>) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(shellgate_service::serve(
        listener,
        state,
        std::future::pending(),
    ));
    addr
}

async fn ready_server(
    config: ServiceConfig,
    audit: Option<AuditLog>,
) -> (SocketAddr, Arc<AppState>) {
    let state = Arc::new(AppState::ready(auth(), context(), config, audit));
    (start(state.clone()).await, state)
}

fn shell_png() -> Vec<u8> {
    shell_image(Coast::Pacific, 4242, INPUT_SIZE).to_png()
}

async fn post_json(
    addr: SocketAddr,
    route: &str,
    token: Option<&str>,
    body: &impl serde::Serialize,
) -> (StatusCode, String) {
    let mut req = reqwest::Client::new()
        .post(format!("http://{addr}{route}"))
        .json(body);
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let r = req.send().await.unwrap();
    (r.status(), r.text().await.unwrap())
}

fn verdict(text: &str) -> VerdictJson {
    let v: VerdictJson = serde_json::from_str(text).unwrap_or_else(|e| panic!("{e}: {text}"));
    v.validate().unwrap();
    v
}

#[tokio::test]
async fn valid_shell_is_labelled() {
    let (addr, _) = ready_server(ServiceConfig::default(), None).await;
    for route in ["/receive-files", "/predict"] {
        let body = PredictRequest::new(Some("abc-123".into()), &shell_png());
        let (status, text) = post_json(addr, route, Some(&token()), &body).await;
        assert_eq!(status, StatusCode::OK, "{text}");
        let v = verdict(&text);
        assert_eq!(v.status, Status::Valid);
        assert_eq!(v.label, Some(Coast::Pacific));
        assert_eq!(v.request_id, "abc-123");
    }
}

#[tokio::test]
async fn anomaly_has_no_label_field() {
    let (addr, _) = ready_server(ServiceConfig::default(), None).await;
    let body = PredictRequest::new(None, &ood_image(3, INPUT_SIZE).to_png());
    let (status, text) = post_json(addr, "/predict", Some(&token()), &body).await;
    assert_eq!(status, StatusCode::OK);
    let raw: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(raw["status"], "anomaly");
    assert!(raw.get("label").is_none() && raw.get("confidence").is_none());
    // Server-generated id.
    assert_eq!(raw["request_id"].as_str().unwrap().len(), 36);
}

#[tokio::test]
async fn missing_or_bad_token_is_401_without_verdict() {
    let (addr, _) = ready_server(ServiceConfig::default(), None).await;
    let body = PredictRequest::new(None, &shell_png());
    for t in [
        None,
        Some("garbage"),
        Some(&*mint_token(b"other-secret", "shellgate", 600).unwrap()),
    ] {
        let (status, text) = post_json(addr, "/receive-files", t, &body).await;
        assert_eq!(status, StatusCode::UNAUTHORIZED);
        let raw: Value = serde_json::from_str(&text).unwrap();
        assert!(raw.get("status").is_none());
    }
    let expired = shellgate_service::auth::mint_token_with_exp(SECRET, "shellgate", 1).unwrap();
    let (status, _) = post_json(addr, "/predict", Some(&expired), &body).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
}

#[test]
fn every_single_bit_flip_of_the_signature_is_rejected() {
    let auth = auth();
    let t = token();
    assert!(auth.verify(&t).is_ok());
    let (head, sig) = t.rsplit_once('.').unwrap();

    // Flips in the decoded signature bytes.
    let bytes = URL_SAFE_NO_PAD.decode(sig).unwrap();
    for i in 0..bytes.len() * 8 {
        let mut b = bytes.clone();
        b[i / 8] ^= 1 << (i % 8);
        let forged = format!("{head}.{}", URL_SAFE_NO_PAD.encode(&b));
        assert!(auth.verify(&forged).is_err(), "decoded bit {i}");
    }
    // Flips in the encoded signature text.
    let chars = sig.as_bytes();
    for i in 0..chars.len() * 8 {
        let mut c = chars.to_vec();
        c[i / 8] ^= 1 << (i % 8);
        let Ok(s) = String::from_utf8(c) else {
            continue;
        };
        assert!(
            auth.verify(&format!("{head}.{s}")).is_err(),
            "encoded bit {i}"
        );
    }
}

#[tokio::test]
async fn bit_flipped_token_over_http() {
    let (addr, _) = ready_server(ServiceConfig::default(), None).await;
    let t = token();
    let (head, sig) = t.rsplit_once('.').unwrap();
    let mut b = URL_SAFE_NO_PAD.decode(sig).unwrap();
    b[0] ^= 0x80;
    let forged = format!("{head}.{}", URL_SAFE_NO_PAD.encode(&b));
    let (status, _) = post_json(
        addr,
        "/predict",
        Some(&forged),
        &PredictRequest::new(None, &shell_png()),
    )
    .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn oversized_payloads_are_413() {
    let (addr, _) = ready_server(ServiceConfig::default(), None).await;
    let big = vec![0u8; 11 * 1024 * 1024];
    let (status, text) = post_json(
        addr,
        "/receive-files",
        Some(&token()),
        &PredictRequest::new(None, &big),
    )
    .await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(verdict(&text).status, Status::Error);

    let form = reqwest::multipart::Form::new().part(
        "file",
        reqwest::multipart::Part::bytes(big).file_name("big.png"),
    );
    let r = reqwest::Client::new()
        .post(format!("http://{addr}/receive-files"))
        .bearer_auth(token())
        .multipart(form)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn limit_is_on_decoded_bytes() {
    let config = ServiceConfig {
        max_image_bytes: 1000,
        ..ServiceConfig::default()
    };
    let (addr, _) = ready_server(config, None).await;
    let (status, _) = post_json(
        addr,
        "/predict",
        Some(&token()),
        &PredictRequest::new(None, &[7u8; 1001]),
    )
    .await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    // 1000 bytes pass the limit and then fail to decode as an image.
    let (status, _) = post_json(
        addr,
        "/predict",
        Some(&token()),
        &PredictRequest::new(None, &[7u8; 1000]),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn bad_inputs_are_400_error_verdicts() {
    let (addr, _) = ready_server(ServiceConfig::default(), None).await;
    let bad_b64 = serde_json::json!({ "request_id": "r1", "image_b64": "not*base64!" });
    let (status, text) = post_json(addr, "/predict", Some(&token()), &bad_b64).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v = verdict(&text);
    assert_eq!((v.status, v.request_id.as_str()), (Status::Error, "r1"));

    // Unpadded Base64 is refused.
    let unpadded = serde_json::json!({ "image_b64": "YWI" });
    let (status, _) = post_json(addr, "/predict", Some(&token()), &unpadded).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let not_image = PredictRequest::new(Some("r2".into()), b"hello world");
    let (status, text) = post_json(addr, "/predict", Some(&token()), &not_image).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(verdict(&text).request_id, "r2");

    let r = reqwest::Client::new()
        .post(format!("http://{addr}/predict"))
        .bearer_auth(token())
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    verdict(&r.text().await.unwrap());
}

#[tokio::test]
async fn not_ready_is_503() {
    let state = Arc::new(AppState::new(
        auth(),
        GateConfig::default(),
        ServiceConfig::default(),
        None,
    ));
    let addr = start(state.clone()).await;
    let (status, text) = post_json(
        addr,
        "/predict",
        Some(&token()),
        &PredictRequest::new(None, &shell_png()),
    )
    .await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(verdict(&text).status, Status::Error);

    let h: Health = reqwest::get(format!("http://{addr}/healthz"))
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(h.status, "starting");
    assert!(h.index_fingerprint.is_none());

    let ctx = context();
    let fp = ctx.index().fingerprint_hex();
    state.set_pipeline(ctx);
    let h: Health = reqwest::get(format!("http://{addr}/healthz"))
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.index_fingerprint.as_deref(), Some(fp.as_str()));
    let (status, _) = post_json(
        addr,
        "/predict",
        Some(&token()),
        &PredictRequest::new(None, &shell_png()),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
}

async fn get_stats(addr: SocketAddr, token: Option<&str>) -> reqwest::Response {
    let mut req = reqwest::Client::new().get(format!("http://{addr}/stats"));
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    req.send().await.unwrap()
}

#[tokio::test]
async fn stats_endpoint() {
    let (addr, state) = ready_server(ServiceConfig::default(), None).await;
    assert_eq!(
        get_stats(addr, None).await.status(),
        StatusCode::UNAUTHORIZED
    );
    let s: LatencyStats = get_stats(addr, Some(&token())).await.json().await.unwrap();
    assert_eq!(s.count, 0);
    assert_eq!((s.p50, s.p95, s.p99), (None, None, None));

    for ms in 1..=100 {
        state.latency().record(ms as f64);
    }
    let s: LatencyStats = get_stats(addr, Some(&token())).await.json().await.unwrap();
    assert_eq!(s.count, 100);
    assert_eq!(s.p95, Some(95.0));

    post_json(
        addr,
        "/predict",
        Some(&token()),
        &PredictRequest::new(None, &shell_png()),
    )
    .await;
    let s: LatencyStats = get_stats(addr, Some(&token())).await.json().await.unwrap();
    assert_eq!(s.count, 101);
    assert!(s.p50.unwrap() <= s.p95.unwrap() && s.p95.unwrap() <= s.p99.unwrap());
}

#[tokio::test]
async fn concurrent_burst_gives_identical_verdicts() {
    let (addr, _) = ready_server(ServiceConfig::default(), None).await;
    let body = Arc::new(PredictRequest::new(Some("same".into()), &shell_png()));
    let t = Arc::new(token());
    let tasks: Vec<_> = (0..64)
        .map(|_| {
            let (body, t) = (body.clone(), t.clone());
            tokio::spawn(async move { post_json(addr, "/predict", Some(&t), &*body).await })
        })
        .collect();
    let mut seen = Vec::new();
    for task in tasks {
        let (status, text) = task.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        seen.push(serde_json::to_string(&verdict(&text).without_timings()).unwrap());
    }
    assert!(seen.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn multipart_uploads() {
    let (addr, _) = ready_server(ServiceConfig::default(), None).await;
    let form = reqwest::multipart::Form::new()
        .text("request_id", "mp-1")
        .part(
            "file",
            reqwest::multipart::Part::bytes(shell_png()).file_name("s.png"),
        );
    let r = reqwest::Client::new()
        .post(format!("http://{addr}/receive-files"))
        .bearer_auth(token())
        .multipart(form)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let v = verdict(&r.text().await.unwrap());
    assert_eq!((v.request_id.as_str(), v.status), ("mp-1", Status::Valid));

    let form = reqwest::multipart::Form::new().text("image_b64", STANDARD.encode(shell_png()));
    let r = reqwest::Client::new()
        .post(format!("http://{addr}/receive-files"))
        .bearer_auth(token())
        .multipart(form)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);

    let form =
        reqwest::multipart::Form::new().part("file", reqwest::multipart::Part::bytes(shell_png()));
    let r = reqwest::Client::new()
        .post(format!("http://{addr}/predict"))
        .bearer_auth(token())
        .multipart(form)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn audit_lines_match_non_401_requests() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    let log = AuditLog::open(&path, audit::DEFAULT_MAX_BYTES).unwrap();
    let (addr, _) = ready_server(ServiceConfig::default(), Some(log)).await;
    let good = PredictRequest::new(None, &shell_png());
    let mut expected = 0;
    for i in 0..12 {
        let t = if i % 3 == 0 { None } else { Some(token()) };
        let body = if i % 4 == 1 {
            PredictRequest::new(None, b"junk")
        } else {
            good.clone()
        };
        let (status, _) = post_json(addr, "/receive-files", t.as_deref(), &body).await;
        if status != StatusCode::UNAUTHORIZED {
            expected += 1;
        }
    }
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), expected);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["verdict"]["status"].is_string());
        assert!(!line.contains("image_b64"));
    }
}

#[tokio::test]
async fn audit_rotates_by_size() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    let log = AuditLog::open(&path, 600).unwrap();
    let (addr, _) = ready_server(ServiceConfig::default(), Some(log)).await;
    for _ in 0..6 {
        post_json(
            addr,
            "/predict",
            Some(&token()),
            &PredictRequest::new(None, &shell_png()),
        )
        .await;
    }
    let rotated = audit::rotated_path(&path);
    assert!(rotated.exists());
    assert!(std::fs::metadata(&path).unwrap().len() <= 600);
}

#[tokio::test]
async fn proxy_mode_forwards_to_predict() {
    let (upstream, _) = ready_server(ServiceConfig::default(), None).await;
    let proxy_state = Arc::new(AppState::new(
        auth(),
        GateConfig::default(),
        ServiceConfig {
            proxy_predict_url: Some(format!("http://{upstream}/predict")),
            ..ServiceConfig::default()
        },
        None,
    ));
    let proxy = start(proxy_state).await;
    let body = PredictRequest::new(Some("via-proxy".into()), &shell_png());
    let (status, text) = post_json(proxy, "/receive-files", Some(&token()), &body).await;
    assert_eq!(status, StatusCode::OK, "{text}");
    let via = verdict(&text);
    let (_, direct) = post_json(upstream, "/predict", Some(&token()), &body).await;
    assert_eq!(via.without_timings(), verdict(&direct).without_timings());

    let (status, _) = post_json(
        proxy,
        "/receive-files",
        Some(&token()),
        &PredictRequest::new(None, b"junk"),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}
