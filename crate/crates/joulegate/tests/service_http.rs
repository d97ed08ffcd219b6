//! Wire-level exercise of the HTTP service: every endpoint over a real
//! socket with mock generation backends.

use std::sync::Arc;
use std::time::Duration;

use joulegate::backend::{ExhaustionPolicy, MockBackend, MockScript, ScriptedResponse};
use joulegate::config::ServiceConfig;
use joulegate::service::{serve, Gateway, ServiceHandle};

fn start_service(dir: &std::path::Path) -> ServiceHandle {
    let cfg = ServiceConfig { ledger_path: dir.join("ledger.jsonl"), ..ServiceConfig::default() };
    let green = Arc::new(MockBackend::new(
        "green",
        MockScript::new(vec![ScriptedResponse::text("Paris.")], ExhaustionPolicy::RepeatLast),
    ));
    let deep = Arc::new(MockBackend::new(
        "deep",
        MockScript::new(
            vec![
                ScriptedResponse::with_logprobs("a verified step", vec![-0.05]),
                ScriptedResponse::with_logprobs("49", vec![-0.05]),
            ],
            ExhaustionPolicy::RepeatLast,
        ),
    ));
    let gateway = Arc::new(Gateway::with_backends(&cfg, green, deep).unwrap());
    serve(gateway, "127.0.0.1:0", 4).unwrap()
}

fn post_json(url: &str, body: serde_json::Value) -> (u16, serde_json::Value) {
    let result = ureq::post(url)
        .config()
        .timeout_global(Some(Duration::from_secs(10)))
        .build()
        .send_json(body);
    match result {
        Ok(mut response) => (response.status().as_u16(), response.body_mut().read_json().unwrap()),
        Err(ureq::Error::StatusCode(code)) => (code, serde_json::Value::Null),
        Err(e) => panic!("request failed: {e}"),
    }
}

fn get_json(url: &str) -> (u16, serde_json::Value) {
    let mut response = ureq::get(url)
        .config()
        .timeout_global(Some(Duration::from_secs(10)))
        .build()
        .call()
        .unwrap();
    (response.status().as_u16(), response.body_mut().read_json().unwrap())
}

#[test]
fn full_service_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let handle = start_service(dir.path());
    let base = handle.base_url();

    // health first: backends are mocks
    let (status, health) = get_json(&format!("{base}/healthz"));
    assert_eq!(status, 200);
    assert_eq!(health["status"], "ok");
    assert_eq!(health["backends"]["green"], "mock");

    // ingest two documents
    let ingest_body = concat!(
        "{\"doc_id\":\"d1\",\"title\":\"Capitals\",\"text\":\"The capital of France is Paris.\"}\n",
        "{\"doc_id\":\"d2\",\"title\":\"Oceans\",\"text\":\"The Pacific is the largest ocean.\"}\n"
    );
    let mut response = ureq::post(format!("{base}/v1/ingest"))
        .config()
        .timeout_global(Some(Duration::from_secs(10)))
        .build()
        .send(ingest_body)
        .unwrap();
    let stats: serde_json::Value = response.body_mut().read_json().unwrap();
    assert_eq!(stats["count"], 2);

    // ingest writes no energy
    let (_, report) = get_json(&format!("{base}/v1/report"));
    assert_eq!(report["query_count"], 0);

    // dry-run routing is side-effect free and echoes the feature vector
    let (status, routed) =
        post_json(&format!("{base}/v1/route"), serde_json::json!({"text": "What is the capital of France?"}));
    assert_eq!(status, 200);
    assert_eq!(routed["path"], "green");
    assert!(routed["features"]["token_count"].as_f64().unwrap() > 0.0);
    let (_, report) = get_json(&format!("{base}/v1/report"));
    assert_eq!(report["query_count"], 0, "dry-run routing must not meter");

    // a factoid query goes green and cites the ingested doc
    let (status, answer) = post_json(
        &format!("{base}/v1/query"),
        serde_json::json!({"text": "What is the capital of France?"}),
    );
    assert_eq!(status, 200);
    assert_eq!(answer["path"], "green");
    assert_eq!(answer["answer"], "Paris.");
    assert!(answer["energy"]["joules"].as_f64().unwrap() > 0.0);
    assert!(answer["request_id"].as_str().unwrap().starts_with("q-"));

    // a math query goes deep with math mode and an optional trace
    let (status, deep_answer) = post_json(
        &format!("{base}/v1/query"),
        serde_json::json!({"text": "If x = 3 and y = 4, what is x * y + 12 / 4?", "include_trace": true}),
    );
    assert_eq!(status, 200);
    assert_eq!(deep_answer["path"], "deep");
    assert_eq!(deep_answer["mode"], "math_logic");
    assert_eq!(deep_answer["trace"]["template_id"], "uni_math_cot");

    // empty text is a 400
    let (status, _) = post_json(&format!("{base}/v1/query"), serde_json::json!({"text": "  "}));
    assert_eq!(status, 400);

    // report now covers both queries and sums per path
    let (_, report) = get_json(&format!("{base}/v1/report"));
    assert_eq!(report["query_count"], 2);
    let total = report["total"]["joules"].as_f64().unwrap();
    let per_path: f64 = report["per_path"]
        .as_object()
        .unwrap()
        .values()
        .map(|e| e["joules"].as_f64().unwrap())
        .sum();
    assert!((total - per_path).abs() <= 1e-6 * total);

    // filtered report: green only
    let (_, green_report) = get_json(&format!("{base}/v1/report?path=green"));
    assert!(green_report["total"]["joules"].as_f64().unwrap() < total);

    // unknown endpoint
    let (status, _) = post_json(&format!("{base}/v1/nope"), serde_json::json!({}));
    assert_eq!(status, 404);

    handle.shutdown();
}

#[test]
fn concurrent_queries_are_all_served_and_conserved() {
    let dir = tempfile::tempdir().unwrap();
    let handle = start_service(dir.path());
    let base = handle.base_url();

    let mut threads = Vec::new();
    for i in 0..16 {
        let base = base.clone();
        threads.push(std::thread::spawn(move || {
            let text = if i % 2 == 0 {
                "What is the capital of France?".to_string()
            } else {
                format!("If x = {i} and y = 4, what is x * y + 12 / 4?")
            };
            let mut response = ureq::post(format!("{base}/v1/query"))
                .config()
                .timeout_global(Some(Duration::from_secs(30)))
                .build()
                .send_json(serde_json::json!({ "text": text }))
                .unwrap();
            let body: serde_json::Value = response.body_mut().read_json().unwrap();
            body["energy"]["joules"].as_f64().unwrap()
        }));
    }
    let response_total: f64 = threads.into_iter().map(|t| t.join().unwrap()).sum();

    let (_, report) = get_json(&format!("{base}/v1/report"));
    assert_eq!(report["query_count"], 16);
    let total = report["total"]["joules"].as_f64().unwrap();
    assert!(
        (total - response_total).abs() <= 1e-6 * total,
        "ledger {total} vs responses {response_total}"
    );
    handle.shutdown();
}

#[test]
fn config_reload_swaps_router_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("service.toml");
    let cfg = ServiceConfig { ledger_path: dir.path().join("ledger.jsonl"), ..ServiceConfig::default() };
    std::fs::write(&config_path, cfg.to_toml_string().unwrap()).unwrap();

    let green = Arc::new(MockBackend::new(
        "green",
        MockScript::new(vec![ScriptedResponse::text("ok")], ExhaustionPolicy::RepeatLast),
    ));
    let deep = Arc::new(MockBackend::new(
        "deep",
        MockScript::new(vec![ScriptedResponse::with_logprobs("s", vec![-0.05])], ExhaustionPolicy::RepeatLast),
    ));
    let mut gateway = Gateway::with_backends(&cfg, green, deep).unwrap();
    gateway.set_config_path(&config_path);
    let handle = serve(Arc::new(gateway), "127.0.0.1:0", 2).unwrap();
    let base = handle.base_url();

    let (_, before) = post_json(
        &format!("{base}/v1/route"),
        serde_json::json!({"text": "What is the capital of France?"}),
    );
    assert_eq!(before["path"], "green");

    // rewrite the config with gamma 0 (everything deep) and reload
    let mut updated = cfg.clone();
    updated.router.gamma = 0.0;
    std::fs::write(&config_path, updated.to_toml_string().unwrap()).unwrap();
    let (status, reloaded) = post_json(&format!("{base}/admin/reload"), serde_json::json!({}));
    assert_eq!(status, 200);
    assert_eq!(reloaded["reloaded"], true);

    let (_, after) = post_json(
        &format!("{base}/v1/route"),
        serde_json::json!({"text": "What is the capital of France?"}),
    );
    assert_eq!(after["path"], "deep");
    handle.shutdown();
}

#[test]
fn bearer_token_guards_everything_but_health() {
    let dir = tempfile::tempdir().unwrap();
    std::env::set_var("JOULEGATE_TEST_TOKEN", "sekrit");
    let cfg = ServiceConfig {
        ledger_path: dir.path().join("ledger.jsonl"),
        auth_token_env: Some("JOULEGATE_TEST_TOKEN".into()),
        ..ServiceConfig::default()
    };
    let green = Arc::new(MockBackend::new(
        "green",
        MockScript::new(vec![ScriptedResponse::text("ok")], ExhaustionPolicy::RepeatLast),
    ));
    let deep = Arc::new(MockBackend::new(
        "deep",
        MockScript::new(vec![ScriptedResponse::text("ok")], ExhaustionPolicy::RepeatLast),
    ));
    let gateway = Arc::new(Gateway::with_backends(&cfg, green, deep).unwrap());
    let handle = serve(gateway, "127.0.0.1:0", 2).unwrap();
    let base = handle.base_url();

    // health is open
    let (status, _) = get_json(&format!("{base}/healthz"));
    assert_eq!(status, 200);

    // everything else requires the token
    let unauthorized = ureq::post(format!("{base}/v1/route"))
        .send_json(serde_json::json!({"text": "hi"}));
    match unauthorized {
        Err(ureq::Error::StatusCode(401)) => {}
        other => panic!("expected 401, got {other:?}"),
    }
    let mut ok = ureq::post(format!("{base}/v1/route"))
        .header("authorization", "Bearer sekrit")
        .send_json(serde_json::json!({"text": "hi there"}))
        .unwrap();
    assert_eq!(ok.status().as_u16(), 200);
    let _: serde_json::Value = ok.body_mut().read_json().unwrap();
    handle.shutdown();
}
