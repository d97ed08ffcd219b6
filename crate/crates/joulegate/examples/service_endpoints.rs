//! The HTTP service exercised over the wire: ingest documents, dry-run a
//! route, answer queries on both paths, and fetch the emission report.
//!
//! Run: `cargo run --example service_endpoints`

use std::sync::Arc;
use std::time::Duration;

use joulegate::backend::{ExhaustionPolicy, MockBackend, MockScript, ScriptedResponse};
use joulegate::config::ServiceConfig;
use joulegate::service::{serve, Gateway};

fn post(url: &str, body: serde_json::Value) -> serde_json::Value {
    ureq::post(url)
        .config()
        .timeout_global(Some(Duration::from_secs(10)))
        .build()
        .send_json(body)
        .unwrap()
        .body_mut()
        .read_json()
        .unwrap()
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig { ledger_path: dir.path().join("ledger.jsonl"), ..Default::default() };
    let green = Arc::new(MockBackend::new(
        "green",
        MockScript::new(vec![ScriptedResponse::text("Paris.")], ExhaustionPolicy::RepeatLast),
    ));
    let deep = Arc::new(MockBackend::new(
        "deep",
        MockScript::new(
            vec![
                ScriptedResponse::with_logprobs("x * y = 12; 12 / 4 = 3; 12 + 3 = 15", vec![-0.05]),
                ScriptedResponse::with_logprobs("15", vec![-0.02]),
            ],
            ExhaustionPolicy::RepeatLast,
        ),
    ));
    let gateway = Arc::new(Gateway::with_backends(&cfg, green, deep).unwrap());
    let handle = serve(gateway, "127.0.0.1:0", 4).unwrap();
    let base = handle.base_url();
    println!("service listening on {base}\n");

    // ingest two documents
    let stats: serde_json::Value = ureq::post(format!("{base}/v1/ingest"))
        .send(concat!(
            "{\"doc_id\":\"d1\",\"title\":\"Capitals\",\"text\":\"The capital of France is Paris.\"}\n",
            "{\"doc_id\":\"d2\",\"title\":\"Rivers\",\"text\":\"The Seine flows through Paris.\"}\n",
        ))
        .unwrap()
        .body_mut()
        .read_json()
        .unwrap();
    println!("POST /v1/ingest -> {stats}");

    // dry-run routing
    let routed = post(&format!("{base}/v1/route"), serde_json::json!({
        "text": "What is the capital of France?"
    }));
    println!("POST /v1/route -> path {}, score {:.3}", routed["path"], routed["score"].as_f64().unwrap());

    // one query per path
    let green_answer = post(&format!("{base}/v1/query"), serde_json::json!({
        "text": "What is the capital of France?"
    }));
    println!(
        "POST /v1/query (factoid) -> {} via {} [{:.1} J]",
        green_answer["answer"], green_answer["path"],
        green_answer["energy"]["joules"].as_f64().unwrap()
    );

    let deep_answer = post(&format!("{base}/v1/query"), serde_json::json!({
        "text": "If x = 3 and y = 4, what is x * y + 12 / 4?",
        "include_trace": true
    }));
    println!(
        "POST /v1/query (math)    -> {} via {} mode {} [{:.1} J]",
        deep_answer["answer"], deep_answer["path"], deep_answer["mode"],
        deep_answer["energy"]["joules"].as_f64().unwrap()
    );

    // the emission report covers both queries
    let report: serde_json::Value = ureq::get(format!("{base}/v1/report"))
        .call()
        .unwrap()
        .body_mut()
        .read_json()
        .unwrap();
    println!(
        "GET /v1/report -> {} queries, {:.1} J total, green fraction {:.2}",
        report["query_count"],
        report["total"]["joules"].as_f64().unwrap(),
        report["green_fraction"].as_f64().unwrap()
    );

    let health: serde_json::Value =
        ureq::get(format!("{base}/healthz")).call().unwrap().body_mut().read_json().unwrap();
    println!("GET /healthz -> {health}");

    handle.shutdown();
}
