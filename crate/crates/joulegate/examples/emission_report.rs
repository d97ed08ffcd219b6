//! Ledger aggregation: run a small mixed workload through the gateway with
//! scripted backends, then aggregate the append-only ledger into an
//! emission report with per-path and per-component breakdowns.
//!
//! Run: `cargo run --example emission_report`

use std::sync::Arc;

use joulegate::backend::{ExhaustionPolicy, MockBackend, MockScript, ScriptedResponse};
use joulegate::config::ServiceConfig;
use joulegate::energy::ReportFilter;
use joulegate::router::GenParams;
use joulegate::service::{Gateway, QueryRequest};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig { ledger_path: dir.path().join("ledger.jsonl"), ..Default::default() };

    let green = Arc::new(MockBackend::new(
        "green",
        MockScript::new(
            vec![ScriptedResponse::text("A short grounded answer.")],
            ExhaustionPolicy::RepeatLast,
        ),
    ));
    let deep = Arc::new(MockBackend::new(
        "deep",
        MockScript::new(
            vec![
                ScriptedResponse::with_logprobs("a verified reasoning step", vec![-0.05]),
                ScriptedResponse::with_logprobs("42", vec![-0.05]),
            ],
            ExhaustionPolicy::RepeatLast,
        ),
    ));
    let gateway = Gateway::with_backends(&cfg, green, deep).unwrap();

    let queries = [
        "What is the capital of France?",
        "Who wrote the play Hamlet?",
        "What is the capital of Japan?",
        "If x = 6 and y = 7, what is x * y + 42 / 6?",
    ];
    for text in queries {
        let response = gateway
            .handle_query(QueryRequest {
                text: text.into(),
                params: GenParams::default(),
                include_trace: false,
            })
            .unwrap();
        println!(
            "{}  path {:<5}  {:>7.1} J   {}",
            response.request_id,
            format!("{:?}", response.path),
            response.energy.joules,
            text
        );
    }

    let report = gateway.handle_report(&ReportFilter::default()).unwrap();
    println!("\nqueries: {}   green fraction: {:.2}", report.query_count, report.green_fraction);
    println!(
        "total: {:.1} J = {:.4} Wh = {:.4} gCO2e",
        report.total.joules, report.total.watt_hours, report.total.grams_co2e
    );
    println!("\nper path:");
    for (path, estimate) in &report.per_path {
        println!("  {:<16} {:>8.1} J", path.as_str(), estimate.joules);
    }
    println!("per component:");
    for (component, estimate) in &report.per_component {
        println!("  {:<16} {:>8.1} J", component.as_str(), estimate.joules);
    }
}
