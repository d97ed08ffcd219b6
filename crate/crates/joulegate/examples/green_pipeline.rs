//! The low-energy path end to end: retrieve, assemble a grounded prompt,
//! generate once on a small (here: scripted) backend, and meter both
//! stages.
//!
//! Run: `cargo run --example green_pipeline`

use joulegate::backend::{ExhaustionPolicy, MockBackend, MockScript, ScriptedResponse};
use joulegate::energy::{HardwareProfile, Ledger};
use joulegate::green::{answer_green, GreenConfig};
use joulegate::router::Query;
use joulegate::store::{Document, EmbedderKind, KnowledgeStore, RetrievalConfig};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = Ledger::open(dir.path().join("ledger.jsonl")).unwrap();

    let mut store = KnowledgeStore::new(EmbedderKind::default());
    store.ingest(vec![
        Document {
            doc_id: "film-1".into(),
            title: "Oppenheimer".into(),
            text: "Oppenheimer is a 2023 film directed by Christopher Nolan.".into(),
        },
        Document {
            doc_id: "film-2".into(),
            title: "Inception".into(),
            text: "Inception is a 2010 science fiction film, also by Nolan.".into(),
        },
    ]);

    // stand-in for a quantized small model served locally
    let backend = MockBackend::new(
        "green",
        MockScript::new(
            vec![ScriptedResponse::text("Christopher Nolan.")],
            ExhaustionPolicy::Fail,
        ),
    );
    let profile = HardwareProfile::new("green-small", 1.0, 128.0, 250.0, 400.0);

    let query = Query::new("demo-1", "Who is the director of the movie Oppenheimer?").unwrap();
    let result = answer_green(
        &query,
        &store,
        &RetrievalConfig::default(),
        &GreenConfig::default(),
        &backend,
        &ledger,
        &profile,
    )
    .unwrap();

    println!("answer:    {}", result.answer);
    println!("citations: {:?}", result.citations);
    println!("tokens:    {} prompt + {} generated",
        result.token_stats.prompt_tokens, result.token_stats.generated_tokens);
    println!("energy:    {:.1} J  ({:.4} gCO2e)", result.energy.joules, result.energy.grams_co2e);
    println!("degraded:  {}", result.degraded);

    println!("\nledger records written:");
    for record in ledger.read_all().unwrap() {
        println!(
            "  {} {:<12} {:<11} {:>4} tokens {:>8.1} J",
            record.query_id,
            record.path.as_str(),
            record.component.as_str(),
            record.token_stats.prompt_tokens + record.token_stats.generated_tokens,
            record.estimate.joules
        );
    }
}
