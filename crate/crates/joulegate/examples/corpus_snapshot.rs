//! Index persistence: ingest a corpus, save the versioned binary snapshot
//! plus its manifest, reload it, and verify retrieval is unchanged.
//!
//! Run: `cargo run --example corpus_snapshot`

use joulegate::router::Query;
use joulegate::store::{Document, EmbedderKind, KnowledgeStore, RetrievalConfig};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot = dir.path().join("corpus.snapshot");

    let mut store = KnowledgeStore::new(EmbedderKind::default());
    store.ingest((0..100).map(|i| Document {
        doc_id: format!("doc{i:03}"),
        title: format!("Doc {i}"),
        text: format!("document number {i} talks about topic {}", i % 7),
    }));
    store.save_snapshot(&snapshot).unwrap();

    let manifest_path = dir.path().join("corpus.snapshot.manifest.json");
    println!("snapshot: {} bytes", std::fs::metadata(&snapshot).unwrap().len());
    println!("manifest: {}", std::fs::read_to_string(manifest_path).unwrap());

    let restored = KnowledgeStore::load_snapshot(&snapshot).unwrap();
    println!("restored {} documents", restored.len());

    let cfg = RetrievalConfig { k: 3, ..Default::default() };
    let query = Query::new("demo", "topic 3 documents").unwrap();
    let before = store.hybrid_retrieve(&query, &cfg).unwrap();
    let after = restored.hybrid_retrieve(&query, &cfg).unwrap();
    assert_eq!(before, after);
    println!("retrieval identical before and after reload:");
    for hit in after.hits {
        println!("  {:<8} {:.3}", hit.doc.doc_id, hit.final_score);
    }
}
