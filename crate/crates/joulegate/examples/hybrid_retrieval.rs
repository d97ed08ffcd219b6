//! Hybrid sparse + dense retrieval over a toy corpus.
//!
//! Ingests a dozen documents, then retrieves for one query at several
//! mixing weights, printing the score decomposition of each hit.
//!
//! Run: `cargo run --example hybrid_retrieval`

use joulegate::router::Query;
use joulegate::store::{Document, EmbedderKind, KnowledgeStore, RetrievalConfig};

fn main() {
    let corpus = [
        ("solar", "Solar power converts sunlight into electricity using photovoltaic cells."),
        ("wind", "Wind turbines generate electricity from moving air over large blades."),
        ("hydro", "Hydroelectric dams store water and release it through turbines."),
        ("coal", "Coal plants burn fossil fuel and emit significant carbon dioxide."),
        ("gas", "Natural gas turbines emit less carbon than coal but are still fossil."),
        ("nuclear", "Nuclear reactors split atoms to boil water with no direct emissions."),
        ("geo", "Geothermal plants tap heat from deep underground reservoirs."),
        ("battery", "Grid batteries smooth the output of intermittent renewable sources."),
        ("carbon", "Carbon intensity measures grams of carbon dioxide per kilowatt hour."),
        ("pue", "Power usage effectiveness compares facility power to IT equipment power."),
        ("chip", "Accelerator chips draw hundreds of watts under sustained load."),
        ("token", "Language models spend energy roughly in proportion to tokens processed."),
    ];
    let mut store = KnowledgeStore::new(EmbedderKind::default());
    let stats = store.ingest(corpus.iter().map(|(id, text)| Document {
        doc_id: id.to_string(),
        title: String::new(),
        text: text.to_string(),
    }));
    println!("ingested {} documents ({} terms)\n", stats.count, stats.token_total);

    let query = Query::new("demo", "carbon emissions of electricity generation").unwrap();
    for alpha in [1.0, 0.5, 0.0] {
        let cfg = RetrievalConfig { alpha, k: 3, ..Default::default() };
        let outcome = store.hybrid_retrieve(&query, &cfg).unwrap();
        println!("alpha = {alpha} (1 = lexical only, 0 = embedding only)");
        for hit in outcome.hits {
            println!(
                "  {:<8} final {:.3}  (sparse raw {:.3} -> {:.3}, dense raw {:.3} -> {:.3})",
                hit.doc.doc_id,
                hit.final_score,
                hit.sparse_raw,
                hit.sparse_norm,
                hit.dense_raw,
                hit.dense_norm
            );
        }
        println!();
    }
}
