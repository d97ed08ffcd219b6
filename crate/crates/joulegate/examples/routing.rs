//! Complexity scoring and path selection.
//!
//! Scores a handful of queries with the built-in lexical model, shows the
//! feature vectors, and routes each one at the default threshold.
//!
//! Run: `cargo run --example routing`

use joulegate::router::{route, Query, RouterConfig};

fn main() {
    let cfg = RouterConfig::default();
    let queries = [
        "What is the capital of France?",
        "Who directed the movie Oppenheimer?",
        "If x = 3 and y = 4, what is x * y + 12 / 4?",
        "Janet has 5 apples. She buys 3 times as many as she had. How many does she have now?",
        "Devise a three-step plan to reduce office energy use and explain why each step works.",
        "2+2=?",
    ];

    println!("gamma = {}, delta_math = {}\n", cfg.gamma, cfg.delta_math);
    for text in queries {
        let query = Query::new("demo", text).unwrap();
        let decision = route(&query, &cfg);
        let mode = decision
            .mode
            .map(|m| format!("{m:?}"))
            .unwrap_or_else(|| "-".to_string());
        println!("score {:.3}  path {:<5}  mode {:<9}  {}",
            decision.score,
            format!("{:?}", decision.path),
            mode,
            text);
        for (name, value) in decision.features.named() {
            if value != 0.0 {
                println!("    {name:<20} {value:.4}");
            }
        }
    }
}
