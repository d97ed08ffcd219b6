//! Energy-metered adaptive inference gateway.
//!
//! Incoming queries are scored for complexity and routed either to a
//! low-energy retrieval-grounded path (hybrid BM25 + embedding retrieval,
//! one generation call on a small backend) or to a verification-heavy
//! reasoning path (stepwise thought generation with per-step verification,
//! certainty-based early exit, and an iteration-capped refinement loop).
//! Every backend call is metered against a physics-grounded energy model
//! (PUE x average power x tokens / throughput) and recorded in an
//! append-only ledger that aggregates into per-path and per-component
//! emission reports.
//!
//! The `examples/` directory has one runnable program per capability:
//!
//! - `energy_model` — the token-time energy and carbon model
//! - `routing` — complexity scoring and path selection
//! - `hybrid_retrieval` — sparse + dense fused retrieval over a toy corpus
//! - `green_pipeline` — the retrieval-grounded low-energy path end to end
//! - `deep_reasoning` — verified stepwise reasoning with early exit
//! - `gamma_sweep` — threshold sensitivity sweeps and selection
//! - `emission_report` — ledger aggregation with component breakdowns
//! - `significance` — paired t-tests over matched result sets
//! - `service_endpoints` — the HTTP service exercised over the wire
//!
//! A thin `joulegate` binary wraps the same operations as subcommands
//! (`serve`, `query`, `ingest`, `report`, `sweep-gamma`, `select-gamma`,
//! `paired-t-test`).

pub mod backend;
pub mod config;
pub mod deep;
pub mod energy;
pub mod error;
pub mod green;
pub mod prompts;
pub mod router;
pub mod service;
pub mod stats;
pub mod store;
pub mod sweep;
pub mod text;

pub use error::{Error, Result};
