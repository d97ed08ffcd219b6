//! The low-energy pipeline: hybrid retrieval, context-grounded prompt
//! assembly, one generation call against the lightweight backend, and
//! energy recording for both stages.

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, ChatMessage, GenerationRequest};
use crate::energy::{Component, EnergyEstimate, EnergyRecord, HardwareProfile, Ledger, PathKind, TokenStats};
use crate::error::{Error, Result};
use crate::prompts;
use crate::router::Query;
use crate::store::{KnowledgeStore, RetrievalConfig, ScoredDocument};
use crate::text::{approx_token_count, split_sentences};

/// Green-path settings. The prompt budget defaults to the context cap minus
/// generation headroom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreenConfig {
    pub prompt_token_budget: u64,
    pub generation_headroom: u32,
    /// Overrides the shipped instruction preamble when set.
    pub preamble_override: Option<String>,
    /// Overrides the shipped no-context marker when set.
    pub no_context_override: Option<String>,
}

impl Default for GreenConfig {
    fn default() -> Self {
        GreenConfig {
            prompt_token_budget: 8192 - 1024,
            generation_headroom: 1024,
            preamble_override: None,
            no_context_override: None,
        }
    }
}

/// Outcome of one green-path invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenResult {
    pub answer: String,
    /// Doc ids whose text was included in the prompt, ranked order.
    pub citations: Vec<String>,
    pub token_stats: TokenStats,
    pub energy: EnergyEstimate,
    /// Retrieval or embedder fallback occurred.
    pub degraded: bool,
}

/// A green-path failure, carrying the energy records already incurred.
#[derive(Debug, thiserror::Error)]
#[error("green path failed: {source}")]
pub struct GreenError {
    pub source: Box<Error>,
    pub records: Vec<EnergyRecord>,
}

/// An assembled context-grounded prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct RagPrompt {
    pub text: String,
    pub included_doc_ids: Vec<String>,
    pub prompt_tokens: u64,
}

fn doc_block(rank: usize, doc: &ScoredDocument, text: &str) -> String {
    if doc.doc.title.is_empty() {
        format!("[{}] {}", rank, text)
    } else {
        format!("[{}] {}: {}", rank, doc.doc.title, text)
    }
}

/// Builds the green-path prompt: instruction preamble, numbered context
/// blocks highest-score first, then the question. Documents that do not fit
/// the token budget are truncated at sentence boundaries when possible and
/// dropped lowest-ranked first otherwise.
pub fn build_rag_prompt(
    query: &Query,
    docs: &[ScoredDocument],
    budget: u64,
    cfg: &GreenConfig,
) -> Result<RagPrompt> {
    let preamble = cfg
        .preamble_override
        .as_deref()
        .unwrap_or_else(|| prompts::template(prompts::RAG_PREAMBLE).expect("shipped template"))
        .trim_end()
        .to_string();
    let no_context = cfg
        .no_context_override
        .as_deref()
        .unwrap_or_else(|| prompts::template(prompts::RAG_NO_CONTEXT).expect("shipped template"))
        .trim_end()
        .to_string();

    let question_part = format!("Question: {}\nAnswer:", query.text.trim());
    let context_label = "Context:";
    let skeleton_tokens =
        approx_token_count(&preamble) + approx_token_count(&question_part) + approx_token_count(&no_context);
    if skeleton_tokens > budget {
        return Err(Error::Domain(format!(
            "prompt budget {budget} is below the preamble and question size {skeleton_tokens}"
        )));
    }

    let mut blocks: Vec<String> = Vec::new();
    let mut included: Vec<String> = Vec::new();
    let mut used = approx_token_count(&preamble)
        + approx_token_count(&question_part)
        + approx_token_count(context_label);
    for (i, hit) in docs.iter().enumerate() {
        let full = doc_block(i + 1, hit, hit.doc.text.trim());
        let full_tokens = approx_token_count(&full);
        if used + full_tokens <= budget {
            used += full_tokens;
            blocks.push(full);
            included.push(hit.doc.doc_id.clone());
            continue;
        }
        // try a sentence-boundary truncation before giving up on this doc
        let sentences = split_sentences(hit.doc.text.trim());
        let mut kept = String::new();
        for sentence in &sentences {
            let candidate = if kept.is_empty() {
                sentence.to_string()
            } else {
                format!("{kept} {sentence}")
            };
            let tokens = approx_token_count(&doc_block(i + 1, hit, &candidate));
            if used + tokens <= budget {
                kept = candidate;
            } else {
                break;
            }
        }
        if !kept.is_empty() {
            let block = doc_block(i + 1, hit, &kept);
            blocks.push(block);
            included.push(hit.doc.doc_id.clone());
        }
        // budget exhausted: everything lower-ranked is dropped
        break;
    }

    let text = if blocks.is_empty() {
        format!("{preamble}\n\n{no_context}\n\n{question_part}")
    } else {
        format!("{preamble}\n\n{context_label}\n{}\n\n{question_part}", blocks.join("\n"))
    };
    Ok(RagPrompt { prompt_tokens: approx_token_count(&text), text, included_doc_ids: included })
}

/// Runs the full green path for one query: retrieve, assemble, generate
/// once at temperature 0, and meter retrieval and generation separately.
#[allow(clippy::too_many_arguments)]
pub fn answer_green(
    query: &Query,
    store: &KnowledgeStore,
    retrieval_cfg: &RetrievalConfig,
    green_cfg: &GreenConfig,
    backend: &dyn Backend,
    ledger: &Ledger,
    profile: &HardwareProfile,
) -> std::result::Result<GreenResult, GreenError> {
    let mut records: Vec<EnergyRecord> = Vec::new();
    let fail = |source: Error, records: &[EnergyRecord]| GreenError {
        source: Box::new(source),
        records: records.to_vec(),
    };

    let outcome = store
        .hybrid_retrieve(query, retrieval_cfg)
        .map_err(|e| fail(e, &records))?;

    // retrieval cost: the embedder processes the query text once
    let retrieval_stats = TokenStats::new(approx_token_count(&query.text), 0);
    let retrieval_record =
        EnergyRecord::meter(&query.id, PathKind::Green, Component::Retrieval, retrieval_stats, profile)
            .map_err(|e| fail(e, &records))?;
    ledger.record(&retrieval_record).map_err(|e| fail(e, &records))?;
    records.push(retrieval_record);

    let prompt = build_rag_prompt(query, &outcome.hits, green_cfg.prompt_token_budget, green_cfg)
        .map_err(|e| fail(e, &records))?;

    let mut request = GenerationRequest::new(backend.id(), vec![ChatMessage::user(prompt.text.clone())]);
    request.temperature = query.params.temperature.unwrap_or(0.0);
    request.max_tokens = query.params.max_tokens.unwrap_or(green_cfg.generation_headroom);
    let completion = backend.complete(&request).map_err(|e| fail(e.into(), &records))?;

    let generation_record = EnergyRecord::meter(
        &query.id,
        PathKind::Green,
        Component::Generation,
        completion.token_stats(),
        profile,
    )
    .map_err(|e| fail(e, &records))?;
    ledger.record(&generation_record).map_err(|e| fail(e, &records))?;
    records.push(generation_record);

    let mut energy = EnergyEstimate::ZERO;
    let mut token_stats = TokenStats::default();
    for rec in &records {
        energy += rec.estimate;
        token_stats += rec.token_stats;
    }

    Ok(GreenResult {
        answer: completion.text,
        citations: prompt.included_doc_ids,
        token_stats,
        energy,
        degraded: outcome.degraded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ExhaustionPolicy, Fault, MockBackend, MockScript, ScriptedResponse};
    use crate::store::{Document, EmbedderKind};

    fn query(text: &str) -> Query {
        Query::new("q-green", text).unwrap()
    }

    fn hit(id: &str, text: &str, score: f64) -> ScoredDocument {
        ScoredDocument {
            doc: Document { doc_id: id.into(), title: String::new(), text: text.into() },
            sparse_raw: score,
            sparse_norm: score,
            dense_raw: score,
            dense_norm: score,
            final_score: score,
        }
    }

    fn green_profile() -> HardwareProfile {
        HardwareProfile::new("green-test", 1.0, 200.0, 100.0, 400.0)
    }

    #[test]
    fn empty_docs_use_no_context_marker() {
        let q = query("Who wrote it?");
        let prompt = build_rag_prompt(&q, &[], 1000, &GreenConfig::default()).unwrap();
        assert!(prompt.text.contains("[no context passages were retrieved"));
        assert!(prompt.text.contains("Question: Who wrote it?"));
        assert!(prompt.included_doc_ids.is_empty());
    }

    /// Tokens consumed by everything except the context blocks.
    fn prompt_base_tokens(question: &str) -> u64 {
        approx_token_count(prompts::template(prompts::RAG_PREAMBLE).unwrap().trim_end())
            + approx_token_count(&format!("Question: {question}\nAnswer:"))
            + approx_token_count("Context:")
    }

    #[test]
    fn lowest_ranked_docs_drop_first() {
        let q = query("test?");
        // five docs of 12 tokens each: "[n]" is 3 tokens plus 9 words
        let docs: Vec<ScoredDocument> = (0..5)
            .map(|i| hit(&format!("d{i}"), "one two three four five six seven eight nine", 1.0 - i as f64 * 0.1))
            .collect();
        let cfg = GreenConfig::default();
        // room for exactly two full blocks of 12 tokens
        let budget = prompt_base_tokens("test?") + 24;
        let prompt = build_rag_prompt(&q, &docs, budget, &cfg).unwrap();
        assert_eq!(prompt.included_doc_ids, vec!["d0", "d1"]);
        assert!(prompt.prompt_tokens <= budget);
    }

    #[test]
    fn near_fit_doc_truncates_at_sentence_boundary() {
        let q = query("test?");
        let docs = vec![hit("d0", "Short first sentence. A much longer second sentence with many extra words to overflow.", 1.0)];
        let cfg = GreenConfig::default();
        // fits "[1] Short first sentence." (7 tokens) but not the second sentence
        let budget = prompt_base_tokens("test?") + 8;
        let prompt = build_rag_prompt(&q, &docs, budget, &cfg).unwrap();
        assert!(prompt.text.contains("Short first sentence."));
        assert!(!prompt.text.contains("much longer second"));
        assert_eq!(prompt.included_doc_ids, vec!["d0"]);
        assert!(prompt.prompt_tokens <= budget);
    }

    #[test]
    fn budget_below_question_is_domain_error() {
        let q = query("a rather long question that will not fit in a tiny budget at all?");
        let err = build_rag_prompt(&q, &[], 4, &GreenConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn single_call_with_scripted_answer_and_energy() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = Ledger::open(dir.path().join("ledger.jsonl")).unwrap();
        let mut store = KnowledgeStore::new(EmbedderKind::default());
        store.ingest(vec![Document {
            doc_id: "film-1".into(),
            title: "Oppenheimer".into(),
            text: "Oppenheimer is a 2023 film directed by Christopher Nolan.".into(),
        }]);
        let backend = MockBackend::new(
            "green",
            MockScript::new(
                vec![ScriptedResponse::text("Christopher Nolan.")],
                ExhaustionPolicy::Fail,
            ),
        );
        let q = query("Who is the director of the movie Oppenheimer?");
        let result = answer_green(
            &q,
            &store,
            &RetrievalConfig::default(),
            &GreenConfig::default(),
            &backend,
            &ledger,
            &green_profile(),
        )
        .unwrap();

        assert_eq!(result.answer, "Christopher Nolan.");
        assert_eq!(backend.calls(), 1);
        assert_eq!(result.citations, vec!["film-1"]);
        assert!(!result.degraded);

        // energy equals the metered sum of both components
        let records = ledger.read_all().unwrap();
        assert_eq!(records.len(), 2);
        let total: f64 = records.iter().map(|r| r.estimate.joules).sum();
        assert!((result.energy.joules - total).abs() <= 1e-9 * total.max(1.0));
    }

    #[test]
    fn empty_store_answers_degraded() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = Ledger::open(dir.path().join("ledger.jsonl")).unwrap();
        let store = KnowledgeStore::new(EmbedderKind::default());
        let backend = MockBackend::new(
            "green",
            MockScript::new(vec![ScriptedResponse::text("General answer.")], ExhaustionPolicy::Fail),
        );
        let result = answer_green(
            &query("anything?"),
            &store,
            &RetrievalConfig::default(),
            &GreenConfig::default(),
            &backend,
            &ledger,
            &green_profile(),
        )
        .unwrap();
        assert!(result.degraded);
        assert!(result.citations.is_empty());
    }

    #[test]
    fn backend_timeout_keeps_retrieval_record() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = Ledger::open(dir.path().join("ledger.jsonl")).unwrap();
        let mut store = KnowledgeStore::new(EmbedderKind::default());
        store.ingest(vec![Document { doc_id: "a".into(), title: String::new(), text: "some context".into() }]);
        let backend = MockBackend::new(
            "green",
            MockScript::new(vec![ScriptedResponse::fault(Fault::Timeout)], ExhaustionPolicy::Fail),
        );
        let err = answer_green(
            &query("anything?"),
            &store,
            &RetrievalConfig::default(),
            &GreenConfig::default(),
            &backend,
            &ledger,
            &green_profile(),
        )
        .unwrap_err();
        assert_eq!(err.records.len(), 1);
        assert_eq!(err.records[0].component, Component::Retrieval);
        // the failed call still left its retrieval record in the ledger
        let persisted = ledger.read_all().unwrap();
        assert_eq!(persisted.len(), 1);
    }
}
