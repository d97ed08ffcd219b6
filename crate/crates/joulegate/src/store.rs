//! Document store with sparse (BM25) and dense (vector) indexes and hybrid
//! top-k retrieval.
//!
//! The final relevance of a document is an alpha-weighted mix of its BM25
//! score and its embedding cosine, both min-max normalized per query over
//! the candidate pool. The default embedder is a hashed bag-of-words vector
//! (L2-normalized term-frequency hashing) so retrieval is fully
//! deterministic; an external embedding endpoint can replace it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::router::Query;
use crate::text::index_terms;

/// Corpora at or below this size are scored exhaustively; candidate pooling
/// only applies beyond it, where it cannot perturb small-corpus rankings.
pub const EXACT_SCORING_LIMIT: usize = 4096;

/// One ingestable document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

/// Which embedder produces dense vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderKind {
    /// Term-frequency hashing into `dim` buckets, L2-normalized.
    HashedBagOfWords { dim: usize },
    /// External embedder: POST {"text": ...} -> {"vector": [...]} of length `dim`.
    External { endpoint: String, dim: usize, #[serde(default = "default_embed_timeout_ms")] timeout_ms: u64 },
}

fn default_embed_timeout_ms() -> u64 {
    500
}

impl EmbedderKind {
    pub fn dim(&self) -> usize {
        match self {
            EmbedderKind::HashedBagOfWords { dim } => *dim,
            EmbedderKind::External { dim, .. } => *dim,
        }
    }
}

impl Default for EmbedderKind {
    fn default() -> Self {
        EmbedderKind::HashedBagOfWords { dim: 1 << 15 }
    }
}

/// Retrieval parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Sparse-vs-dense mixing weight in [0,1]; 1 is pure BM25.
    pub alpha: f64,
    /// Number of results to return.
    pub k: usize,
    /// BM25 term-saturation parameter.
    pub bm25_k1: f64,
    /// BM25 length-normalization parameter in [0,1].
    pub bm25_b: f64,
    pub embedder: EmbedderKind,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            alpha: 0.5,
            k: 5,
            bm25_k1: 1.2,
            bm25_b: 0.75,
            embedder: EmbedderKind::default(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0,1], got {}", self.alpha)));
        }
        if self.k < 1 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.bm25_k1.is_nan() || self.bm25_k1 <= 0.0 {
            return Err(Error::Config(format!("bm25_k1 must be > 0, got {}", self.bm25_k1)));
        }
        if !(0.0..=1.0).contains(&self.bm25_b) {
            return Err(Error::Config(format!("bm25_b must be in [0,1], got {}", self.bm25_b)));
        }
        Ok(())
    }
}

/// Batch ingestion outcome.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    /// Unique documents applied (a duplicate id within the batch counts once).
    pub count: u64,
    /// How many applied documents replaced an existing id.
    pub replaced: u64,
    pub errors: u64,
    pub error_details: Vec<String>,
    /// Index terms across applied documents.
    pub token_total: u64,
}

/// One retrieval hit with its score decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDocument {
    pub doc: Document,
    pub sparse_raw: f64,
    pub sparse_norm: f64,
    pub dense_raw: f64,
    pub dense_norm: f64,
    pub final_score: f64,
}

/// Retrieval result plus degradation flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalOutcome {
    pub hits: Vec<ScoredDocument>,
    /// Set when the store was empty or the embedder fell back to sparse-only.
    pub degraded: bool,
    /// The mixing weight actually applied (1.0 after an embedder fallback).
    pub alpha_used: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredDoc {
    title: String,
    text: String,
    term_counts: BTreeMap<String, u32>,
    len: u64,
    /// Sorted (index, weight) pairs, L2-normalized.
    embedding: Vec<(u32, f64)>,
}

/// Sparse + dense indexed corpus. Cloning yields an independent snapshot.
#[derive(Debug, Clone)]
pub struct KnowledgeStore {
    embedder: EmbedderKind,
    docs: BTreeMap<String, StoredDoc>,
    postings: BTreeMap<String, BTreeSet<String>>,
    doc_freq: BTreeMap<String, u64>,
    total_terms: u64,
}

/// FNV-1a hash, fixed so embeddings are stable across runs and platforms.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn hashed_embedding(term_counts: &BTreeMap<String, u32>, dim: usize) -> Vec<(u32, f64)> {
    let mut buckets: BTreeMap<u32, f64> = BTreeMap::new();
    for (term, count) in term_counts {
        let idx = (fnv1a(term.as_bytes()) % dim as u64) as u32;
        *buckets.entry(idx).or_default() += *count as f64;
    }
    let norm: f64 = buckets.values().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        buckets.into_iter().map(|(i, v)| (i, v / norm)).collect()
    } else {
        Vec::new()
    }
}

fn dot_sparse(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let mut sum = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sum += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

#[derive(Deserialize)]
struct ExternalVector {
    vector: Vec<f64>,
}

fn call_external_embedder(endpoint: &str, timeout_ms: u64, dim: usize, text: &str) -> Result<Vec<(u32, f64)>> {
    let mut response = ureq::post(endpoint)
        .config()
        .timeout_global(Some(std::time::Duration::from_millis(timeout_ms)))
        .build()
        .send_json(serde_json::json!({ "text": text }))
        .map_err(|e| Error::Config(format!("external embedder: {e}")))?;
    let parsed: ExternalVector = response
        .body_mut()
        .read_json()
        .map_err(|e| Error::Serde(format!("external embedder response: {e}")))?;
    if parsed.vector.len() != dim {
        return Err(Error::Config(format!(
            "external embedder returned dimension {}, expected {dim}",
            parsed.vector.len()
        )));
    }
    let norm: f64 = parsed.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(parsed
        .vector
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i as u32, if norm > 0.0 { *v / norm } else { *v }))
        .collect())
}

fn min_max_normalize(raw: &[f64]) -> Vec<f64> {
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in raw {
        min = min.min(v);
        max = max.max(v);
    }
    if max > min {
        raw.iter().map(|v| (v - min) / (max - min)).collect()
    } else {
        vec![0.0; raw.len()]
    }
}

impl KnowledgeStore {
    pub fn new(embedder: EmbedderKind) -> KnowledgeStore {
        KnowledgeStore {
            embedder,
            docs: BTreeMap::new(),
            postings: BTreeMap::new(),
            doc_freq: BTreeMap::new(),
            total_terms: 0,
        }
    }

    pub fn embedder(&self) -> &EmbedderKind {
        &self.embedder
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.keys().map(|s| s.as_str())
    }

    pub fn get(&self, doc_id: &str) -> Option<Document> {
        self.docs.get(doc_id).map(|d| Document {
            doc_id: doc_id.to_string(),
            title: d.title.clone(),
            text: d.text.clone(),
        })
    }

    fn embed_text(&self, text: &str) -> Result<Vec<(u32, f64)>> {
        match &self.embedder {
            EmbedderKind::HashedBagOfWords { dim } => {
                let mut counts: BTreeMap<String, u32> = BTreeMap::new();
                for term in index_terms(text) {
                    *counts.entry(term).or_default() += 1;
                }
                Ok(hashed_embedding(&counts, *dim))
            }
            EmbedderKind::External { endpoint, dim, timeout_ms } => {
                call_external_embedder(endpoint, *timeout_ms, *dim, text)
            }
        }
    }

    fn remove_doc(&mut self, doc_id: &str) -> bool {
        let Some(old) = self.docs.remove(doc_id) else { return false };
        for term in old.term_counts.keys() {
            if let Some(set) = self.postings.get_mut(term) {
                set.remove(doc_id);
                if set.is_empty() {
                    self.postings.remove(term);
                }
            }
            if let Some(df) = self.doc_freq.get_mut(term) {
                *df -= 1;
                if *df == 0 {
                    self.doc_freq.remove(term);
                }
            }
        }
        self.total_terms -= old.len;
        true
    }

    fn insert_doc(&mut self, doc: Document) -> Result<bool> {
        let terms = index_terms(&doc.text);
        let mut term_counts: BTreeMap<String, u32> = BTreeMap::new();
        for term in &terms {
            *term_counts.entry(term.clone()).or_default() += 1;
        }
        let embedding = match &self.embedder {
            EmbedderKind::HashedBagOfWords { dim } => hashed_embedding(&term_counts, *dim),
            EmbedderKind::External { endpoint, dim, timeout_ms } => {
                call_external_embedder(endpoint, *timeout_ms, *dim, &doc.text)?
            }
        };
        let replaced = self.remove_doc(&doc.doc_id);
        for term in term_counts.keys() {
            self.postings.entry(term.clone()).or_default().insert(doc.doc_id.clone());
            *self.doc_freq.entry(term.clone()).or_default() += 1;
        }
        self.total_terms += terms.len() as u64;
        self.docs.insert(
            doc.doc_id,
            StoredDoc {
                title: doc.title,
                text: doc.text,
                term_counts,
                len: terms.len() as u64,
                embedding,
            },
        );
        Ok(replaced)
    }

    /// Ingests a batch. Malformed documents are rejected per record and the
    /// batch continues; re-ingesting an existing id replaces it; a duplicate
    /// id within the batch resolves to the last occurrence.
    pub fn ingest<I>(&mut self, batch: I) -> IngestStats
    where
        I: IntoIterator<Item = Document>,
    {
        let mut stats = IngestStats::default();
        let mut applied: BTreeSet<String> = BTreeSet::new();
        let mut replaced_ids: BTreeSet<String> = BTreeSet::new();
        for doc in batch {
            if doc.doc_id.is_empty() {
                stats.errors += 1;
                stats.error_details.push("document with empty doc_id rejected".into());
                continue;
            }
            if doc.text.trim().is_empty() {
                stats.errors += 1;
                stats.error_details.push(format!("document `{}` has empty text", doc.doc_id));
                continue;
            }
            let id = doc.doc_id.clone();
            let tokens = index_terms(&doc.text).len() as u64;
            let already_in_batch = applied.contains(&id);
            match self.insert_doc(doc) {
                Ok(replaced) => {
                    if replaced && !already_in_batch {
                        replaced_ids.insert(id.clone());
                    }
                    applied.insert(id);
                    stats.token_total += tokens;
                }
                Err(e) => {
                    stats.errors += 1;
                    stats.error_details.push(format!("document `{id}`: {e}"));
                }
            }
        }
        stats.count = applied.len() as u64;
        stats.replaced = replaced_ids.len() as u64;
        stats
    }

    /// Ingests line-delimited JSON documents (`doc_id`, `title`, `text`).
    pub fn ingest_jsonl(&mut self, reader: impl BufRead) -> Result<IngestStats> {
        let mut docs = Vec::new();
        let mut parse_errors = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Document>(&line) {
                Ok(doc) => docs.push(doc),
                Err(e) => parse_errors.push(format!("line {}: {e}", lineno + 1)),
            }
        }
        let mut stats = self.ingest(docs);
        stats.errors += parse_errors.len() as u64;
        stats.error_details.extend(parse_errors);
        Ok(stats)
    }

    fn bm25(&self, query_terms: &BTreeSet<String>, doc: &StoredDoc, cfg: &RetrievalConfig) -> f64 {
        let n = self.docs.len() as f64;
        let avgdl = if self.docs.is_empty() || self.total_terms == 0 {
            1.0
        } else {
            self.total_terms as f64 / n
        };
        let mut score = 0.0;
        for term in query_terms {
            let tf = *doc.term_counts.get(term).unwrap_or(&0) as f64;
            if tf == 0.0 {
                continue;
            }
            let df = *self.doc_freq.get(term).unwrap_or(&0) as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            let denom = tf + cfg.bm25_k1 * (1.0 - cfg.bm25_b + cfg.bm25_b * doc.len as f64 / avgdl);
            score += idf * (tf * (cfg.bm25_k1 + 1.0)) / denom;
        }
        score
    }

    /// Okapi BM25 score of one ingested document against the query.
    pub fn sparse_score(&self, query: &Query, doc_id: &str, cfg: &RetrievalConfig) -> Result<f64> {
        let doc = self
            .docs
            .get(doc_id)
            .ok_or_else(|| Error::Domain(format!("document `{doc_id}` is not ingested")))?;
        let query_terms: BTreeSet<String> = index_terms(&query.text).into_iter().collect();
        Ok(self.bm25(&query_terms, doc, cfg))
    }

    /// Embedding cosine of one ingested document against the query.
    pub fn dense_score(&self, query: &Query, doc_id: &str, _cfg: &RetrievalConfig) -> Result<f64> {
        let doc = self
            .docs
            .get(doc_id)
            .ok_or_else(|| Error::Domain(format!("document `{doc_id}` is not ingested")))?;
        let q_emb = self.embed_text(&query.text)?;
        Ok(dot_sparse(&q_emb, &doc.embedding))
    }

    /// Hybrid top-k retrieval: candidates are scored sparse and dense, both
    /// are min-max normalized over the candidate pool, mixed with alpha, and
    /// ranked descending (ties by ascending doc_id).
    pub fn hybrid_retrieve(&self, query: &Query, cfg: &RetrievalConfig) -> Result<RetrievalOutcome> {
        cfg.validate()?;
        if self.docs.is_empty() {
            return Ok(RetrievalOutcome { hits: Vec::new(), degraded: true, alpha_used: cfg.alpha });
        }

        let query_terms: BTreeSet<String> = index_terms(&query.text).into_iter().collect();
        let (query_embedding, degraded) = match self.embed_text(&query.text) {
            Ok(e) => (Some(e), false),
            // embedder unreachable: degrade to sparse-only
            Err(_) => (None, true),
        };
        let alpha_used = if query_embedding.is_none() { 1.0 } else { cfg.alpha };

        let sparse_of = |id: &str| self.bm25(&query_terms, &self.docs[id], cfg);
        let dense_of = |id: &str| match &query_embedding {
            Some(q) => dot_sparse(q, &self.docs[id].embedding),
            None => 0.0,
        };

        let candidates: Vec<&str> = if self.docs.len() <= EXACT_SCORING_LIMIT {
            self.docs.keys().map(|s| s.as_str()).collect()
        } else {
            let pool_width = 4 * cfg.k;
            let top = |key: &dyn Fn(&str) -> f64| -> Vec<&str> {
                let mut scored: Vec<(&str, f64)> =
                    self.docs.keys().map(|id| (id.as_str(), key(id.as_str()))).collect();
                scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
                scored.truncate(pool_width);
                scored.into_iter().map(|(id, _)| id).collect()
            };
            let mut pool: BTreeSet<&str> = top(&sparse_of).into_iter().collect();
            pool.extend(top(&dense_of));
            pool.into_iter().collect()
        };

        let sparse_raw: Vec<f64> = candidates.iter().map(|id| sparse_of(id)).collect();
        let dense_raw: Vec<f64> = candidates.iter().map(|id| dense_of(id)).collect();
        let sparse_norm = min_max_normalize(&sparse_raw);
        let dense_norm = min_max_normalize(&dense_raw);

        let mut hits: Vec<ScoredDocument> = candidates
            .iter()
            .enumerate()
            .map(|(i, id)| ScoredDocument {
                doc: self.get(id).expect("candidate came from the index"),
                sparse_raw: sparse_raw[i],
                sparse_norm: sparse_norm[i],
                dense_raw: dense_raw[i],
                dense_norm: dense_norm[i],
                final_score: alpha_used * sparse_norm[i] + (1.0 - alpha_used) * dense_norm[i],
            })
            .collect();
        hits.sort_by(|a, b| {
            b.final_score.total_cmp(&a.final_score).then_with(|| a.doc.doc_id.cmp(&b.doc.doc_id))
        });
        hits.truncate(cfg.k);
        Ok(RetrievalOutcome { hits, degraded, alpha_used })
    }

    /// Serializes the corpus (documents, sparse term stats, dense vectors)
    /// to a versioned binary snapshot with a JSON manifest alongside it.
    pub fn save_snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let docs: Vec<SnapshotDoc> = self
            .docs
            .iter()
            .map(|(id, d)| SnapshotDoc {
                doc_id: id.clone(),
                title: d.title.clone(),
                text: d.text.clone(),
                term_counts: d.term_counts.clone(),
                len: d.len,
                embedding: d.embedding.clone(),
            })
            .collect();
        let manifest = SnapshotManifest {
            format_version: SNAPSHOT_VERSION,
            doc_count: docs.len() as u64,
            embedder: self.embedder.clone(),
        };

        let mut file = std::fs::File::create(path)?;
        file.write_all(SNAPSHOT_MAGIC)?;
        file.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        let manifest_bytes = serde_json::to_vec(&manifest)?;
        file.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
        file.write_all(&manifest_bytes)?;
        let body = bincode::serialize(&docs).map_err(|e| Error::Serde(e.to_string()))?;
        file.write_all(&(body.len() as u64).to_le_bytes())?;
        file.write_all(&body)?;

        let manifest_path = manifest_sibling(path);
        std::fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    /// Restores a store from [`save_snapshot`] output. Dense vectors are
    /// reused as stored, so an external embedder is not re-contacted.
    pub fn load_snapshot(path: impl AsRef<Path>) -> Result<KnowledgeStore> {
        let mut file = std::fs::File::open(path.as_ref())?;
        let mut magic = [0u8; 4];
        file.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Serde("snapshot magic mismatch".into()));
        }
        let mut version = [0u8; 4];
        file.read_exact(&mut version)?;
        let version = u32::from_le_bytes(version);
        if version != SNAPSHOT_VERSION {
            return Err(Error::Serde(format!(
                "snapshot version {version} unsupported (expected {SNAPSHOT_VERSION})"
            )));
        }
        let manifest: SnapshotManifest = serde_json::from_slice(&read_len_prefixed(&mut file)?)?;
        let docs: Vec<SnapshotDoc> = bincode::deserialize(&read_len_prefixed(&mut file)?)
            .map_err(|e| Error::Serde(e.to_string()))?;

        let mut store = KnowledgeStore::new(manifest.embedder);
        for snap in docs {
            for term in snap.term_counts.keys() {
                store.postings.entry(term.clone()).or_default().insert(snap.doc_id.clone());
                *store.doc_freq.entry(term.clone()).or_default() += 1;
            }
            store.total_terms += snap.len;
            store.docs.insert(
                snap.doc_id,
                StoredDoc {
                    title: snap.title,
                    text: snap.text,
                    term_counts: snap.term_counts,
                    len: snap.len,
                    embedding: snap.embedding,
                },
            );
        }
        Ok(store)
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"JGKS";
const SNAPSHOT_VERSION: u32 = 1;

fn manifest_sibling(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn read_len_prefixed(file: &mut std::fs::File) -> Result<Vec<u8>> {
    let mut len = [0u8; 8];
    file.read_exact(&mut len)?;
    let mut buf = vec![0u8; u64::from_le_bytes(len) as usize];
    file.read_exact(&mut buf)?;
    Ok(buf)
}

#[derive(Serialize, Deserialize)]
struct SnapshotManifest {
    format_version: u32,
    doc_count: u64,
    embedder: EmbedderKind,
}

#[derive(Serialize, Deserialize)]
struct SnapshotDoc {
    doc_id: String,
    title: String,
    text: String,
    term_counts: BTreeMap<String, u32>,
    len: u64,
    embedding: Vec<(u32, f64)>,
}
