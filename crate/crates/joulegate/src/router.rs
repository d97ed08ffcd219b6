//! Query complexity scoring and path selection.
//!
//! Every query gets a complexity score in (0,1) from a logistic model over
//! lexical features (or an external classifier endpoint); the score is
//! compared against the threshold `gamma` to pick Green vs Deep, and Deep
//! queries additionally get a reasoning mode from the math-symbol ratio
//! test. Ties: score == gamma routes Deep; ratio == delta_math stays
//! Creative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

/// The unit of routing: a request's text plus generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub params: GenParams,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Query> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Domain("query text must be non-empty".into()));
        }
        Ok(Query { id: id.into(), text, params: GenParams::default() })
    }
}

/// Caller-supplied generation parameters; paths fill in their own defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
}

/// Which scorer produces the complexity probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerKind {
    /// Logistic model over the built-in lexical features.
    BuiltinFeatures,
    /// External classifier: POST {"text": ...} -> {"score": p}.
    External { endpoint: String, #[serde(default = "default_scorer_timeout_ms")] timeout_ms: u64 },
}

fn default_scorer_timeout_ms() -> u64 {
    500
}

/// Weights of the built-in logistic scorer, one per feature, plus bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureWeights {
    pub token_count: f64,
    pub math_symbol_ratio: f64,
    pub digit_fraction: f64,
    pub interrogative_class: f64,
    pub step_cue_count: f64,
    pub avg_word_length: f64,
    pub bias: f64,
}

impl Default for FeatureWeights {
    fn default() -> Self {
        FeatureWeights {
            token_count: 1.0,
            math_symbol_ratio: 3.0,
            digit_fraction: 2.0,
            interrogative_class: 1.5,
            step_cue_count: 2.0,
            avg_word_length: 0.5,
            bias: -2.5,
        }
    }
}

/// Router configuration: thresholds, scorer choice, and feature weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterConfig {
    /// Deep-path threshold in [0,1]: score >= gamma routes Deep.
    pub gamma: f64,
    /// Math-mode threshold in [0,1]: symbol ratio > delta_math picks math mode.
    pub delta_math: f64,
    pub scorer: ScorerKind,
    pub weights: FeatureWeights,
    /// Whether pure-numeral tokens count as math symbols.
    pub numerals_are_math: bool,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            gamma: 0.5,
            delta_math: 0.2,
            scorer: ScorerKind::BuiltinFeatures,
            weights: FeatureWeights::default(),
            numerals_are_math: true,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0,1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.delta_math) {
            return Err(Error::Config(format!(
                "delta_math must be in [0,1], got {}",
                self.delta_math
            )));
        }
        Ok(())
    }
}

/// Path chosen by the router.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutePath {
    Green,
    Deep,
}

/// Deep-path reasoning mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    MathLogic,
    Creative,
}

/// Named values of the built-in feature extractor, kept on the decision for
/// inspection and dry-run responses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Features {
    pub token_count: f64,
    pub math_symbol_ratio: f64,
    pub digit_fraction: f64,
    pub interrogative_class: f64,
    pub step_cue_count: f64,
    pub avg_word_length: f64,
}

impl Features {
    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("token_count", self.token_count),
            ("math_symbol_ratio", self.math_symbol_ratio),
            ("digit_fraction", self.digit_fraction),
            ("interrogative_class", self.interrogative_class),
            ("step_cue_count", self.step_cue_count),
            ("avg_word_length", self.avg_word_length),
        ]
    }
}

/// The full routing outcome for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub score: f64,
    pub gamma_used: f64,
    pub path: RoutePath,
    /// Present exactly when `path == Deep`.
    pub mode: Option<Mode>,
    pub features: Features,
    /// Set when the external scorer failed and the built-in model answered.
    pub degraded: bool,
}

/// Operator characters counted as math symbols. ASCII `-` is accepted
/// alongside the typographic minus.
const MATH_SYMBOLS: &[char] = &[
    '+', '-', '\u{2212}', '\u{00d7}', '\u{00f7}', '=', '%', '<', '>', '\u{2211}', '\u{222b}',
    '\u{2200}', '\u{221a}', '^', '/', '*',
];

fn is_math_symbol_token(token: &str, numerals_are_math: bool) -> bool {
    if token.is_empty() {
        return false;
    }
    if token.chars().all(|c| MATH_SYMBOLS.contains(&c)) {
        return true;
    }
    numerals_are_math && is_pure_numeral(token)
}

fn is_pure_numeral(token: &str) -> bool {
    let mut saw_digit = false;
    for c in token.chars() {
        if c.is_ascii_digit() {
            saw_digit = true;
        } else if c != '.' && c != ',' {
            return false;
        }
    }
    saw_digit
}

/// Fraction of tokens that are math symbols (operators, and pure numerals
/// when enabled). Errors on an empty token list.
pub fn math_symbol_ratio(tokens: &[String], numerals_are_math: bool) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::Domain("math_symbol_ratio requires a non-empty token list".into()));
    }
    let matched = tokens
        .iter()
        .filter(|t| is_math_symbol_token(t, numerals_are_math))
        .count();
    Ok(matched as f64 / tokens.len() as f64)
}

/// Picks the deep-path reasoning mode: math when the symbol ratio strictly
/// exceeds `delta_math`, creative otherwise (ties stay creative).
pub fn select_reasoning_mode(query: &Query, delta_math: f64, numerals_are_math: bool) -> Mode {
    let tokens = tokenize(&query.text);
    // non-empty query text always tokenizes to >= 1 token
    let ratio = math_symbol_ratio(&tokens, numerals_are_math).unwrap_or(0.0);
    if ratio > delta_math {
        Mode::MathLogic
    } else {
        Mode::Creative
    }
}

/// Words that open a simple factoid question.
const FACTOID_WORDS: &[&str] = &["what", "who", "whom", "whose", "when", "where", "which"];

/// Words that signal an analytic or generative ask.
const ANALYTIC_CUES: &[&str] = &[
    "how", "why", "explain", "prove", "derive", "devise", "plan", "design", "calculate",
    "solve", "compute",
];

/// Conjunctions and multi-step cues.
const STEP_CUES: &[&str] = &[
    "and", "or", "but", "then", "if", "because", "therefore", "so", "hence", "thus", "after",
    "before", "while", "each", "per", "times", "total", "sum", "difference", "product",
    "remaining", "left", "altogether", "many", "much", "more", "fewer", "less", "twice", "half",
    "first", "second", "third", "next", "finally",
];

/// Extracts the built-in lexical feature vector. All features land in [0,1].
pub fn extract_features(text: &str, numerals_are_math: bool) -> Features {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Features::default();
    }
    let lowered: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();

    let token_count = (tokens.len() as f64 / 64.0).min(1.0);
    let ratio = math_symbol_ratio(&tokens, numerals_are_math).unwrap_or(0.0);

    let non_ws_chars = text.chars().filter(|c| !c.is_whitespace()).count();
    let digit_chars = text.chars().filter(|c| c.is_ascii_digit()).count();
    let digit_fraction = if non_ws_chars == 0 {
        0.0
    } else {
        digit_chars as f64 / non_ws_chars as f64
    };

    let has_analytic = lowered.iter().any(|t| ANALYTIC_CUES.contains(&t.as_str()));
    let has_factoid = lowered.iter().any(|t| FACTOID_WORDS.contains(&t.as_str()));
    let interrogative_class = if has_analytic {
        1.0
    } else if has_factoid {
        0.0
    } else {
        0.5
    };

    let cues = lowered.iter().filter(|t| STEP_CUES.contains(&t.as_str())).count();
    let step_cue_count = (cues as f64 / 8.0).min(1.0);

    let alpha_tokens: Vec<&String> =
        tokens.iter().filter(|t| t.chars().all(|c| c.is_alphabetic() || c == '\'')).collect();
    let avg_word_length = if alpha_tokens.is_empty() {
        0.0
    } else {
        let total: usize = alpha_tokens.iter().map(|t| t.chars().count()).sum();
        (total as f64 / alpha_tokens.len() as f64 / 10.0).min(1.0)
    };

    Features {
        token_count,
        math_symbol_ratio: ratio,
        digit_fraction,
        interrogative_class,
        step_cue_count,
        avg_word_length,
    }
}

/// Keeps the logistic output strictly inside (0,1) even when the linear
/// term saturates the sigmoid in f64.
fn clamp_open_unit(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

fn sigmoid(z: f64) -> f64 {
    clamp_open_unit(1.0 / (1.0 + (-z).exp()))
}

/// Scores features with a logistic model: sigma(w . f + b).
pub fn score_builtin(features: &Features, weights: &FeatureWeights) -> f64 {
    let z = weights.token_count * features.token_count
        + weights.math_symbol_ratio * features.math_symbol_ratio
        + weights.digit_fraction * features.digit_fraction
        + weights.interrogative_class * features.interrogative_class
        + weights.step_cue_count * features.step_cue_count
        + weights.avg_word_length * features.avg_word_length
        + weights.bias;
    sigmoid(z)
}

#[derive(Deserialize)]
struct ExternalScore {
    score: f64,
}

fn call_external_scorer(endpoint: &str, timeout_ms: u64, text: &str) -> Result<f64> {
    let mut response = ureq::post(endpoint)
        .config()
        .timeout_global(Some(std::time::Duration::from_millis(timeout_ms)))
        .build()
        .send_json(serde_json::json!({ "text": text }))
        .map_err(|e| Error::Config(format!("external scorer: {e}")))?;
    let parsed: ExternalScore = response
        .body_mut()
        .read_json()
        .map_err(|e| Error::Serde(format!("external scorer response: {e}")))?;
    if !(0.0..=1.0).contains(&parsed.score) || parsed.score.is_nan() {
        return Err(Error::Domain(format!(
            "external scorer returned {} outside [0,1]",
            parsed.score
        )));
    }
    Ok(parsed.score)
}

/// Computes the complexity score. Returns the score, the feature vector,
/// and whether the external scorer degraded to the built-in model.
pub fn score_complexity(query: &Query, cfg: &RouterConfig) -> (f64, Features, bool) {
    let features = extract_features(&query.text, cfg.numerals_are_math);
    match &cfg.scorer {
        ScorerKind::BuiltinFeatures => (score_builtin(&features, &cfg.weights), features, false),
        ScorerKind::External { endpoint, timeout_ms } => {
            match call_external_scorer(endpoint, *timeout_ms, &query.text) {
                Ok(p) => (clamp_open_unit(p), features, false),
                // unreachable scorer: fall back, flag the decision
                Err(_) => (score_builtin(&features, &cfg.weights), features, true),
            }
        }
    }
}

/// Routes a query: Deep when score >= gamma, Green otherwise. Deep
/// decisions carry the reasoning mode. Scorer failures degrade, never fail.
pub fn route(query: &Query, cfg: &RouterConfig) -> RoutingDecision {
    let (score, features, degraded) = score_complexity(query, cfg);
    let path = if score >= cfg.gamma { RoutePath::Deep } else { RoutePath::Green };
    let mode = match path {
        RoutePath::Deep => {
            Some(select_reasoning_mode(query, cfg.delta_math, cfg.numerals_are_math))
        }
        RoutePath::Green => None,
    };
    RoutingDecision { score, gamma_used: cfg.gamma, path, mode, features, degraded }
}
