//! The computation-intensive pipeline: mode-specific prompting, stepwise
//! thought generation, per-step verification with retry and backtrack,
//! certainty-based early exit, and an iteration-capped refinement loop.
//!
//! Each generation call is metered against the deep hardware profile; a
//! trace's energy always equals the sum of the ledger records it wrote.

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, ChatMessage, GenerationRequest};
use crate::energy::{Component, EnergyEstimate, EnergyRecord, HardwareProfile, Ledger, PathKind, TokenStats};
use crate::error::{Error, Result};
use crate::prompts;
use crate::router::{Mode, Query};

/// A failed step is retried once with its text as avoid-context, then the
/// iteration is abandoned.
pub const RETRY_PER_STEP: u32 = 1;

/// Deep-path settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepConfig {
    /// Refinement-loop iteration cap.
    pub e_max: u32,
    /// Maximum reasoning steps per iteration.
    pub t_max: u32,
    /// Early-exit threshold on mean log-probability certainty.
    pub tau_exit: f64,
    /// Step-confidence verification threshold in [0,1].
    pub delta_verify: f64,
    /// Thought branches per expansion in creative mode.
    pub branch_factor: u32,
    pub temperature_math: f64,
    pub temperature_creative: f64,
    /// Optional hard joule cap; exceeding it aborts the run.
    pub max_joules: Option<f64>,
    /// Token cap per step generation.
    pub max_step_tokens: u32,
}

impl Default for DeepConfig {
    fn default() -> Self {
        DeepConfig {
            e_max: 3,
            t_max: 8,
            tau_exit: -0.35,
            delta_verify: 0.7,
            branch_factor: 3,
            temperature_math: 0.0,
            temperature_creative: 0.7,
            max_joules: None,
            max_step_tokens: 512,
        }
    }
}

impl DeepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.e_max < 1 {
            return Err(Error::Config("e_max must be >= 1".into()));
        }
        if self.t_max < 1 {
            return Err(Error::Config("t_max must be >= 1".into()));
        }
        if self.branch_factor < 1 {
            return Err(Error::Config("branch_factor must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.delta_verify) {
            return Err(Error::Config(format!(
                "delta_verify must be in [0,1], got {}",
                self.delta_verify
            )));
        }
        Ok(())
    }
}

/// Where a step's confidence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceSource {
    /// exp(mean token log-probability) of the step's own generation.
    Logprobs,
    /// A deterministic self-grading call (0-10 mapped to [0,1]).
    SelfEval,
}

/// One verified-or-rejected thought.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub text: String,
    pub step_logprobs: Option<Vec<f64>>,
    pub confidence: f64,
    pub verified: bool,
    pub confidence_source: ConfidenceSource,
}

/// A branch candidate that was generated but not kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedBranch {
    pub step_index: u32,
    pub text: String,
    pub confidence: f64,
}

/// A failed verification that triggered a retry or abandonment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktrackEvent {
    pub step_index: u32,
    pub attempt: u32,
    pub rejected_text: String,
    pub confidence: f64,
}

/// One pass of the refinement loop.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub steps: Vec<ReasoningStep>,
    pub pruned: Vec<PrunedBranch>,
    pub backtracks: Vec<BacktrackEvent>,
    pub certainty: Option<f64>,
    /// A step failed verification twice and the iteration was cut short.
    pub abandoned: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitCause {
    EarlyExit,
    BudgetExhausted,
}

/// Full account of one deep-path run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub mode: Mode,
    pub template_id: String,
    pub iterations: Vec<IterationTrace>,
    /// Step texts of each non-converged iteration's chain.
    pub history: Vec<Vec<String>>,
    pub exit_cause: ExitCause,
    pub final_answer: String,
    pub token_stats: TokenStats,
    pub energy: EnergyEstimate,
    pub generation_calls: u32,
    pub verification_calls: u32,
}

/// A deep-path failure with the partial trace and records already incurred.
#[derive(Debug, thiserror::Error)]
#[error("deep path failed: {source}")]
pub struct DeepError {
    pub source: Box<Error>,
    pub partial_trace: Box<ReasoningTrace>,
    pub records: Vec<EnergyRecord>,
}

/// Mean over steps of each step's mean token log-probability. Steps without
/// logprobs contribute ln(confidence), the inverse of the confidence map.
pub fn chain_certainty(chain: &[ReasoningStep]) -> Result<f64> {
    if chain.is_empty() {
        return Err(Error::Domain("chain_certainty requires a non-empty chain".into()));
    }
    let mut sum = 0.0;
    for step in chain {
        let value = match &step.step_logprobs {
            Some(lp) if !lp.is_empty() => lp.iter().sum::<f64>() / lp.len() as f64,
            _ => step.confidence.max(f64::MIN_POSITIVE).ln(),
        };
        sum += value;
    }
    Ok(sum / chain.len() as f64)
}

/// Step validity: confidence strictly above the verification threshold.
pub fn verify_step(confidence: f64, delta_verify: f64) -> bool {
    confidence > delta_verify
}

fn template_for(mode: Mode) -> (&'static str, &'static str) {
    match mode {
        Mode::MathLogic => {
            (prompts::UNI_MATH_COT, prompts::template(prompts::UNI_MATH_COT).expect("shipped"))
        }
        Mode::Creative => {
            (prompts::TOT_CREATIVE, prompts::template(prompts::TOT_CREATIVE).expect("shipped"))
        }
    }
}

struct RunState<'a> {
    query: &'a Query,
    cfg: &'a DeepConfig,
    backend: &'a dyn Backend,
    ledger: &'a Ledger,
    profile: &'a HardwareProfile,
    temperature: f64,
    records: Vec<EnergyRecord>,
    energy: EnergyEstimate,
    token_stats: TokenStats,
    generation_calls: u32,
    verification_calls: u32,
    joules_exhausted: bool,
}

impl<'a> RunState<'a> {
    fn over_joule_cap(&self) -> bool {
        match self.cfg.max_joules {
            Some(cap) => self.energy.joules >= cap,
            None => false,
        }
    }

    fn meter(&mut self, component: Component, stats: TokenStats) -> Result<()> {
        let record =
            EnergyRecord::meter(&self.query.id, PathKind::Deep, component, stats, self.profile)?;
        self.ledger.record(&record)?;
        self.energy += record.estimate;
        self.token_stats += stats;
        self.records.push(record);
        Ok(())
    }

    fn generate(&mut self, system: &str, user: String, component: Component) -> Result<crate::backend::Completion> {
        let mut request = GenerationRequest::new(
            self.backend.id(),
            vec![ChatMessage::system(system), ChatMessage::user(user)],
        );
        request.temperature = self.temperature;
        request.max_tokens = self.cfg.max_step_tokens;
        request.want_logprobs = true;
        if component == Component::Verification {
            request.temperature = 0.0;
            request.max_tokens = 8;
            request.want_logprobs = false;
        }
        let completion = self.backend.complete(&request)?;
        match component {
            Component::Verification => self.verification_calls += 1,
            _ => self.generation_calls += 1,
        }
        self.meter(component, completion.token_stats())?;
        Ok(completion)
    }

    /// Confidence of a generated thought: exp(mean logprob) when the backend
    /// gave logprobs, otherwise a self-grading call (0-10 scale).
    fn step_confidence(
        &mut self,
        completion: &crate::backend::Completion,
    ) -> Result<(f64, ConfidenceSource)> {
        if let Some(lp) = &completion.token_logprobs {
            if !lp.is_empty() {
                let mean = lp.iter().sum::<f64>() / lp.len() as f64;
                return Ok((mean.exp().min(1.0), ConfidenceSource::Logprobs));
            }
        }
        let body = format!(
            "{}\n\nStep:\n{}",
            prompts::template(prompts::SELF_EVAL).expect("shipped").trim_end(),
            completion.text
        );
        let graded = self.generate(prompts::SELF_EVAL, body, Component::Verification)?;
        let score = graded
            .text
            .trim()
            .split(|c: char| !c.is_ascii_digit())
            .find(|s| !s.is_empty())
            .and_then(|s| s.parse::<u32>().ok())
            .map(|n| (n.min(10) as f64) / 10.0)
            .unwrap_or(0.0);
        Ok((score, ConfidenceSource::SelfEval))
    }
}

fn step_prompt(
    query: &Query,
    chain: &[ReasoningStep],
    history: &[Vec<String>],
    avoid: Option<&str>,
    step_index: u32,
) -> String {
    let mut out = format!("Question: {}\n", query.text.trim());
    if !chain.is_empty() {
        out.push_str("\nVerified steps so far:\n");
        for (i, step) in chain.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, step.text));
        }
    }
    if !history.is_empty() {
        out.push_str("\nEarlier attempts that did not converge (avoid repeating them):\n");
        for (i, attempt) in history.iter().enumerate() {
            out.push_str(&format!("- attempt {}: {}\n", i + 1, attempt.join(" | ")));
        }
    }
    if let Some(avoid_text) = avoid {
        out.push_str(&format!(
            "\nThe previous candidate for this step failed verification; avoid it:\n{avoid_text}\n"
        ));
    }
    out.push_str(&format!("\nProduce reasoning step {step_index}."));
    out
}

fn final_prompt(query: &Query, chain: &[ReasoningStep]) -> String {
    let mut out = format!("Question: {}\n", query.text.trim());
    if chain.is_empty() {
        out.push_str("\n(no verified steps were produced)\n");
    } else {
        out.push_str("\nVerified reasoning steps:\n");
        for (i, step) in chain.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, step.text));
        }
    }
    out.push_str("\nFinal answer:");
    out
}

enum StepOutcome {
    Kept(ReasoningStep),
    Rejected(ReasoningStep),
}

/// Generates one candidate step. In creative mode with branch_factor > 1,
/// expands that many branches and keeps the best by confidence (ties go to
/// the first generated), recording the rest as pruned.
#[allow(clippy::too_many_arguments)]
fn generate_step(
    state: &mut RunState<'_>,
    mode: Mode,
    template_body: &str,
    chain: &[ReasoningStep],
    history: &[Vec<String>],
    avoid: Option<&str>,
    step_index: u32,
    iteration: &mut IterationTrace,
) -> Result<StepOutcome> {
    let branches =
        if mode == Mode::Creative { state.cfg.branch_factor.max(1) } else { 1 };
    let mut candidates: Vec<ReasoningStep> = Vec::new();
    for _ in 0..branches {
        let user = step_prompt(state.query, chain, history, avoid, step_index);
        let completion = state.generate(template_body, user, Component::Generation)?;
        let (confidence, source) = state.step_confidence(&completion)?;
        let step = ReasoningStep {
            text: completion.text,
            step_logprobs: completion.token_logprobs,
            confidence,
            verified: verify_step(confidence, state.cfg.delta_verify),
            confidence_source: source,
        };
        candidates.push(step);
    }
    // argmax by confidence; strict comparison keeps the first on ties
    let mut best_idx = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.confidence > candidates[best_idx].confidence {
            best_idx = i;
        }
    }
    for (i, c) in candidates.iter().enumerate() {
        if i != best_idx {
            iteration.pruned.push(PrunedBranch {
                step_index,
                text: c.text.clone(),
                confidence: c.confidence,
            });
        }
    }
    let step = candidates.swap_remove(best_idx);
    if step.verified {
        Ok(StepOutcome::Kept(step))
    } else {
        Ok(StepOutcome::Rejected(step))
    }
}

/// Runs the deep path to completion. The loop refines up to `e_max` times;
/// within an iteration up to `t_max` steps are generated, each verified and
/// retried once on failure. Certainty above `tau_exit` triggers the final
/// answer call and early exit; otherwise the chain joins the history and
/// the next iteration starts. Exhaustion answers from the highest-certainty
/// chain seen.
pub fn run_deep(
    query: &Query,
    mode: Mode,
    cfg: &DeepConfig,
    backend: &dyn Backend,
    ledger: &Ledger,
    profile: &HardwareProfile,
) -> std::result::Result<ReasoningTrace, DeepError> {
    if let Err(e) = cfg.validate() {
        return Err(DeepError {
            source: Box::new(e),
            partial_trace: Box::new(empty_trace(mode)),
            records: Vec::new(),
        });
    }
    let (template_id, template_body) = template_for(mode);
    let temperature = match mode {
        Mode::MathLogic => cfg.temperature_math,
        Mode::Creative => cfg.temperature_creative,
    };
    let mut state = RunState {
        query,
        cfg,
        backend,
        ledger,
        profile,
        temperature,
        records: Vec::new(),
        energy: EnergyEstimate::ZERO,
        token_stats: TokenStats::default(),
        generation_calls: 0,
        verification_calls: 0,
        joules_exhausted: false,
    };

    let mut iterations: Vec<IterationTrace> = Vec::new();
    let mut history: Vec<Vec<String>> = Vec::new();
    let mut converged = false;
    let mut final_answer: Option<String> = None;
    let mut best_chain: Vec<ReasoningStep> = Vec::new();
    let mut best_certainty = f64::NEG_INFINITY;
    let mut iter = 0;

    let fail = |state: RunState<'_>, iterations: Vec<IterationTrace>, history: Vec<Vec<String>>, e: Error| {
        DeepError {
            source: Box::new(e),
            partial_trace: Box::new(ReasoningTrace {
                mode,
                template_id: template_id.to_string(),
                iterations,
                history,
                exit_cause: ExitCause::BudgetExhausted,
                final_answer: String::new(),
                token_stats: state.token_stats,
                energy: state.energy,
                generation_calls: state.generation_calls,
                verification_calls: state.verification_calls,
            }),
            records: state.records,
        }
    };

    'outer: while !converged && iter < cfg.e_max {
        let mut iteration = IterationTrace::default();
        let mut chain: Vec<ReasoningStep> = Vec::new();
        for t in 1..=cfg.t_max {
            let mut avoid: Option<String> = None;
            let mut kept: Option<ReasoningStep> = None;
            for attempt in 0..=RETRY_PER_STEP {
                if state.over_joule_cap() {
                    state.joules_exhausted = true;
                    iteration.abandoned = !chain.is_empty() || attempt > 0;
                    iteration.certainty = chain_certainty(&chain).ok();
                    update_best(&chain, &mut best_chain, &mut best_certainty);
                    iteration.steps = chain.clone();
                    history.push(chain.iter().map(|s| s.text.clone()).collect());
                    iterations.push(iteration);
                    break 'outer;
                }
                let outcome = match generate_step(
                    &mut state,
                    mode,
                    template_body,
                    &chain,
                    &history,
                    avoid.as_deref(),
                    t,
                    &mut iteration,
                ) {
                    Ok(o) => o,
                    Err(e) => {
                        iteration.steps = chain;
                        iterations.push(iteration);
                        return Err(fail(state, iterations, history, e));
                    }
                };
                match outcome {
                    StepOutcome::Kept(step) => {
                        kept = Some(step);
                        break;
                    }
                    StepOutcome::Rejected(step) => {
                        iteration.backtracks.push(BacktrackEvent {
                            step_index: t,
                            attempt,
                            rejected_text: step.text.clone(),
                            confidence: step.confidence,
                        });
                        avoid = Some(step.text);
                    }
                }
            }
            let Some(step) = kept else {
                // retry exhausted: prune the branch and abandon this iteration
                iteration.abandoned = true;
                break;
            };
            chain.push(step);
            let certainty = chain_certainty(&chain).expect("chain non-empty");
            if certainty > cfg.tau_exit {
                let answer = match state.generate(
                    prompts::template(prompts::FINAL_ANSWER).expect("shipped"),
                    final_prompt(query, &chain),
                    Component::Generation,
                ) {
                    Ok(c) => c.text,
                    Err(e) => {
                        iteration.certainty = Some(certainty);
                        iteration.steps = chain;
                        iterations.push(iteration);
                        return Err(fail(state, iterations, history, e));
                    }
                };
                final_answer = Some(answer);
                converged = true;
                break;
            }
        }
        iteration.certainty = chain_certainty(&chain).ok();
        update_best(&chain, &mut best_chain, &mut best_certainty);
        iteration.steps = chain.clone();
        if !converged {
            history.push(chain.iter().map(|s| s.text.clone()).collect());
            iter += 1;
        }
        iterations.push(iteration);
    }

    let exit_cause = if converged { ExitCause::EarlyExit } else { ExitCause::BudgetExhausted };
    let final_answer = match final_answer {
        Some(a) => a,
        // iteration budget exhausted: answer from the best chain seen,
        // unless the joule cap tripped (no further calls allowed)
        None if state.joules_exhausted => String::new(),
        None => {
            match state.generate(
                prompts::template(prompts::FINAL_ANSWER).expect("shipped"),
                final_prompt(query, &best_chain),
                Component::Generation,
            ) {
                Ok(c) => c.text,
                Err(e) => return Err(fail(state, iterations, history, e)),
            }
        }
    };

    Ok(ReasoningTrace {
        mode,
        template_id: template_id.to_string(),
        iterations,
        history,
        exit_cause,
        final_answer,
        token_stats: state.token_stats,
        energy: state.energy,
        generation_calls: state.generation_calls,
        verification_calls: state.verification_calls,
    })
}

fn update_best(chain: &[ReasoningStep], best_chain: &mut Vec<ReasoningStep>, best_certainty: &mut f64) {
    if let Ok(c) = chain_certainty(chain) {
        if c > *best_certainty {
            *best_certainty = c;
            *best_chain = chain.to_vec();
        }
    }
}

fn empty_trace(mode: Mode) -> ReasoningTrace {
    let (template_id, _) = template_for(mode);
    ReasoningTrace {
        mode,
        template_id: template_id.to_string(),
        iterations: Vec::new(),
        history: Vec::new(),
        exit_cause: ExitCause::BudgetExhausted,
        final_answer: String::new(),
        token_stats: TokenStats::default(),
        energy: EnergyEstimate::ZERO,
        generation_calls: 0,
        verification_calls: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ExhaustionPolicy, MockBackend, MockScript, ScriptedResponse};

    fn query() -> Query {
        Query::new("q-deep", "If x = 3 and y = 4, what is x * y + 12 / 4?").unwrap()
    }

    fn ledger() -> (tempfile::TempDir, Ledger) {
        let dir = tempfile::tempdir().unwrap();
        let ledger = Ledger::open(dir.path().join("ledger.jsonl")).unwrap();
        (dir, ledger)
    }

    fn profile() -> HardwareProfile {
        HardwareProfile::new("deep-test", 1.2, 400.0, 50.0, 400.0)
    }

    fn linear_cfg() -> DeepConfig {
        DeepConfig {
            e_max: 3,
            t_max: 2,
            tau_exit: -0.25,
            delta_verify: 0.7,
            branch_factor: 1,
            ..Default::default()
        }
    }

    #[test]
    fn certainty_examples() {
        let step = |mean: f64| ReasoningStep {
            text: "s".into(),
            step_logprobs: Some(vec![mean]),
            confidence: mean.exp(),
            verified: true,
            confidence_source: ConfidenceSource::Logprobs,
        };
        // all token logprobs 0 => certainty 0
        assert_eq!(chain_certainty(&[step(0.0)]).unwrap(), 0.0);
        // step means [-0.1, -0.3] => -0.2
        let c = chain_certainty(&[step(-0.1), step(-0.3)]).unwrap();
        assert!((c - (-0.2)).abs() < 1e-12);
        assert!(matches!(chain_certainty(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn verification_is_strict() {
        assert!(verify_step(0.9, 0.8));
        assert!(!verify_step(0.8, 0.8));
        assert!(!verify_step(0.1, 0.8));
    }

    #[test]
    fn rising_certainty_exits_early() {
        // step 1 mean -0.3 (verifies, certainty -0.3 <= -0.25)
        // step 2 mean -0.1 (verifies, chain certainty -0.2 > -0.25) -> exit
        let script = MockScript::new(
            vec![
                ScriptedResponse::with_logprobs("step one", vec![-0.3, -0.3]),
                ScriptedResponse::with_logprobs("step two", vec![-0.1, -0.1]),
                ScriptedResponse::with_logprobs("the answer", vec![-0.05]),
            ],
            ExhaustionPolicy::Fail,
        );
        let backend = MockBackend::new("deep", script);
        let (_dir, ledger) = ledger();
        let trace =
            run_deep(&query(), Mode::MathLogic, &linear_cfg(), &backend, &ledger, &profile())
                .unwrap();

        assert_eq!(trace.exit_cause, ExitCause::EarlyExit);
        assert_eq!(trace.iterations.len(), 1);
        assert_eq!(trace.iterations[0].steps.len(), 2);
        assert_eq!(backend.calls(), 3);
        assert_eq!(trace.generation_calls, 3);
        assert_eq!(trace.final_answer, "the answer");
        assert!(trace.history.is_empty());
        assert_eq!(trace.template_id, "uni_math_cot");

        // trace energy equals the ledger records it wrote
        let total: f64 = ledger.read_all().unwrap().iter().map(|r| r.estimate.joules).sum();
        assert!((trace.energy.joules - total).abs() <= 1e-9 * total);
    }

    #[test]
    fn never_converging_exhausts_budget() {
        // every step verifies but certainty stays at -0.3 <= -0.25
        let script = MockScript::new(
            vec![ScriptedResponse::with_logprobs("plodding step", vec![-0.3, -0.3])],
            ExhaustionPolicy::RepeatLast,
        );
        let backend = MockBackend::new("deep", script);
        let (_dir, ledger) = ledger();
        let cfg = linear_cfg();
        let trace = run_deep(&query(), Mode::MathLogic, &cfg, &backend, &ledger, &profile()).unwrap();

        assert_eq!(trace.exit_cause, ExitCause::BudgetExhausted);
        assert_eq!(trace.iterations.len(), 3);
        assert_eq!(trace.history.len(), 3);
        // 3 iterations x 2 steps + 1 final answer on the best chain
        assert_eq!(backend.calls(), 7);
        let total: f64 = ledger.read_all().unwrap().iter().map(|r| r.estimate.joules).sum();
        assert!((trace.energy.joules - total).abs() <= 1e-9 * total);
    }

    #[test]
    fn failing_then_passing_records_one_backtrack() {
        // attempt 1: confidence exp(-1.0) ~= 0.37 < 0.7 -> backtrack + retry
        // attempt 2: confidence exp(-0.1) ~= 0.90 -> verified, certainty -0.1 > -0.25 -> exit
        let script = MockScript::new(
            vec![
                ScriptedResponse::with_logprobs("bad step", vec![-1.0]),
                ScriptedResponse::with_logprobs("good step", vec![-0.1]),
                ScriptedResponse::with_logprobs("done", vec![-0.05]),
            ],
            ExhaustionPolicy::Fail,
        );
        let backend = MockBackend::new("deep", script);
        let (_dir, ledger) = ledger();
        let trace =
            run_deep(&query(), Mode::MathLogic, &linear_cfg(), &backend, &ledger, &profile())
                .unwrap();

        assert_eq!(trace.exit_cause, ExitCause::EarlyExit);
        let backtracks: usize = trace.iterations.iter().map(|i| i.backtracks.len()).sum();
        assert_eq!(backtracks, 1);
        assert_eq!(trace.iterations[0].backtracks[0].rejected_text, "bad step");
        assert_eq!(backend.calls(), 3);
    }

    #[test]
    fn double_failure_abandons_iteration() {
        // both attempts at step 1 fail in every iteration
        let script = MockScript::new(
            vec![ScriptedResponse::with_logprobs("hopeless", vec![-2.0])],
            ExhaustionPolicy::RepeatLast,
        );
        let backend = MockBackend::new("deep", script);
        let (_dir, ledger) = ledger();
        let cfg = linear_cfg();
        let trace = run_deep(&query(), Mode::MathLogic, &cfg, &backend, &ledger, &profile()).unwrap();

        assert_eq!(trace.exit_cause, ExitCause::BudgetExhausted);
        assert!(trace.iterations.iter().all(|i| i.abandoned));
        assert_eq!(trace.history.len(), 3);
        // 2 attempts per iteration x 3 iterations + 1 final answer
        assert_eq!(backend.calls(), 7);
        let backtracks: usize = trace.iterations.iter().map(|i| i.backtracks.len()).sum();
        assert_eq!(backtracks, 6);
    }

    #[test]
    fn branch_expansion_keeps_argmax_and_prunes_rest() {
        // three branches with confidences exp(-0.9), exp(-0.1), exp(-0.35):
        // branch 2 wins, two pruned; certainty -0.1 > -0.25 -> exit
        let script = MockScript::new(
            vec![
                ScriptedResponse::with_logprobs("branch a", vec![-0.9]),
                ScriptedResponse::with_logprobs("branch b", vec![-0.1]),
                ScriptedResponse::with_logprobs("branch c", vec![-0.35]),
                ScriptedResponse::with_logprobs("answer", vec![-0.05]),
            ],
            ExhaustionPolicy::Fail,
        );
        let backend = MockBackend::new("deep", script);
        let (_dir, ledger) = ledger();
        let cfg = DeepConfig { branch_factor: 3, tau_exit: -0.25, t_max: 4, ..linear_cfg() };
        let trace = run_deep(&query(), Mode::Creative, &cfg, &backend, &ledger, &profile()).unwrap();

        assert_eq!(trace.exit_cause, ExitCause::EarlyExit);
        assert_eq!(trace.template_id, "tot_creative");
        assert_eq!(trace.iterations[0].steps.len(), 1);
        assert_eq!(trace.iterations[0].steps[0].text, "branch b");
        assert_eq!(trace.iterations[0].pruned.len(), 2);
        assert_eq!(backend.calls(), 4);
    }

    #[test]
    fn branch_factor_one_is_linear() {
        let script = MockScript::new(
            vec![
                ScriptedResponse::with_logprobs("only branch", vec![-0.1]),
                ScriptedResponse::with_logprobs("answer", vec![-0.05]),
            ],
            ExhaustionPolicy::Fail,
        );
        let backend = MockBackend::new("deep", script);
        let (_dir, ledger) = ledger();
        let cfg = DeepConfig { branch_factor: 1, ..linear_cfg() };
        let trace = run_deep(&query(), Mode::Creative, &cfg, &backend, &ledger, &profile()).unwrap();
        assert!(trace.iterations[0].pruned.is_empty());
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn self_eval_surrogate_used_without_logprobs() {
        // step text has no logprobs -> self-eval call returns "9" -> 0.9
        // ln(0.9) ~= -0.105 > -0.25 -> exit
        let script = MockScript::new(
            vec![
                ScriptedResponse::text("ungraded step"),
                ScriptedResponse::text("9"),
                ScriptedResponse::text("final"),
            ],
            ExhaustionPolicy::Fail,
        );
        let backend = MockBackend::new("deep", script);
        let (_dir, ledger) = ledger();
        let trace =
            run_deep(&query(), Mode::MathLogic, &linear_cfg(), &backend, &ledger, &profile())
                .unwrap();
        assert_eq!(trace.exit_cause, ExitCause::EarlyExit);
        let step = &trace.iterations[0].steps[0];
        assert_eq!(step.confidence_source, ConfidenceSource::SelfEval);
        assert!((step.confidence - 0.9).abs() < 1e-12);
        assert_eq!(trace.generation_calls, 2);
        assert_eq!(trace.verification_calls, 1);
        // the self-eval call was metered as verification
        let records = ledger.read_all().unwrap();
        assert!(records.iter().any(|r| r.component == Component::Verification));
    }

    #[test]
    fn backend_failure_preserves_partial_trace() {
        let script = MockScript::new(
            vec![ScriptedResponse::with_logprobs("step one", vec![-0.3])],
            ExhaustionPolicy::Fail,
        );
        let backend = MockBackend::new("deep", script);
        let (_dir, ledger) = ledger();
        let err = run_deep(&query(), Mode::MathLogic, &linear_cfg(), &backend, &ledger, &profile())
            .unwrap_err();
        assert_eq!(err.records.len(), 1);
        assert_eq!(err.partial_trace.generation_calls, 1);
    }

    #[test]
    fn joule_cap_aborts_run() {
        let script = MockScript::new(
            vec![ScriptedResponse::with_logprobs("step", vec![-0.3, -0.3])],
            ExhaustionPolicy::RepeatLast,
        );
        let backend = MockBackend::new("deep", script);
        let (_dir, ledger) = ledger();
        // profile charges ~19.2 J per call here; cap after the first one
        let cfg = DeepConfig { max_joules: Some(1.0), ..linear_cfg() };
        let trace = run_deep(&query(), Mode::MathLogic, &cfg, &backend, &ledger, &profile()).unwrap();
        assert_eq!(trace.exit_cause, ExitCause::BudgetExhausted);
        assert_eq!(backend.calls(), 1);
        assert!(trace.final_answer.is_empty());
    }

    #[test]
    fn mode_templates_are_recorded() {
        let script = MockScript::new(
            vec![ScriptedResponse::with_logprobs("s", vec![-0.1])],
            ExhaustionPolicy::RepeatLast,
        );
        let (_dir, ledger) = ledger();
        let math = run_deep(
            &query(),
            Mode::MathLogic,
            &linear_cfg(),
            &MockBackend::new("deep", script.clone()),
            &ledger,
            &profile(),
        )
        .unwrap();
        assert_eq!(math.template_id, "uni_math_cot");
        let creative = run_deep(
            &query(),
            Mode::Creative,
            &DeepConfig { branch_factor: 1, ..linear_cfg() },
            &MockBackend::new("deep", script),
            &ledger,
            &profile(),
        )
        .unwrap();
        assert_eq!(creative.template_id, "tot_creative");
    }
}
