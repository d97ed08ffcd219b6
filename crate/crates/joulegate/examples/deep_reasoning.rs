//! The verification-heavy path: stepwise thought generation with per-step
//! verification, one retry with avoid-context on failure, certainty-based
//! early exit, and an iteration-capped refinement loop.
//!
//! The scripted backend fails the first step's verification, passes the
//! retry, and then produces a high-certainty second step that triggers the
//! early exit and the final answer call.
//!
//! Run: `cargo run --example deep_reasoning`

use joulegate::backend::{ExhaustionPolicy, MockBackend, MockScript, ScriptedResponse};
use joulegate::deep::{run_deep, DeepConfig};
use joulegate::energy::{HardwareProfile, Ledger};
use joulegate::router::{Mode, Query};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = Ledger::open(dir.path().join("ledger.jsonl")).unwrap();

    let script = MockScript::new(
        vec![
            // low confidence: exp(-1.2) ~ 0.30, below the 0.7 threshold
            ScriptedResponse::with_logprobs("Janet ends with 15 apples", vec![-1.2]),
            // the retry verifies: exp(-0.15) ~ 0.86
            ScriptedResponse::with_logprobs("5 x 3 = 15 apples bought; check: 15 / 3 = 5", vec![-0.15]),
            // second step lifts the chain certainty past the exit threshold
            ScriptedResponse::with_logprobs("total = 5 + 15 = 20; check: 20 - 15 = 5", vec![-0.05]),
            ScriptedResponse::with_logprobs("She has 20 apples.", vec![-0.02]),
        ],
        ExhaustionPolicy::Fail,
    );
    let backend = MockBackend::new("deep", script);
    let profile = HardwareProfile::new("deep-full", 1.2, 400.0, 60.0, 400.0);
    let cfg = DeepConfig { branch_factor: 1, tau_exit: -0.12, ..Default::default() };

    let query = Query::new(
        "demo-2",
        "Janet has 5 apples. She buys 3 times as many as she had. How many does she have now?",
    )
    .unwrap();
    let trace = run_deep(&query, Mode::MathLogic, &cfg, &backend, &ledger, &profile).unwrap();

    println!("template:  {}", trace.template_id);
    println!("exit:      {:?} after {} iteration(s)", trace.exit_cause, trace.iterations.len());
    println!("answer:    {}", trace.final_answer);
    println!("calls:     {} generation + {} verification",
        trace.generation_calls, trace.verification_calls);
    println!("energy:    {:.1} J  ({:.4} gCO2e)\n", trace.energy.joules, trace.energy.grams_co2e);

    for (i, iteration) in trace.iterations.iter().enumerate() {
        println!("iteration {}:", i + 1);
        for event in &iteration.backtracks {
            println!(
                "  backtrack at step {} (confidence {:.2}): {}",
                event.step_index, event.confidence, event.rejected_text
            );
        }
        for (t, step) in iteration.steps.iter().enumerate() {
            println!(
                "  step {} (confidence {:.2}, verified {}): {}",
                t + 1,
                step.confidence,
                step.verified,
                step.text
            );
        }
        if let Some(certainty) = iteration.certainty {
            println!("  chain certainty: {certainty:.3}");
        }
    }
}
