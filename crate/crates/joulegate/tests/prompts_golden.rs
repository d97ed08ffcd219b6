//! Golden pins for the shipped prompt templates. Any wording change must
//! be deliberate: update the expected text here and bump the library
//! version together.

use joulegate::prompts;

#[test]
fn prompt_library_version_is_current() {
    assert_eq!(prompts::PROMPT_LIBRARY_VERSION, "1");
}

#[test]
fn math_template_golden() {
    let expected = "\
You are a careful mathematical reasoner. Work the problem one step at a time.
For each step: state what you are computing, show the calculation, then
restate the result in your own words and re-verify it with an independent
check (substitute it back, recompute it a second way, or bound it) before
affirming the step. If a re-check fails, write CHECK FAILED and stop the
step. Keep each step short and end it with the running result.
";
    assert_eq!(prompts::template(prompts::UNI_MATH_COT).unwrap(), expected);
}

#[test]
fn creative_template_golden() {
    let expected = "\
You are exploring candidate lines of reasoning for an open-ended problem.
Propose exactly one coherent thought that extends the reasoning so far: a
concrete, specific next step toward an answer. Do not repeat earlier
thoughts and avoid approaches that already failed. Keep it to a few
sentences.
";
    assert_eq!(prompts::template(prompts::TOT_CREATIVE).unwrap(), expected);
}

#[test]
fn final_answer_template_golden() {
    let expected = "\
Given the question and the verified reasoning steps below, state the final
answer directly and concisely. Do not introduce new reasoning or repeat the
steps.
";
    assert_eq!(prompts::template(prompts::FINAL_ANSWER).unwrap(), expected);
}

#[test]
fn self_eval_template_golden() {
    let expected = "\
Rate the correctness and usefulness of the following reasoning step on an
integer scale from 0 (clearly wrong) to 10 (clearly correct and useful).
Respond with only the integer.
";
    assert_eq!(prompts::template(prompts::SELF_EVAL).unwrap(), expected);
}

#[test]
fn rag_templates_golden() {
    let preamble = "\
Answer the question using the numbered context passages below. Prefer facts
stated in the passages; if the context does not contain the answer, say so
briefly and answer from general knowledge. Answer concisely.
";
    assert_eq!(prompts::template(prompts::RAG_PREAMBLE).unwrap(), preamble);
    assert_eq!(
        prompts::template(prompts::RAG_NO_CONTEXT).unwrap(),
        "[no context passages were retrieved for this question]\n"
    );
}

#[test]
fn mode_templates_differ() {
    assert_ne!(
        prompts::template(prompts::UNI_MATH_COT).unwrap(),
        prompts::template(prompts::TOT_CREATIVE).unwrap()
    );
}
