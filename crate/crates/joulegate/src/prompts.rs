//! Versioned prompt templates, shipped as text assets and pinned by golden
//! tests. Paths address them by name so traces can record which template
//! produced a step.

/// Bumped whenever any template text changes.
pub const PROMPT_LIBRARY_VERSION: &str = "1";

pub const UNI_MATH_COT: &str = "uni_math_cot";
pub const TOT_CREATIVE: &str = "tot_creative";
pub const FINAL_ANSWER: &str = "final_answer";
pub const SELF_EVAL: &str = "self_eval";
pub const RAG_PREAMBLE: &str = "rag_preamble";
pub const RAG_NO_CONTEXT: &str = "rag_no_context";

/// Looks up a template body by name.
pub fn template(name: &str) -> Option<&'static str> {
    match name {
        UNI_MATH_COT => Some(include_str!("../prompts/uni_math_cot.txt")),
        TOT_CREATIVE => Some(include_str!("../prompts/tot_creative.txt")),
        FINAL_ANSWER => Some(include_str!("../prompts/final_answer.txt")),
        SELF_EVAL => Some(include_str!("../prompts/self_eval.txt")),
        RAG_PREAMBLE => Some(include_str!("../prompts/rag_preamble.txt")),
        RAG_NO_CONTEXT => Some(include_str!("../prompts/rag_no_context.txt")),
        _ => None,
    }
}

/// All template names, for enumeration and tests.
pub const ALL_TEMPLATES: &[&str] =
    &[UNI_MATH_COT, TOT_CREATIVE, FINAL_ANSWER, SELF_EVAL, RAG_PREAMBLE, RAG_NO_CONTEXT];
