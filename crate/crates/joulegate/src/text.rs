//! Shared text utilities: tokenization, token counting, sentence splitting.
//!
//! One tokenizer is used everywhere a token count feeds routing or energy
//! accounting, so counts stay consistent across modules. The rules are fixed
//! and deterministic:
//!
//! - split on Unicode whitespace;
//! - within a chunk, alphanumeric runs form one token;
//! - every other character becomes a standalone token (operators, punctuation);
//! - `.` and `,` between two digits stay inside the token (`3.5`, `1,000`);
//! - `'` between two letters stays inside the token (`don't`).

/// Splits text into tokens with operators and punctuation standalone.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut current = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let joins_digits = (c == '.' || c == ',')
                && i > 0
                && i + 1 < chars.len()
                && chars[i - 1].is_ascii_digit()
                && chars[i + 1].is_ascii_digit();
            let joins_letters = c == '\''
                && i > 0
                && i + 1 < chars.len()
                && chars[i - 1].is_alphabetic()
                && chars[i + 1].is_alphabetic();
            if c.is_alphanumeric() || joins_digits || joins_letters {
                current.push(c);
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Deterministic local token-count approximation (whitespace-and-punctuation
/// split). Backends that report real usage override this.
pub fn approx_token_count(text: &str) -> u64 {
    tokenize(text).len() as u64
}

/// Lowercased alphanumeric terms for indexing and embedding. Unlike
/// [`tokenize`], punctuation and operators are discarded.
pub fn index_terms(text: &str) -> Vec<String> {
    let mut terms = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            terms.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        terms.push(current);
    }
    terms
}

/// Splits text into sentences at `.`, `?`, `!` or `;` boundaries followed by
/// whitespace (or end of text). Each returned slice keeps its terminator.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if matches!(c, '.' | '?' | '!' | ';') {
            let at_end = i + 1 == bytes.len();
            let before_space = !at_end && (bytes[i + 1] as char).is_whitespace();
            if at_end || before_space {
                let sentence = text[start..=i].trim();
                if !sentence.is_empty() {
                    out.push(sentence);
                }
                start = i + 1;
            }
        }
        i += 1;
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operators_are_standalone_tokens() {
        assert_eq!(tokenize("2+2=?"), vec!["2", "+", "2", "=", "?"]);
    }

    #[test]
    fn trailing_punctuation_splits_off() {
        assert_eq!(
            tokenize("What is the capital of France?"),
            vec!["What", "is", "the", "capital", "of", "France", "?"]
        );
    }

    #[test]
    fn decimals_and_contractions_stay_whole() {
        assert_eq!(tokenize("3.5 don't 1,000"), vec!["3.5", "don't", "1,000"]);
        // but a trailing period is punctuation, not a decimal point
        assert_eq!(tokenize("3."), vec!["3", "."]);
    }

    #[test]
    fn approx_count_matches_examples() {
        assert_eq!(approx_token_count(""), 0);
        assert_eq!(approx_token_count("a b c"), 3);
    }

    #[test]
    fn index_terms_lowercase_alphanumeric() {
        assert_eq!(
            index_terms("The Apple, the APPLE!"),
            vec!["the", "apple", "the", "apple"]
        );
        assert_eq!(index_terms("??!"), Vec::<String>::new());
    }

    #[test]
    fn sentence_split_keeps_terminators() {
        let s = "First one. Second? Third ends here";
        assert_eq!(
            split_sentences(s),
            vec!["First one.", "Second?", "Third ends here"]
        );
    }

    #[test]
    fn sentence_split_ignores_inner_decimal_points() {
        // "3.5" has no whitespace after the dot, so it does not split
        assert_eq!(split_sentences("of 3.5 units. done"), vec!["of 3.5 units.", "done"]);
    }
}
