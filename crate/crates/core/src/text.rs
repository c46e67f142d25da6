//! Tiny text helpers shared by the query encoder and the relevance rules.
//!
//! One word model is used everywhere so that "Trash Can." in a question,
//! `trash can` as a category label, and `trash   can` in an answer all
//! normalize to the same token sequence.

/// Lowercased maximal runs of alphanumeric characters, in order.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Lowercase and collapse interior whitespace: `" Trash   Can "` -> `"trash can"`.
pub fn normalize_phrase(text: &str) -> String {
    tokenize(text).join(" ")
}

/// True when `needle` occurs in `haystack` as a contiguous word sequence.
/// Both sides use the [`tokenize`] word model, so the match is whole-word
/// and case-insensitive; a single-word needle never matches a substring of
/// a longer word.
pub fn contains_word_sequence(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}
