//! Tokenization shared by the keyword classifiers, the rule oracle and node
//! clustering.

use std::collections::BTreeSet;

/// Function words ignored when matching keywords.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "am", "an", "and", "are", "as", "at", "be", "by", "can", "could", "do", "does",
    "for", "from", "have", "i", "in", "is", "it", "let", "like", "me", "my", "of", "on", "or",
    "please", "sure", "that", "the", "this", "to", "want", "we", "what", "will", "with", "would",
    "you", "your",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Lowercase alphanumeric runs, in order.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Distinct tokens that are not stopwords.
pub fn keywords(text: &str) -> BTreeSet<String> {
    tokens(text).into_iter().filter(|t| !is_stopword(t)).collect()
}

/// `|a ∩ b| / |a ∪ b|`, with two empty sets counting as identical.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}
