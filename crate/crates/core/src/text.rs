//! Small text helpers shared by the planner fallback and the mock providers.

use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use crate::indexing::tokenize;

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be", "been",
    "before", "being", "both", "but", "by", "can", "could", "did", "do", "does", "doing", "during", "each", "for",
    "from", "had", "has", "have", "having", "he", "her", "here", "hers", "him", "his", "how", "i", "if", "in", "into",
    "is", "it", "its", "just", "me", "might", "more", "most", "my", "no", "not", "of", "on", "or", "other", "our",
    "ours", "out", "s", "she", "should", "so", "some", "such", "t", "than", "that", "the", "their", "theirs", "them",
    "then", "there", "these", "they", "this", "those", "to", "too", "up", "us", "very", "was", "we", "were", "what",
    "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours",
];

/// Auxiliaries after which a capitalised word is taken to be a person's name.
const NAME_CUES: &[&str] = &[
    "did", "does", "do", "is", "was", "were", "are", "has", "have", "had", "would", "will", "can", "could", "might",
    "should", "may", "and",
];

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.iter().copied().collect())
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

/// Lowercased tokens of capitalised words that follow an auxiliary verb or
/// another name joined by "and" ("did Caroline and Melanie ...").
pub fn name_tokens(text: &str) -> HashSet<String> {
    let words: Vec<&str> = text
        .split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .collect();
    let mut names = HashSet::new();
    for (i, word) in words.iter().enumerate().skip(1) {
        let first = word.chars().next().unwrap_or(' ');
        if !first.is_uppercase() {
            continue;
        }
        let prev = words[i - 1].to_lowercase();
        if NAME_CUES.contains(&prev.as_str()) {
            let base = word.split('\'').next().unwrap_or(word);
            names.extend(tokenize(base));
        }
    }
    names
}

/// Non-stopword query tokens ranked by frequency, then longer first, then
/// alphabetically; at most `limit` are returned.
pub fn top_keywords(text: &str, limit: usize, exclude_names: bool) -> Vec<String> {
    let names = if exclude_names {
        name_tokens(text)
    } else {
        HashSet::new()
    };
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for token in tokenize(text) {
        if is_stopword(&token) || names.contains(&token) {
            continue;
        }
        *counts.entry(token).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|(a, ca), (b, cb)| cb.cmp(ca).then_with(|| b.len().cmp(&a.len())).then_with(|| a.cmp(b)));
    ranked.into_iter().take(limit).map(|(t, _)| t).collect()
}

/// All distinct content tokens (no stopwords, no names).
pub fn content_tokens(text: &str) -> HashSet<String> {
    let names = name_tokens(text);
    tokenize(text)
        .into_iter()
        .filter(|t| !is_stopword(t) && !names.contains(t))
        .collect()
}

/// Splits on `.`, `!`, `?` followed by whitespace or end of text.
pub fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace()) {
            push_sentence(&mut out, &current);
            current.clear();
        }
    }
    push_sentence(&mut out, &current);
    out
}

fn push_sentence(out: &mut Vec<String>, raw: &str) {
    let trimmed = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    if !trimmed.is_empty() {
        out.push(trimmed);
    }
}

/// Whitespace-delimited chunk count; the context-size proxy used in reports.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}
