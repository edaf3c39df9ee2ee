//! Leaf activation: semantic and lexical scoring over level-1 segments.
//!
//! Each leaf gets two channel scores mapped into `[0, 1]`:
//!
//! ```text
//! s_sem = (1 + cos(query, leaf)) / 2
//! s_lex = (bm25(leaf, K) - min) / (max - min)      over the leaf pool
//! fused = lambda * s_sem + (1 - lambda) * s_lex
//! ```
//!
//! BM25 is plain Okapi with `IDF = ln((N - n_t + 0.5) / (n_t + 0.5) + 1)`.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tmt::{MemoryNode, NodeId, Timestamp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("document index {index} out of range for corpus of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("lambda {0} outside [0, 1]")]
    InvalidLambda(f64),
    #[error("leaf budget must be at least 1")]
    InvalidBudget,
    #[error("invalid BM25 parameters k1={k1} b={b}")]
    InvalidBm25Params { k1: f64, b: f64 },
}

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.k1 >= 0.0 && (0.0..=1.0).contains(&self.b) {
            Ok(())
        } else {
            Err(IndexError::InvalidBm25Params { k1: self.k1, b: self.b })
        }
    }
}

/// Term statistics over a fixed list of tokenized documents.
#[derive(Debug, Clone)]
pub struct Bm25Corpus {
    params: Bm25Params,
    doc_count: usize,
    avg_len: f64,
    doc_len: Vec<usize>,
    doc_freq: HashMap<String, usize>,
    term_freq: Vec<HashMap<String, usize>>,
}

impl Bm25Corpus {
    pub fn new(docs: &[Vec<String>], params: Bm25Params) -> Result<Self, IndexError> {
        params.validate()?;
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut term_freq = Vec::with_capacity(docs.len());
        let mut doc_len = Vec::with_capacity(docs.len());
        for doc in docs {
            let mut tf: HashMap<String, usize> = HashMap::new();
            for token in doc {
                *tf.entry(token.clone()).or_default() += 1;
            }
            for term in tf.keys() {
                *doc_freq.entry(term.clone()).or_default() += 1;
            }
            doc_len.push(doc.len());
            term_freq.push(tf);
        }
        let total: usize = doc_len.iter().sum();
        let avg_len = if docs.is_empty() {
            0.0
        } else {
            total as f64 / docs.len() as f64
        };
        Ok(Self {
            params,
            doc_count: docs.len(),
            avg_len,
            doc_len,
            doc_freq,
            term_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_count
    }

    pub fn is_empty(&self) -> bool {
        self.doc_count == 0
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n_t = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        let n = self.doc_count as f64;
        ((n - n_t + 0.5) / (n_t + 0.5) + 1.0).ln()
    }

    /// Sum over distinct keywords. Keywords outside the vocabulary add nothing.
    pub fn score(&self, doc_index: usize, keywords: &[String]) -> Result<f64, IndexError> {
        if self.doc_count == 0 {
            return Err(IndexError::EmptyCorpus);
        }
        let tf_map = self.term_freq.get(doc_index).ok_or(IndexError::IndexOutOfRange {
            index: doc_index,
            len: self.doc_count,
        })?;
        let Bm25Params { k1, b } = self.params;
        let len_ratio = if self.avg_len > 0.0 {
            self.doc_len[doc_index] as f64 / self.avg_len
        } else {
            0.0
        };
        let mut seen = BTreeSet::new();
        let mut score = 0.0;
        for keyword in keywords {
            if !seen.insert(keyword.as_str()) {
                continue;
            }
            let Some(&tf) = tf_map.get(keyword) else {
                continue;
            };
            let tf = tf as f64;
            score += self.idf(keyword) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len_ratio));
        }
        Ok(score)
    }
}

/// Okapi BM25 of one document against a keyword set.
pub fn bm25_score(
    corpus: &[Vec<String>],
    doc_index: usize,
    keywords: &[String],
    params: Bm25Params,
) -> Result<f64, IndexError> {
    if corpus.is_empty() {
        return Err(IndexError::EmptyCorpus);
    }
    if doc_index >= corpus.len() {
        return Err(IndexError::IndexOutOfRange {
            index: doc_index,
            len: corpus.len(),
        });
    }
    Bm25Corpus::new(corpus, params)?.score(doc_index, keywords)
}

pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64, IndexError> {
    if u.len() != v.len() {
        return Err(IndexError::DimensionMismatch(u.len(), v.len()));
    }
    let mut dot = 0.0f64;
    let mut nu = 0.0f64;
    let mut nv = 0.0f64;
    for (a, b) in u.iter().zip(v) {
        let (a, b) = (*a as f64, *b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(IndexError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredLeaf {
    pub node_id: NodeId,
    pub s_sem: f64,
    pub s_lex: f64,
    pub fused: f64,
    #[serde(skip)]
    pub end: Timestamp,
}

/// Fused order: score descending, then later `interval.end`, then smaller id.
pub fn leaf_order(a: &ScoredLeaf, b: &ScoredLeaf) -> Ordering {
    b.fused
        .total_cmp(&a.fused)
        .then_with(|| b.end.cmp(&a.end))
        .then_with(|| a.node_id.cmp(&b.node_id))
}

/// Scores every leaf in the pool and keeps the best `budget`.
pub fn fused_top_k(
    query_embedding: &[f32],
    keywords: &[String],
    leaves: &[&MemoryNode],
    lambda: f64,
    budget: usize,
    params: Bm25Params,
) -> Result<Vec<ScoredLeaf>, IndexError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(IndexError::InvalidLambda(lambda));
    }
    if budget == 0 {
        return Err(IndexError::InvalidBudget);
    }
    if leaves.is_empty() {
        return Ok(Vec::new());
    }

    let docs: Vec<Vec<String>> = leaves.iter().map(|leaf| tokenize(&leaf.text)).collect();
    let corpus = Bm25Corpus::new(&docs, params)?;
    let raw_lex = (0..leaves.len())
        .map(|i| corpus.score(i, keywords))
        .collect::<Result<Vec<_>, _>>()?;
    let lex = min_max_normalize(&raw_lex);

    let mut scored = Vec::with_capacity(leaves.len());
    for (leaf, s_lex) in leaves.iter().zip(lex) {
        let s_sem = (1.0 + cosine_similarity(query_embedding, &leaf.embedding)?) / 2.0;
        scored.push(ScoredLeaf {
            node_id: leaf.id,
            s_sem,
            s_lex,
            fused: lambda * s_sem + (1.0 - lambda) * s_lex,
            end: leaf.interval.end,
        });
    }
    scored.sort_by(leaf_order);
    scored.truncate(budget);
    Ok(scored)
}

/// Maps onto `[0, 1]`. A constant pool maps to all 0 when it is all zero and
/// all 1 otherwise.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| {
            if max > min {
                (v - min) / (max - min)
            } else if max > 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}
