//! Replay harness: ingest transcripts, ask questions, report sizes and
//! latencies.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, EngineError};
use crate::recall::{Complexity, RecallOptions, RecallResult};
use crate::store::{StoreError, TranscriptFile};
use crate::tmt::{Level, NodeId, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub question_id: String,
    pub question: String,
    pub user_id: String,
    #[serde(
        default,
        with = "crate::store::ts_format::option",
        skip_serializing_if = "Option::is_none"
    )]
    pub timestamp: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_turn_ids: Option<Vec<String>>,
}

/// Reads a JSON-lines questions file. Questions without an id get `q<line>`.
pub fn load_questions(path: &Path) -> Result<Vec<Question>, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_questions(&text)
}

pub fn parse_questions(text: &str) -> Result<Vec<Question>, StoreError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut q: Question = serde_json::from_str(line).map_err(|e| StoreError::SchemaError {
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        if q.question_id.is_empty() {
            q.question_id = format!("q{}", i + 1);
        }
        out.push(q);
    }
    Ok(out)
}

pub fn questions_to_json_lines(questions: &[Question]) -> String {
    questions
        .iter()
        .map(|q| serde_json::to_string(q).expect("plain struct") + "\n")
        .collect()
}

#[derive(Debug, Error)]
#[error("question {query_id}: {source}")]
pub struct BenchError {
    pub query_id: String,
    #[source]
    pub source: EngineError,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub query_id: String,
    pub user_id: String,
    pub complexity: Complexity,
    pub planner_fallback: bool,
    pub leaves: usize,
    pub candidates: usize,
    pub retained: usize,
    pub context_token_count: usize,
    pub memory_ids: Vec<NodeId>,
    /// Whether the returned order obeys (level, distance to query time, id).
    pub ranking_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence_total: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence_hits: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregates {
    pub queries: usize,
    pub mean_context_tokens: f64,
    pub mean_context_tokens_by_complexity: BTreeMap<Complexity, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p50_latency_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p95_latency_ms: Option<f64>,
    /// Mean over questions with evidence of the share of evidence turns whose
    /// segment was returned.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence_recall_at_k: Option<f64>,
    pub k: usize,
    pub ranking_violations: usize,
}

/// Nearest-rank percentile of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl Aggregates {
    /// Recomputes every aggregate from the rows. `None` for no rows.
    pub fn from_rows(rows: &[BenchRow], k: usize) -> Option<Aggregates> {
        if rows.is_empty() {
            return None;
        }
        let mut by_complexity = BTreeMap::new();
        for c in Complexity::ALL {
            if let Some(m) = mean(
                rows.iter()
                    .filter(|r| r.complexity == c)
                    .map(|r| r.context_token_count as f64),
            ) {
                by_complexity.insert(c, m);
            }
        }
        let latencies: Vec<f64> = rows.iter().filter_map(|r| r.latency_ms).collect();
        Some(Aggregates {
            queries: rows.len(),
            mean_context_tokens: mean(rows.iter().map(|r| r.context_token_count as f64)).unwrap_or(0.0),
            mean_context_tokens_by_complexity: by_complexity,
            p50_latency_ms: percentile(&latencies, 50.0),
            p95_latency_ms: percentile(&latencies, 95.0),
            evidence_recall_at_k: mean(rows.iter().filter_map(|r| match (r.evidence_hits, r.evidence_total) {
                (Some(h), Some(t)) if t > 0 => Some(h as f64 / t as f64),
                _ => None,
            })),
            k,
            ranking_violations: rows.iter().filter(|r| !r.ranking_ok).count(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub gating: bool,
    pub rows: Vec<BenchRow>,
    pub aggregates: Option<Aggregates>,
}

impl BenchReport {
    fn without_timing(&self) -> BenchReport {
        let mut copy = self.clone();
        for row in &mut copy.rows {
            row.latency_ms = None;
        }
        if let Some(agg) = &mut copy.aggregates {
            agg.p50_latency_ms = None;
            agg.p95_latency_ms = None;
        }
        copy
    }

    /// One JSON object per question, then one `{"aggregates": ...}` line.
    /// Without timing the output depends only on the inputs.
    pub fn to_json_lines(&self, timing: bool) -> String {
        let report = if timing { self.clone() } else { self.without_timing() };
        let mut out = String::new();
        for row in &report.rows {
            out.push_str(&serde_json::to_string(row).expect("plain struct"));
            out.push('\n');
        }
        if let Some(agg) = &report.aggregates {
            out.push_str(&serde_json::json!({ "gating": report.gating, "aggregates": agg }).to_string());
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self, timing: bool) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:<10} {:<8} {:>6} {:>6} {:>6} {:>7} {:>9} {:>9}",
            "query", "user", "class", "leaves", "cands", "kept", "tokens", "evidence", "latency"
        );
        for r in &self.rows {
            let evidence = match (r.evidence_hits, r.evidence_total) {
                (Some(h), Some(t)) => format!("{h}/{t}"),
                _ => "-".into(),
            };
            let latency = match (timing, r.latency_ms) {
                (true, Some(ms)) => format!("{ms:.2}ms"),
                _ => "-".into(),
            };
            let _ = writeln!(
                out,
                "{:<12} {:<10} {:<8} {:>6} {:>6} {:>6} {:>7} {:>9} {:>9}",
                r.query_id,
                r.user_id,
                r.complexity.name(),
                r.leaves,
                r.candidates,
                r.retained,
                r.context_token_count,
                evidence,
                latency
            );
        }
        match &self.aggregates {
            None => out.push_str("no questions\n"),
            Some(a) => {
                let _ = writeln!(out, "gating: {}", if self.gating { "on" } else { "off" });
                let _ = writeln!(out, "mean context tokens: {:.2}", a.mean_context_tokens);
                for (c, m) in &a.mean_context_tokens_by_complexity {
                    let _ = writeln!(out, "  {c}: {m:.2}");
                }
                if timing {
                    if let (Some(p50), Some(p95)) = (a.p50_latency_ms, a.p95_latency_ms) {
                        let _ = writeln!(out, "latency p50/p95: {p50:.2}ms / {p95:.2}ms");
                    }
                }
                if let Some(r) = a.evidence_recall_at_k {
                    let _ = writeln!(out, "evidence recall@{}: {r:.4}", a.k);
                }
                let _ = writeln!(out, "ranking violations: {}", a.ranking_violations);
            }
        }
        out
    }
}

/// Checks the (level, |t_q - end|, id) order on adjacent pairs.
pub fn ranking_holds(result: &RecallResult) -> bool {
    let Some(t_q) = result.query_time else {
        return result.memories.is_empty();
    };
    let key = |m: &crate::recall::RecalledMemory| (m.level, (t_q - m.interval.end).abs(), m.node_id);
    result.memories.windows(2).all(|w| key(&w[0]) < key(&w[1]))
}

/// Ingests each transcript and flushes its user.
pub fn ingest_all(engine: &Engine, transcripts: &[TranscriptFile]) -> Result<usize, EngineError> {
    let mut created = 0;
    for t in transcripts {
        created += engine.ingest_transcript(t)?.len();
    }
    Ok(created)
}

/// Runs every question in order and times the full recall call.
pub fn run_bench(engine: &Engine, questions: &[Question], options: RecallOptions) -> Result<BenchReport, BenchError> {
    let mut rows = Vec::with_capacity(questions.len());
    for q in questions {
        let wrap = |source| BenchError {
            query_id: q.question_id.clone(),
            source,
        };
        let started = Instant::now();
        let result = engine
            .recall(&q.user_id, &q.question, q.timestamp, options)
            .map_err(wrap)?;
        let latency_ms = started.elapsed().as_secs_f64() * 1000.0;

        let (evidence_total, evidence_hits) = match &q.evidence_turn_ids {
            Some(evidence) => {
                let returned: HashSet<String> = engine
                    .with_tree(&q.user_id, |tree| {
                        result
                            .memories
                            .iter()
                            .filter(|m| m.level == Level::Segment)
                            .filter_map(|m| tree.get(m.node_id))
                            .flat_map(|n| n.source_turn_ids.iter().cloned())
                            .collect()
                    })
                    .map_err(wrap)?;
                let wanted: HashSet<&String> = evidence.iter().collect();
                let hits = wanted.iter().filter(|t| returned.contains(**t)).count();
                (Some(wanted.len()), Some(hits))
            }
            None => (None, None),
        };

        rows.push(BenchRow {
            query_id: q.question_id.clone(),
            user_id: q.user_id.clone(),
            complexity: result.plan.complexity,
            planner_fallback: result.plan.planner_fallback_used,
            leaves: result.counts.leaves,
            candidates: result.counts.candidates,
            retained: result.counts.retained,
            context_token_count: result.context_token_count,
            memory_ids: result.memories.iter().map(|m| m.node_id).collect(),
            ranking_ok: ranking_holds(&result),
            evidence_total,
            evidence_hits,
            latency_ms: Some(latency_ms),
        });
    }
    let aggregates = Aggregates::from_rows(&rows, engine.config().k1_budget);
    Ok(BenchReport {
        gating: options.gating.unwrap_or(engine.config().gating),
        rows,
        aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(percentile(&v, 50.0), Some(3.0));
        assert_eq!(percentile(&v, 95.0), Some(5.0));
        assert_eq!(percentile(&[], 50.0), None);
        let twenty: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&twenty, 95.0), Some(19.0));
    }

    #[test]
    fn question_lines() {
        let text = "{\"question\":\"Where?\",\"user_id\":\"u\"}\n\n{\"question_id\":\"x\",\"question\":\"When?\",\"user_id\":\"u\",\"timestamp\":\"2024-01-01T00:00:00Z\",\"evidence_turn_ids\":[\"s:1\"]}\n";
        let qs = parse_questions(text).unwrap();
        assert_eq!(qs[0].question_id, "q1");
        assert_eq!(qs[1].question_id, "x");
        assert_eq!(parse_questions(&questions_to_json_lines(&qs)).unwrap(), qs);
        assert!(matches!(
            parse_questions("{\"question\":1}"),
            Err(StoreError::SchemaError { line: 1, .. })
        ));
    }

    #[test]
    fn empty_question_set() {
        let engine = Engine::mock(crate::config::Config {
            embedding_dim: 16,
            ..Default::default()
        })
        .unwrap();
        let report = run_bench(&engine, &[], RecallOptions::default()).unwrap();
        assert!(report.rows.is_empty());
        assert!(report.aggregates.is_none());
        assert_eq!(report.to_json_lines(false), "");
    }
}
