//! Query-time recall: plan, activate leaves, propagate, gate, rank.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, ChatBackend, ChatRequest, Embedder, Purpose};
use crate::config::Config;
use crate::indexing::{fused_top_k, IndexError, ScoredLeaf};
use crate::prompts::PromptSet;
use crate::text::{count_tokens, top_keywords};
use crate::time::format_ts;
use crate::tmt::{Level, MemoryNode, MemoryTree, NodeId, TemporalInterval, Timestamp, TmtError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Complexity {
    Simple,
    Hybrid,
    Complex,
}

impl Complexity {
    pub const ALL: [Complexity; 3] = [Complexity::Simple, Complexity::Hybrid, Complexity::Complex];

    /// Wire code used by the planner prompt.
    pub fn code(self) -> u8 {
        match self {
            Complexity::Simple => 0,
            Complexity::Hybrid => 1,
            Complexity::Complex => 2,
        }
    }

    pub fn from_code(code: u64) -> Option<Complexity> {
        match code {
            0 => Some(Complexity::Simple),
            1 => Some(Complexity::Hybrid),
            2 => Some(Complexity::Complex),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Complexity::Simple => "simple",
            Complexity::Hybrid => "hybrid",
            Complexity::Complex => "complex",
        }
    }
}

impl fmt::Display for Complexity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Complexity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "simple" | "0" => Ok(Complexity::Simple),
            "hybrid" | "1" => Ok(Complexity::Hybrid),
            "complex" | "2" => Ok(Complexity::Complex),
            other => Err(format!("unknown complexity {other:?} (simple, hybrid or complex)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallPlan {
    pub complexity: Complexity,
    pub keywords: Vec<String>,
    pub planner_fallback_used: bool,
}

/// Per-level caps. Levels without a cap are outside the strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LevelBudget {
    caps: BTreeMap<Level, usize>,
}

impl LevelBudget {
    pub fn new(caps: Vec<(Level, usize)>) -> Self {
        Self {
            caps: caps.into_iter().collect(),
        }
    }

    pub fn cap(&self, level: Level) -> usize {
        self.caps.get(&level).copied().unwrap_or(0)
    }

    pub fn levels(&self) -> BTreeSet<Level> {
        self.caps.keys().copied().collect()
    }

    pub fn caps(&self) -> &BTreeMap<Level, usize> {
        &self.caps
    }
}

pub fn strategy_levels(config: &Config, complexity: Complexity) -> (BTreeSet<Level>, LevelBudget) {
    let budget = config.budget(complexity);
    (budget.levels(), budget)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Candidate {
    pub node_id: NodeId,
    pub level: Level,
    /// Set for activated leaves.
    pub fused: Option<f64>,
    /// The leaf whose ancestor chain reached this node. Unset for leaves and
    /// for an injected profile.
    pub via_leaf: Option<NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn ids(&self) -> BTreeSet<NodeId> {
        self.candidates.iter().map(|c| c.node_id).collect()
    }

    pub fn count_at(&self, level: Level) -> usize {
        self.candidates.iter().filter(|c| c.level == level).count()
    }

    /// Candidates grouped by level ascending, stable within a level. This is
    /// the order the gate numbers them in.
    pub fn display_order(&self) -> Vec<Candidate> {
        let mut out = self.candidates.clone();
        out.sort_by_key(|c| c.level);
        out
    }
}

/// Builds the candidate set from leaves in score order. Ancestors are taken
/// nearest-first and a level stops admitting once its cap is full, so caps
/// are filled by the best-scoring leaves. When the profile level is in the
/// strategy and still has room, the latest profile ending no later than
/// `t_q` is added.
pub fn propagate_ancestors(
    tree: &MemoryTree,
    leaves: &[ScoredLeaf],
    budget: &LevelBudget,
    t_q: Option<Timestamp>,
) -> CandidateSet {
    let mut set = CandidateSet::default();
    let mut seen = HashSet::new();
    let mut filled: BTreeMap<Level, usize> = BTreeMap::new();
    let ancestor_levels: BTreeSet<Level> = budget.levels().into_iter().filter(|l| *l != Level::Segment).collect();
    let room =
        |filled: &BTreeMap<Level, usize>, level: Level| filled.get(&level).copied().unwrap_or(0) < budget.cap(level);

    for leaf in leaves {
        if !room(&filled, Level::Segment) {
            break;
        }
        if seen.insert(leaf.node_id) {
            *filled.entry(Level::Segment).or_default() += 1;
            set.candidates.push(Candidate {
                node_id: leaf.node_id,
                level: Level::Segment,
                fused: Some(leaf.fused),
                via_leaf: None,
            });
        }
    }

    let admitted: Vec<NodeId> = set.candidates.iter().map(|c| c.node_id).collect();
    for leaf_id in admitted {
        if ancestor_levels.iter().all(|l| !room(&filled, *l)) {
            break;
        }
        let Ok(chain) = tree.ancestors(leaf_id, &ancestor_levels) else {
            continue;
        };
        for node in chain {
            if room(&filled, node.level) && seen.insert(node.id) {
                *filled.entry(node.level).or_default() += 1;
                set.candidates.push(Candidate {
                    node_id: node.id,
                    level: node.level,
                    fused: None,
                    via_leaf: Some(leaf_id),
                });
            }
        }
    }

    if room(&filled, Level::Profile) {
        let latest = tree
            .nodes_at_level(Level::Profile)
            .into_iter()
            .rev()
            .find(|n| t_q.is_none_or(|t| n.interval.end <= t) && !seen.contains(&n.id));
        if let Some(profile) = latest {
            set.candidates.push(Candidate {
                node_id: profile.id,
                level: Level::Profile,
                fused: None,
                via_leaf: None,
            });
        }
    }
    set
}

pub fn format_numbered_memory(ordinal: usize, node: &MemoryNode) -> String {
    let text = node.text.split_whitespace().collect::<Vec<_>>().join(" ");
    format!(
        "{ordinal}. [{} .. {}] {text}",
        format_ts(&node.interval.start),
        format_ts(&node.interval.end)
    )
}

/// The gate's numbered list, grouped under a header per level.
pub fn numbered_memories(tree: &MemoryTree, ordered: &[Candidate]) -> String {
    let mut lines = Vec::new();
    let mut current = None;
    for (i, c) in ordered.iter().enumerate() {
        if current != Some(c.level) {
            current = Some(c.level);
            lines.push(format!("## Level {} ({})", c.level.value(), c.level.name()));
        }
        if let Some(node) = tree.get(c.node_id) {
            lines.push(format_numbered_memory(i + 1, node));
        }
    }
    lines.join("\n")
}

fn json_object(reply: &str) -> Option<serde_json::Value> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&reply[start..=end]).ok()
}

/// Parses a planner reply. Keywords are lowercased, deduplicated and capped
/// at three.
pub fn parse_plan(reply: &str) -> Option<(Complexity, Vec<String>)> {
    let value = json_object(reply)?;
    let complexity = match &value["complexity"] {
        serde_json::Value::Number(n) => Complexity::from_code(n.as_u64()?)?,
        serde_json::Value::String(s) => s.parse().ok()?,
        _ => return None,
    };
    let mut keywords: Vec<String> = Vec::new();
    for k in value["keywords"].as_array()? {
        let k = k.as_str()?.trim().to_lowercase();
        if !k.is_empty() && !keywords.contains(&k) {
            keywords.push(k);
        }
    }
    keywords.truncate(3);
    Some((complexity, keywords))
}

/// Parses a gate reply into 0-based candidate positions. Out-of-range
/// ordinals are dropped.
pub fn parse_gate(reply: &str, count: usize) -> Option<Vec<usize>> {
    let value = json_object(reply)?;
    let mut out = Vec::new();
    for id in value["relevant_ids"].as_array()? {
        let n = match id {
            serde_json::Value::Number(n) => n.as_u64(),
            serde_json::Value::String(s) => s.trim().parse().ok(),
            _ => None,
        };
        if let Some(n) = n.filter(|n| (1..=count as u64).contains(n)) {
            let pos = n as usize - 1;
            if !out.contains(&pos) {
                out.push(pos);
            }
        }
    }
    out.sort_unstable();
    Some(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateOutcome {
    pub retained: Vec<Candidate>,
    pub called: bool,
    pub fallback_used: bool,
}

/// Sort key (level, distance from `t_q` to the interval end, id).
pub fn rank_final(mut nodes: Vec<&MemoryNode>, t_q: Timestamp) -> Vec<&MemoryNode> {
    nodes.sort_by_key(|n| (n.level, (t_q - n.interval.end).abs(), n.id));
    nodes
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecalledMemory {
    pub node_id: NodeId,
    pub level: Level,
    pub text: String,
    pub interval: TemporalInterval,
    pub fused: Option<f64>,
    pub via_leaf: Option<NodeId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub leaves: usize,
    pub candidates: usize,
    pub retained: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallResult {
    pub memories: Vec<RecalledMemory>,
    pub plan: RecallPlan,
    pub counts: StageCounts,
    pub context_token_count: usize,
    pub gate_fallback_used: bool,
    #[serde(with = "crate::store::ts_format::option")]
    pub query_time: Option<Timestamp>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecallOptions {
    /// Overrides the configured gating switch when set.
    pub gating: Option<bool>,
    pub complexity_override: Option<Complexity>,
}

#[derive(Debug, Error)]
pub enum RecallError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("embedding the query failed: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Tree(#[from] TmtError),
}

pub struct Recaller<'a> {
    pub chat: &'a dyn ChatBackend,
    pub embedder: &'a dyn Embedder,
    pub prompts: &'a PromptSet,
    pub config: &'a Config,
}

impl Recaller<'_> {
    fn control_request(&self, prompt: String, purpose: Purpose) -> ChatRequest {
        ChatRequest {
            prompt,
            temperature: self.config.control_temperature,
            max_output: self.config.control_max_tokens,
            purpose,
        }
    }

    /// One planner call. Failures fall back to a hybrid plan with the query's
    /// most frequent content words.
    pub fn plan_query(&self, question: &str) -> RecallPlan {
        let prompt = self.prompts.plan.render(&[("question", question)]);
        let parsed = self
            .chat
            .chat_complete(&self.control_request(prompt, Purpose::Plan))
            .map_err(|e| log::warn!("planner call failed: {e}"))
            .ok()
            .and_then(|reply| parse_plan(&reply));
        match parsed {
            Some((complexity, keywords)) if !keywords.is_empty() => RecallPlan {
                complexity,
                keywords,
                planner_fallback_used: false,
            },
            Some((complexity, _)) => RecallPlan {
                complexity,
                keywords: top_keywords(question, 3, false),
                planner_fallback_used: true,
            },
            None => RecallPlan {
                complexity: Complexity::Hybrid,
                keywords: top_keywords(question, 3, false),
                planner_fallback_used: true,
            },
        }
    }

    /// One gate call over the candidates. An empty set skips the call; a
    /// failed or unparseable reply keeps everything.
    pub fn gate_candidates(
        &self,
        tree: &MemoryTree,
        question: &str,
        complexity: Complexity,
        candidates: &CandidateSet,
    ) -> GateOutcome {
        if candidates.is_empty() {
            return GateOutcome {
                retained: Vec::new(),
                called: false,
                fallback_used: false,
            };
        }
        let ordered = candidates.display_order();
        let prompt = self.prompts.gate(complexity).render(&[
            ("question", question),
            ("total_count", &ordered.len().to_string()),
            ("numbered_memories", &numbered_memories(tree, &ordered)),
        ]);
        let parsed = self
            .chat
            .chat_complete(&self.control_request(prompt, Purpose::Gate))
            .map_err(|e| log::warn!("gate call failed: {e}"))
            .ok()
            .and_then(|reply| parse_gate(&reply, ordered.len()));
        match parsed {
            Some(positions) => GateOutcome {
                retained: positions.into_iter().map(|p| ordered[p]).collect(),
                called: true,
                fallback_used: false,
            },
            None => GateOutcome {
                retained: ordered,
                called: true,
                fallback_used: true,
            },
        }
    }

    /// Full pipeline. `t_q` restricts leaves to those ending by then;
    /// ranking measures distance from `t_q`, or from `fallback_time` when no
    /// query time is given.
    pub fn recall(
        &self,
        tree: &MemoryTree,
        question: &str,
        t_q: Option<Timestamp>,
        fallback_time: Option<Timestamp>,
        options: RecallOptions,
    ) -> Result<RecallResult, RecallError> {
        if question.trim().is_empty() {
            return Err(RecallError::EmptyQuery);
        }
        let mut plan = self.plan_query(question);
        if let Some(c) = options.complexity_override {
            plan.complexity = c;
        }
        let (_, budget) = strategy_levels(self.config, plan.complexity);

        let pool: Vec<&MemoryNode> = tree
            .nodes_at_level(Level::Segment)
            .into_iter()
            .filter(|n| t_q.is_none_or(|t| n.interval.end <= t))
            .collect();
        let leaves = if pool.is_empty() {
            Vec::new()
        } else {
            let query = self.embedder.embed_text(question)?;
            fused_top_k(
                query.values(),
                &plan.keywords,
                &pool,
                self.config.lambda,
                self.config.k1_budget,
                self.config.bm25(),
            )?
        };

        let candidates = propagate_ancestors(tree, &leaves, &budget, t_q);
        let gate = if options.gating.unwrap_or(self.config.gating) {
            self.gate_candidates(tree, question, plan.complexity, &candidates)
        } else {
            GateOutcome {
                retained: candidates.candidates.clone(),
                called: false,
                fallback_used: false,
            }
        };

        let rank_time = t_q
            .or(fallback_time)
            .or_else(|| tree.nodes().map(|n| n.interval.end).max());
        let retained_nodes: Vec<&MemoryNode> = gate.retained.iter().filter_map(|c| tree.get(c.node_id)).collect();
        let ranked = match rank_time {
            Some(t) => rank_final(retained_nodes, t),
            None => retained_nodes,
        };
        let by_id: BTreeMap<NodeId, &Candidate> = gate.retained.iter().map(|c| (c.node_id, c)).collect();
        let memories: Vec<RecalledMemory> = ranked
            .into_iter()
            .map(|n| {
                let c = by_id[&n.id];
                RecalledMemory {
                    node_id: n.id,
                    level: n.level,
                    text: n.text.clone(),
                    interval: n.interval,
                    fused: c.fused,
                    via_leaf: c.via_leaf,
                }
            })
            .collect();
        let context_token_count = memories.iter().map(|m| count_tokens(&m.text)).sum();
        Ok(RecallResult {
            counts: StageCounts {
                leaves: leaves.len(),
                candidates: candidates.len(),
                retained: memories.len(),
            },
            memories,
            plan,
            context_token_count,
            gate_fallback_used: gate.fallback_used,
            query_time: rank_time,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{MockChat, MockEmbedder};
    use crate::time::parse_ts;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn ts(day: u32, hour: u32) -> Timestamp {
        parse_ts(&format!("2024-03-{day:02}T{hour:02}:00:00Z")).unwrap()
    }

    fn node(id: u64, level: Level, start: Timestamp, end: Timestamp, children: &[u64]) -> MemoryNode {
        let mut embedding = vec![0.0; 4];
        embedding[0] = 1.0;
        MemoryNode {
            id: NodeId(id),
            user_id: "u".into(),
            level,
            interval: TemporalInterval { start, end },
            text: format!("memory {id}"),
            embedding,
            parent_id: None,
            child_ids: children.iter().map(|c| NodeId(*c)).collect(),
            source_turn_ids: if level == Level::Segment {
                vec![format!("t{id}")]
            } else {
                vec![]
            },
            created_at: end,
        }
    }

    fn leaf(id: u64, fused: f64) -> ScoredLeaf {
        ScoredLeaf {
            node_id: NodeId(id),
            s_sem: fused,
            s_lex: fused,
            fused,
            end: ts(1, 0),
        }
    }

    #[test]
    fn complexity_codes() {
        for c in Complexity::ALL {
            assert_eq!(Complexity::from_code(c.code() as u64), Some(c));
            assert_eq!(c.name().parse::<Complexity>(), Ok(c));
        }
        assert_eq!(Complexity::from_code(3), None);
    }

    #[test]
    fn strategy_table() {
        let config = Config::default();
        let caps = |c| {
            let (levels, budget) = strategy_levels(&config, c);
            levels
                .into_iter()
                .map(|l| (l.value(), budget.cap(l)))
                .collect::<Vec<_>>()
        };
        assert_eq!(caps(Complexity::Simple), vec![(1, 20), (2, 4), (5, 1)]);
        assert_eq!(caps(Complexity::Hybrid), vec![(1, 20), (2, 4), (3, 2), (5, 1)]);
        assert_eq!(caps(Complexity::Complex), vec![(1, 20), (2, 8), (3, 4), (4, 2), (5, 1)]);
    }

    #[test]
    fn plan_parsing() {
        assert_eq!(
            parse_plan(r#"{"complexity":0,"keywords":["Paris","go","paris"]}"#),
            Some((Complexity::Simple, vec!["paris".into(), "go".into()]))
        );
        assert_eq!(
            parse_plan("Sure:\n```json\n{\"complexity\": 2, \"keywords\": [\"a\",\"b\",\"c\",\"d\"]}\n```"),
            Some((Complexity::Complex, vec!["a".into(), "b".into(), "c".into()]))
        );
        assert_eq!(parse_plan("no json"), None);
        assert_eq!(parse_plan(r#"{"complexity":7,"keywords":[]}"#), None);
    }

    #[test]
    fn gate_parsing_drops_out_of_range() {
        assert_eq!(parse_gate(r#"{"relevant_ids":[3,1,9,0,3]}"#, 5), Some(vec![0, 2]));
        assert_eq!(parse_gate(r#"{"relevant_ids":[]}"#, 5), Some(vec![]));
        assert_eq!(parse_gate("garbage", 5), None);
    }

    #[test]
    fn rank_final_examples() {
        let a = node(1, Level::Session, ts(10, 0), ts(10, 0), &[]);
        let b = node(2, Level::Segment, ts(3, 0), ts(3, 0), &[]);
        let c = node(3, Level::Segment, ts(9, 0), ts(9, 0), &[]);
        let ranked: Vec<u64> = rank_final(vec![&a, &b, &c], ts(10, 0)).iter().map(|n| n.id.0).collect();
        assert_eq!(ranked, vec![3, 2, 1]);

        let before = node(7, Level::Segment, ts(9, 0), ts(9, 0), &[]);
        let after = node(4, Level::Segment, ts(11, 0), ts(11, 0), &[]);
        let ranked: Vec<u64> = rank_final(vec![&before, &after], ts(10, 0))
            .iter()
            .map(|n| n.id.0)
            .collect();
        assert_eq!(ranked, vec![4, 7]);
    }

    fn small_tree() -> MemoryTree {
        // Two leaves under one session, a third leaf alone, plus a profile.
        let mut tree = MemoryTree::new("u", 4);
        tree.insert_node(node(1, Level::Segment, ts(1, 10), ts(1, 10), &[]))
            .unwrap();
        tree.insert_node(node(2, Level::Segment, ts(1, 11), ts(1, 11), &[]))
            .unwrap();
        tree.insert_node(node(3, Level::Segment, ts(2, 9), ts(2, 9), &[]))
            .unwrap();
        tree.insert_node(node(4, Level::Session, ts(1, 10), ts(1, 11), &[1, 2]))
            .unwrap();
        tree.insert_node(node(5, Level::Day, ts(1, 10), ts(1, 11), &[4]))
            .unwrap();
        tree.insert_node(node(6, Level::Week, ts(1, 10), ts(1, 11), &[5]))
            .unwrap();
        tree.insert_node(node(7, Level::Profile, ts(1, 10), ts(1, 11), &[6]))
            .unwrap();
        tree
    }

    #[test]
    fn shared_parent_appears_once() {
        let tree = small_tree();
        let budget = Config::default().budget(Complexity::Simple);
        let set = propagate_ancestors(&tree, &[leaf(1, 0.9), leaf(2, 0.8)], &budget, None);
        let ids: Vec<u64> = set.candidates.iter().map(|c| c.node_id.0).collect();
        assert_eq!(ids, vec![1, 2, 4, 7]);
        assert_eq!(set.count_at(Level::Day), 0);
    }

    #[test]
    fn empty_leaves_still_inject_profile() {
        let tree = small_tree();
        let budget = Config::default().budget(Complexity::Simple);
        let set = propagate_ancestors(&tree, &[], &budget, None);
        assert_eq!(set.ids(), BTreeSet::from([NodeId(7)]));
        // Profile ending after the query time is not visible.
        let set = propagate_ancestors(&tree, &[], &budget, Some(ts(1, 10)));
        assert!(set.is_empty());
        assert!(propagate_ancestors(&MemoryTree::new("u", 4), &[], &budget, None).is_empty());
    }

    struct Scripted {
        reply: String,
        calls: AtomicUsize,
    }

    impl ChatBackend for Scripted {
        fn chat_complete(&self, _req: &ChatRequest) -> Result<String, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.reply.clone())
        }
    }

    #[test]
    fn planner_fallback_and_gate_fail_open() {
        let config = Config::default();
        let prompts = PromptSet::default();
        let embedder = MockEmbedder::new(4);
        let chat = Scripted {
            reply: "not json".into(),
            calls: AtomicUsize::new(0),
        };
        let r = Recaller {
            chat: &chat,
            embedder: &embedder,
            prompts: &prompts,
            config: &config,
        };
        let plan = r.plan_query("Where did Maria travel for the conference conference?");
        assert!(plan.planner_fallback_used);
        assert_eq!(plan.complexity, Complexity::Hybrid);
        assert_eq!(plan.keywords[0], "conference");

        let tree = small_tree();
        let set = propagate_ancestors(&tree, &[leaf(1, 0.9)], &config.budget(Complexity::Simple), None);
        let gate = r.gate_candidates(&tree, "q", Complexity::Simple, &set);
        assert!(gate.fallback_used);
        assert_eq!(gate.retained.len(), set.len());

        let before = chat.calls.load(Ordering::SeqCst);
        let empty = r.gate_candidates(&tree, "q", Complexity::Simple, &CandidateSet::default());
        assert!(!empty.called);
        assert_eq!(chat.calls.load(Ordering::SeqCst), before);
    }

    #[test]
    fn empty_tree_recall() {
        let config = Config::default();
        let prompts = PromptSet::default();
        let chat = MockChat::default();
        let embedder = MockEmbedder::new(4);
        let r = Recaller {
            chat: &chat,
            embedder: &embedder,
            prompts: &prompts,
            config: &config,
        };
        let out = r
            .recall(
                &MemoryTree::new("u", 4),
                "Where does X work?",
                None,
                None,
                RecallOptions::default(),
            )
            .unwrap();
        assert!(out.memories.is_empty());
        assert_eq!(out.counts, StageCounts::default());
        assert_eq!(out.context_token_count, 0);
        assert_eq!(out.plan.complexity, Complexity::Simple);
        assert!(matches!(
            r.recall(&MemoryTree::new("u", 4), "  ", None, None, RecallOptions::default()),
            Err(RecallError::EmptyQuery)
        ));
    }
}
