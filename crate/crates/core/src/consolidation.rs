//! Builds the memory tree from dialog.
//!
//! Level-1 segments are written as each turn arrives. Sessions, days, ISO
//! weeks and calendar months are consolidated when their window closes,
//! which is noticed lazily: the next ingested turn (or a flush) closes every
//! group it has moved past, lowest level first. A group above level 2 only
//! closes once the group below it that belongs to it has closed, so a session
//! running past midnight keeps its day open until the session ends.
//!
//! Work is queued before it runs. A backend failure leaves the failed item and
//! everything after it in the queue; the next ingest, flush or
//! [`Consolidator::retry_pending`] picks it up again.

use std::collections::VecDeque;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, ChatBackend, ChatRequest, Embedder, Purpose};
use crate::config::Config;
use crate::prompts::PromptSet;
use crate::time;
use crate::tmt::{Level, MemoryNode, MemoryTree, NodeId, TemporalInterval, Timestamp, TmtError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogTurn {
    pub turn_id: String,
    pub session_id: String,
    #[serde(with = "crate::store::ts_format")]
    pub timestamp: Timestamp,
    pub user_text: String,
    pub assistant_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum GroupKey {
    Session(String),
    Day(NaiveDate),
    /// Monday of the ISO week.
    Week(NaiveDate),
    /// First day of the month.
    Month(NaiveDate),
}

impl GroupKey {
    pub fn level(&self) -> Level {
        match self {
            GroupKey::Session(_) => Level::Session,
            GroupKey::Day(_) => Level::Day,
            GroupKey::Week(_) => Level::Week,
            GroupKey::Month(_) => Level::Profile,
        }
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKey::Session(id) => write!(f, "session {id}"),
            GroupKey::Day(d) => write!(f, "day {d}"),
            GroupKey::Week(monday) => write!(f, "week {}", time::week_label(*monday)),
            GroupKey::Month(first) => write!(f, "month {}", time::month_label(*first)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalGroup {
    pub level: Level,
    pub key: GroupKey,
    /// Nominal window: the session's own extent, or the calendar period.
    pub window: TemporalInterval,
    pub open: bool,
}

impl TemporalGroup {
    fn closed(key: GroupKey, window: TemporalInterval) -> Self {
        Self {
            level: key.level(),
            key,
            window,
            open: false,
        }
    }

    pub fn day(date: NaiveDate) -> Self {
        Self::closed(GroupKey::Day(date), time::day_window(date))
    }

    pub fn week(monday: NaiveDate) -> Self {
        Self::closed(GroupKey::Week(monday), time::week_window(monday))
    }

    pub fn month(first: NaiveDate) -> Self {
        Self::closed(GroupKey::Month(first), time::month_window(first))
    }

    pub fn session(id: impl Into<String>, window: TemporalInterval) -> Self {
        Self::closed(GroupKey::Session(id.into()), window)
    }
}

/// Inputs of one consolidation call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsolidationRequest {
    pub level: Level,
    pub child_texts: Vec<String>,
    /// Most recent first.
    pub history_texts: Vec<String>,
    /// Which level's instruction prompt to use.
    pub instruction: Level,
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn numbered(texts: &[String]) -> String {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}. {}", i + 1, one_line(t)))
        .collect::<Vec<_>>()
        .join("\n")
}

impl ConsolidationRequest {
    pub fn render(&self, prompts: &PromptSet) -> String {
        let template = prompts.consolidation(self.instruction);
        if self.level == Level::Segment {
            let history = if self.history_texts.is_empty() {
                "None".to_string()
            } else {
                self.history_texts
                    .iter()
                    .map(|t| one_line(t))
                    .collect::<Vec<_>>()
                    .join(" | ")
            };
            let dialogue = self.child_texts.join("\n");
            template.render(&[("previous_summary", &history), ("new_dialogue", &dialogue)])
        } else {
            let history = if self.history_texts.is_empty() {
                "(none)".to_string()
            } else {
                numbered(&self.history_texts)
            };
            template.render(&[("history", &history), ("children", &numbered(&self.child_texts))])
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsolidationError {
    #[error("turn {turn_id} at {got} precedes last ingested timestamp {last}")]
    NonMonotonicTimestamp {
        turn_id: String,
        last: Timestamp,
        got: Timestamp,
    },
    #[error("flush time {now} precedes last ingested timestamp {last}")]
    FlushInPast { last: Timestamp, now: Timestamp },
    #[error("backend failure while consolidating {what}: {source}")]
    BackendFailure {
        what: String,
        #[source]
        source: BackendError,
    },
    #[error("tree rejected consolidated node: {0}")]
    Tree(#[from] TmtError),
    #[error("level {0} has no group consolidation")]
    InvalidLevel(Level),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenSession {
    pub session_id: String,
    #[serde(with = "crate::store::ts_format")]
    pub start: Timestamp,
    #[serde(with = "crate::store::ts_format")]
    pub end: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "work", rename_all = "snake_case")]
pub enum Work {
    Segment {
        turn: DialogTurn,
    },
    Close {
        group: TemporalGroup,
        #[serde(with = "crate::store::ts_format")]
        closed_at: Timestamp,
    },
}

/// Per-user scheduling state: open groups, queued work, id allocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    #[serde(with = "crate::store::ts_format::option")]
    pub last_timestamp: Option<Timestamp>,
    pub session: Option<OpenSession>,
    pub day: Option<NaiveDate>,
    pub week: Option<NaiveDate>,
    pub month: Option<NaiveDate>,
    pub pending: VecDeque<Work>,
    pub next_id: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            last_timestamp: None,
            session: None,
            day: None,
            week: None,
            month: None,
            pending: VecDeque::new(),
            next_id: 1,
        }
    }
}

impl Schedule {
    pub fn open_groups(&self) -> Vec<TemporalGroup> {
        let mut out = Vec::new();
        if let Some(s) = &self.session {
            let mut g = TemporalGroup::session(
                &s.session_id,
                TemporalInterval {
                    start: s.start,
                    end: s.end,
                },
            );
            g.open = true;
            out.push(g);
        }
        for mut g in [
            self.day.map(TemporalGroup::day),
            self.week.map(TemporalGroup::week),
            self.month.map(TemporalGroup::month),
        ]
        .into_iter()
        .flatten()
        {
            g.open = true;
            out.push(g);
        }
        out
    }

    fn close(&mut self, group: TemporalGroup, closed_at: Timestamp) {
        self.pending.push_back(Work::Close { group, closed_at });
    }

    /// Queues closures implied by `turn` and its segment, and opens groups.
    pub(crate) fn schedule_turn(&mut self, turn: &DialogTurn) {
        let ts = turn.timestamp;
        if let Some(session) = &self.session {
            if session.session_id != turn.session_id {
                let group = TemporalGroup::session(
                    &session.session_id,
                    TemporalInterval {
                        start: session.start,
                        end: session.end,
                    },
                );
                self.session = None;
                self.close(group, ts);
            }
        }
        if self.session.is_none() {
            if let Some(day) = self.day.filter(|d| ts > time::day_window(*d).end) {
                self.day = None;
                self.close(TemporalGroup::day(day), ts);
            }
            if self.day.is_none() {
                if let Some(week) = self.week.filter(|w| ts > time::week_window(*w).end) {
                    self.week = None;
                    self.close(TemporalGroup::week(week), ts);
                }
            }
            if self.week.is_none() {
                if let Some(month) = self.month.filter(|m| ts > time::month_window(*m).end) {
                    self.month = None;
                    self.close(TemporalGroup::month(month), ts);
                }
            }
        }
        match &mut self.session {
            Some(session) => session.end = ts,
            None => {
                self.session = Some(OpenSession {
                    session_id: turn.session_id.clone(),
                    start: ts,
                    end: ts,
                });
                self.day.get_or_insert(time::day_key(&ts));
                self.week.get_or_insert(time::week_key(&ts));
                self.month.get_or_insert(time::month_key(&ts));
            }
        }
        self.last_timestamp = Some(ts);
        self.pending.push_back(Work::Segment { turn: turn.clone() });
    }

    pub(crate) fn schedule_flush(&mut self, now: Timestamp) {
        if let Some(session) = self.session.take() {
            let window = TemporalInterval {
                start: session.start,
                end: session.end,
            };
            self.close(TemporalGroup::session(session.session_id, window), now);
        }
        if let Some(day) = self.day.take() {
            self.close(TemporalGroup::day(day), now);
        }
        if let Some(week) = self.week.take() {
            self.close(TemporalGroup::week(week), now);
        }
        if let Some(month) = self.month.take() {
            self.close(TemporalGroup::month(month), now);
        }
    }
}

impl Schedule {
    /// Drops queued work that the tree already reflects and moves id
    /// allocation past every stored node. Used after replaying a log whose
    /// last state snapshot predates some of its nodes.
    pub fn settle(&mut self, tree: &MemoryTree) {
        let done_turns: std::collections::HashSet<&str> = tree
            .nodes_at_level(Level::Segment)
            .into_iter()
            .flat_map(|n| n.source_turn_ids.iter().map(String::as_str))
            .collect();
        self.pending.retain(|work| match work {
            Work::Segment { turn } => !done_turns.contains(turn.turn_id.as_str()),
            Work::Close { group, .. } => !collect_children(tree, group).is_empty(),
        });
        if let Some(max) = tree.max_id() {
            self.next_id = self.next_id.max(max.0 + 1);
        }
    }
}

/// Children of a group: unlinked nodes one level down whose interval lies
/// inside the group's window, ordered by start then id. Calendar windows are
/// widened at the end to cover children that start inside them but run past
/// the period boundary.
pub fn collect_children<'t>(tree: &'t MemoryTree, group: &TemporalGroup) -> Vec<&'t MemoryNode> {
    let Some(child_level) = group.level.child() else {
        return Vec::new();
    };
    let candidates: Vec<&MemoryNode> = tree
        .nodes_at_level(child_level)
        .into_iter()
        .filter(|n| n.parent_id.is_none())
        .collect();
    let window = effective_window(group, &candidates);
    let mut children: Vec<&MemoryNode> = candidates
        .into_iter()
        .filter(|n| window.contains(&n.interval))
        .collect();
    children.sort_by_key(|n| (n.interval.start, n.id));
    children
}

fn effective_window(group: &TemporalGroup, candidates: &[&MemoryNode]) -> TemporalInterval {
    let nominal = group.window;
    let end = candidates
        .iter()
        .filter(|n| nominal.start <= n.interval.start && n.interval.start <= nominal.end)
        .map(|n| n.interval.end)
        .fold(nominal.end, Timestamp::max);
    TemporalInterval {
        start: nominal.start,
        end,
    }
}

/// The `window` most recent nodes of `level`, most recent first.
pub fn history_window(tree: &MemoryTree, level: Level, window: usize) -> Vec<&MemoryNode> {
    tree.history_window(level, window)
}

/// Runs consolidation against one user's tree and schedule.
pub struct Consolidator<'a> {
    pub chat: &'a dyn ChatBackend,
    pub embedder: &'a dyn Embedder,
    pub prompts: &'a PromptSet,
    pub config: &'a Config,
}

impl Consolidator<'_> {
    /// Ingests one turn. Closures the turn triggers come first in the
    /// returned list, the turn's own segment last. Nodes created before a
    /// failure are still pushed to `created`.
    pub fn ingest_turn(
        &self,
        tree: &mut MemoryTree,
        schedule: &mut Schedule,
        turn: &DialogTurn,
        created: &mut Vec<MemoryNode>,
    ) -> Result<(), ConsolidationError> {
        if let Some(last) = schedule.last_timestamp {
            if turn.timestamp < last {
                return Err(ConsolidationError::NonMonotonicTimestamp {
                    turn_id: turn.turn_id.clone(),
                    last,
                    got: turn.timestamp,
                });
            }
        }
        schedule.schedule_turn(turn);
        self.drain(tree, schedule, created)
    }

    /// Closes every open group and consolidates bottom-up.
    pub fn flush(
        &self,
        tree: &mut MemoryTree,
        schedule: &mut Schedule,
        now: Timestamp,
        created: &mut Vec<MemoryNode>,
    ) -> Result<(), ConsolidationError> {
        if let Some(last) = schedule.last_timestamp {
            if now < last {
                return Err(ConsolidationError::FlushInPast { last, now });
            }
        }
        schedule.schedule_flush(now);
        self.drain(tree, schedule, created)
    }

    pub fn retry_pending(
        &self,
        tree: &mut MemoryTree,
        schedule: &mut Schedule,
        created: &mut Vec<MemoryNode>,
    ) -> Result<(), ConsolidationError> {
        self.drain(tree, schedule, created)
    }

    fn drain(
        &self,
        tree: &mut MemoryTree,
        schedule: &mut Schedule,
        created: &mut Vec<MemoryNode>,
    ) -> Result<(), ConsolidationError> {
        while let Some(work) = schedule.pending.front() {
            let node = match work {
                Work::Segment { turn } => Some(self.consolidate_turn(tree, schedule.next_id, turn)?),
                Work::Close { group, closed_at } => {
                    self.consolidate_group(tree, schedule.next_id, group, *closed_at)?
                }
            };
            schedule.pending.pop_front();
            if let Some(node) = node {
                schedule.next_id = node.id.0 + 1;
                created.push(node);
            }
        }
        Ok(())
    }

    fn complete(
        &self,
        purpose: Purpose,
        prompt: String,
        what: impl Fn() -> String,
    ) -> Result<String, ConsolidationError> {
        let req = ChatRequest {
            prompt,
            temperature: self.config.consolidation_temperature,
            max_output: self.config.consolidation_max_tokens,
            purpose,
        };
        let text = self
            .chat
            .chat_complete(&req)
            .map_err(|source| ConsolidationError::BackendFailure { what: what(), source })?;
        Ok(text.trim().to_string())
    }

    fn embed(&self, text: &str, what: impl Fn() -> String) -> Result<Vec<f32>, ConsolidationError> {
        self.embedder
            .embed_text(text)
            .map(|v| v.into_inner())
            .map_err(|source| ConsolidationError::BackendFailure { what: what(), source })
    }

    /// One level-1 segment from a single turn.
    pub fn consolidate_turn(
        &self,
        tree: &mut MemoryTree,
        id: u64,
        turn: &DialogTurn,
    ) -> Result<MemoryNode, ConsolidationError> {
        let request = ConsolidationRequest {
            level: Level::Segment,
            child_texts: vec![
                format!("user: {}", one_line(&turn.user_text)),
                format!("assistant: {}", one_line(&turn.assistant_text)),
            ],
            history_texts: history_window(tree, Level::Segment, self.config.history_window)
                .iter()
                .map(|n| n.text.clone())
                .collect(),
            instruction: Level::Segment,
        };
        let what = || format!("turn {}", turn.turn_id);
        let text = self.complete(Purpose::ConsolidateL1, request.render(self.prompts), what)?;
        let embedding = self.embed(&text, what)?;
        let node = MemoryNode {
            id: NodeId(id),
            user_id: tree.user_id().to_string(),
            level: Level::Segment,
            interval: TemporalInterval::instant(turn.timestamp),
            text,
            embedding,
            parent_id: None,
            child_ids: Vec::new(),
            source_turn_ids: vec![turn.turn_id.clone()],
            created_at: turn.timestamp,
        };
        tree.insert_node(node.clone())?;
        Ok(node)
    }

    /// Consolidates a closed group. Returns `None` for a group with no
    /// children, without calling the backend.
    pub fn consolidate_group(
        &self,
        tree: &mut MemoryTree,
        id: u64,
        group: &TemporalGroup,
        closed_at: Timestamp,
    ) -> Result<Option<MemoryNode>, ConsolidationError> {
        if group.level == Level::Segment {
            return Err(ConsolidationError::InvalidLevel(group.level));
        }
        let children = collect_children(tree, group);
        let Some(first) = children.first() else {
            return Ok(None);
        };
        let interval = children.iter().fold(first.interval, |acc, c| acc.hull(&c.interval));
        let request = ConsolidationRequest {
            level: group.level,
            child_texts: children.iter().map(|c| c.text.clone()).collect(),
            history_texts: history_window(tree, group.level, self.config.history_window)
                .iter()
                .map(|n| n.text.clone())
                .collect(),
            instruction: group.level,
        };
        let child_ids: Vec<NodeId> = children.iter().map(|c| c.id).collect();
        let what = || group.key.to_string();
        let text = self.complete(Purpose::consolidate(group.level), request.render(self.prompts), what)?;
        let embedding = self.embed(&text, what)?;
        let node = MemoryNode {
            id: NodeId(id),
            user_id: tree.user_id().to_string(),
            level: group.level,
            interval,
            text,
            embedding,
            parent_id: None,
            child_ids,
            source_turn_ids: Vec::new(),
            created_at: closed_at.max(interval.end),
        };
        tree.insert_node(node.clone())?;
        Ok(tree.get(node.id).cloned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{MockChat, MockEmbedder};
    use crate::time::parse_ts;
    use std::sync::atomic::{AtomicBool, Ordering};

    struct Harness {
        chat: MockChat,
        embedder: MockEmbedder,
        prompts: PromptSet,
        config: Config,
    }

    impl Harness {
        fn new() -> Self {
            let config = Config {
                embedding_dim: 64,
                ..Config::default()
            };
            Self {
                chat: MockChat::default(),
                embedder: MockEmbedder::new(64),
                prompts: PromptSet::default(),
                config,
            }
        }

        fn consolidator(&self) -> Consolidator<'_> {
            Consolidator {
                chat: &self.chat,
                embedder: &self.embedder,
                prompts: &self.prompts,
                config: &self.config,
            }
        }
    }

    fn turn(id: &str, session: &str, ts: &str) -> DialogTurn {
        DialogTurn {
            turn_id: id.into(),
            session_id: session.into(),
            timestamp: parse_ts(ts).unwrap(),
            user_text: format!("I talked about topic {id} today."),
            assistant_text: "Sounds good.".into(),
        }
    }

    fn levels(nodes: &[MemoryNode]) -> Vec<u8> {
        nodes.iter().map(|n| n.level.value()).collect()
    }

    #[test]
    fn first_turn_creates_one_segment() {
        let h = Harness::new();
        let mut tree = MemoryTree::new("u", 64);
        let mut schedule = Schedule::default();
        let mut created = Vec::new();
        h.consolidator()
            .ingest_turn(
                &mut tree,
                &mut schedule,
                &turn("t1", "s1", "2024-03-05T10:00:00Z"),
                &mut created,
            )
            .unwrap();
        assert_eq!(levels(&created), vec![1]);
        assert_eq!(created[0].source_turn_ids, vec!["t1"]);
    }

    #[test]
    fn session_change_closes_session() {
        let h = Harness::new();
        let c = h.consolidator();
        let mut tree = MemoryTree::new("u", 64);
        let mut schedule = Schedule::default();
        let mut created = Vec::new();
        for (i, ts) in ["10:00", "10:05", "10:09"].iter().enumerate() {
            let t = turn(&format!("t{i}"), "s1", &format!("2024-03-05T{ts}:00Z"));
            c.ingest_turn(&mut tree, &mut schedule, &t, &mut created).unwrap();
        }
        created.clear();
        c.ingest_turn(
            &mut tree,
            &mut schedule,
            &turn("t9", "s2", "2024-03-05T12:00:00Z"),
            &mut created,
        )
        .unwrap();
        assert_eq!(levels(&created), vec![2, 1]);
        assert_eq!(created[0].child_ids.len(), 3);
        assert_eq!(
            created[0].interval,
            TemporalInterval {
                start: parse_ts("2024-03-05T10:00:00Z").unwrap(),
                end: parse_ts("2024-03-05T10:09:00Z").unwrap(),
            }
        );
    }

    #[test]
    fn rejects_time_travel() {
        let h = Harness::new();
        let c = h.consolidator();
        let mut tree = MemoryTree::new("u", 64);
        let mut schedule = Schedule::default();
        let mut created = Vec::new();
        c.ingest_turn(
            &mut tree,
            &mut schedule,
            &turn("a", "s1", "2024-03-05T10:00:00Z"),
            &mut created,
        )
        .unwrap();
        let err = c
            .ingest_turn(
                &mut tree,
                &mut schedule,
                &turn("b", "s1", "2024-03-05T09:00:00Z"),
                &mut created,
            )
            .unwrap_err();
        assert!(matches!(err, ConsolidationError::NonMonotonicTimestamp { .. }));
        assert!(matches!(
            c.flush(
                &mut tree,
                &mut schedule,
                parse_ts("2024-03-01T00:00:00Z").unwrap(),
                &mut created
            ),
            Err(ConsolidationError::FlushInPast { .. })
        ));
    }

    #[test]
    fn flush_is_idempotent() {
        let h = Harness::new();
        let c = h.consolidator();
        let mut tree = MemoryTree::new("u", 64);
        let mut schedule = Schedule::default();
        let mut created = Vec::new();
        let now = parse_ts("2024-03-06T00:00:00Z").unwrap();
        c.flush(&mut tree, &mut schedule, now, &mut created).unwrap();
        assert!(created.is_empty());

        c.ingest_turn(
            &mut tree,
            &mut schedule,
            &turn("a", "s1", "2024-03-05T10:00:00Z"),
            &mut created,
        )
        .unwrap();
        created.clear();
        c.flush(&mut tree, &mut schedule, now, &mut created).unwrap();
        assert_eq!(levels(&created), vec![2, 3, 4, 5]);
        created.clear();
        c.flush(&mut tree, &mut schedule, now, &mut created).unwrap();
        assert!(created.is_empty());
        assert!(tree.validate().is_clean());
    }

    #[test]
    fn session_over_midnight_keeps_day_open() {
        let h = Harness::new();
        let c = h.consolidator();
        let mut tree = MemoryTree::new("u", 64);
        let mut schedule = Schedule::default();
        let mut created = Vec::new();
        for (id, s, ts) in [
            ("a", "s1", "2024-03-05T23:50:00Z"),
            ("b", "s1", "2024-03-06T00:20:00Z"),
            ("c", "s2", "2024-03-06T09:00:00Z"),
        ] {
            c.ingest_turn(&mut tree, &mut schedule, &turn(id, s, ts), &mut created)
                .unwrap();
        }
        // s1 closes, then the day it started on (Mar 5) closes.
        assert_eq!(levels(&created), vec![1, 1, 2, 3, 1]);
        let day = &created[3];
        assert_eq!(time::format_ts(&day.interval.end), "2024-03-06T00:20:00Z");
        assert!(tree.validate().is_clean());
    }

    #[test]
    fn collect_children_filters_by_window() {
        let h = Harness::new();
        let c = h.consolidator();
        let mut tree = MemoryTree::new("u", 64);
        let mut schedule = Schedule::default();
        let mut created = Vec::new();
        for (id, ts) in [("a", "10:00"), ("b", "10:10"), ("c", "10:20"), ("d", "11:30")] {
            c.ingest_turn(
                &mut tree,
                &mut schedule,
                &turn(id, "s1", &format!("2024-03-05T{ts}:00Z")),
                &mut created,
            )
            .unwrap();
        }
        let group = TemporalGroup::session(
            "s1",
            TemporalInterval {
                start: parse_ts("2024-03-05T10:00:00Z").unwrap(),
                end: parse_ts("2024-03-05T10:30:00Z").unwrap(),
            },
        );
        let ids: Vec<u64> = collect_children(&tree, &group).iter().map(|n| n.id.0).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        let empty = TemporalGroup::day(NaiveDate::from_ymd_opt(2024, 1, 1).unwrap());
        assert!(collect_children(&tree, &empty).is_empty());
        assert_eq!(
            c.consolidate_group(&mut tree, 99, &empty, parse_ts("2024-03-05T12:00:00Z").unwrap())
                .unwrap(),
            None
        );
    }

    #[test]
    fn request_rendering() {
        let prompts = PromptSet::default();
        let req = ConsolidationRequest {
            level: Level::Day,
            child_texts: vec!["A went\nhome.".into(), "B slept.".into()],
            history_texts: vec![],
            instruction: Level::Day,
        };
        let text = req.render(&prompts);
        assert!(text.contains("(none)"));
        assert!(text.contains("1. A went home.\n2. B slept."));
    }

    struct Flaky {
        fail: AtomicBool,
        inner: MockChat,
    }

    impl ChatBackend for Flaky {
        fn chat_complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
            if self.fail.load(Ordering::SeqCst) {
                Err(BackendError::ProviderError("down".into()))
            } else {
                self.inner.chat_complete(req)
            }
        }
    }

    #[test]
    fn backend_failure_keeps_work_pending() {
        let h = Harness::new();
        let flaky = Flaky {
            fail: AtomicBool::new(false),
            inner: MockChat::default(),
        };
        let c = Consolidator {
            chat: &flaky,
            embedder: &h.embedder,
            prompts: &h.prompts,
            config: &h.config,
        };
        let mut tree = MemoryTree::new("u", 64);
        let mut schedule = Schedule::default();
        let mut created = Vec::new();
        c.ingest_turn(
            &mut tree,
            &mut schedule,
            &turn("a", "s1", "2024-03-05T10:00:00Z"),
            &mut created,
        )
        .unwrap();

        flaky.fail.store(true, Ordering::SeqCst);
        let err = c
            .ingest_turn(
                &mut tree,
                &mut schedule,
                &turn("b", "s2", "2024-03-05T11:00:00Z"),
                &mut created,
            )
            .unwrap_err();
        assert!(matches!(err, ConsolidationError::BackendFailure { .. }));
        assert_eq!(schedule.pending.len(), 2);
        assert_eq!(tree.len(), 1);

        flaky.fail.store(false, Ordering::SeqCst);
        created.clear();
        c.retry_pending(&mut tree, &mut schedule, &mut created).unwrap();
        assert_eq!(levels(&created), vec![2, 1]);
        assert!(schedule.pending.is_empty());
        let ids: Vec<u64> = created.iter().map(|n| n.id.0).collect();
        assert_eq!(ids, vec![2, 3]);
    }
}
