//! Temporal Memory Tree.
//!
//! A per-user tree of memories spread over five abstraction levels. Every
//! edge joins a node to a parent exactly one level up whose interval covers
//! the child's interval, and each level holds no more nodes than the level
//! below it. [`MemoryTree::validate`] checks all of this after the fact;
//! [`MemoryTree::insert_node`] refuses to create an edge that breaks it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Timestamp = DateTime<Utc>;

/// Closed time interval at second resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TemporalInterval {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TemporalInterval {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self, TmtError> {
        if start > end {
            return Err(TmtError::InvertedInterval { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn instant(at: Timestamp) -> Self {
        Self { start: at, end: at }
    }

    pub fn contains(&self, other: &TemporalInterval) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// Smallest interval covering both.
    pub fn hull(&self, other: &TemporalInterval) -> TemporalInterval {
        TemporalInterval {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }
}

impl fmt::Display for TemporalInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}]",
            crate::time::format_ts(&self.start),
            crate::time::format_ts(&self.end)
        )
    }
}

/// Abstraction level of a memory, 1 (segment) through 5 (profile).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Level {
    Segment = 1,
    Session = 2,
    Day = 3,
    Week = 4,
    Profile = 5,
}

impl Level {
    pub const ALL: [Level; 5] = [Level::Segment, Level::Session, Level::Day, Level::Week, Level::Profile];

    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn from_value(value: u8) -> Option<Level> {
        match value {
            1 => Some(Level::Segment),
            2 => Some(Level::Session),
            3 => Some(Level::Day),
            4 => Some(Level::Week),
            5 => Some(Level::Profile),
            _ => None,
        }
    }

    pub fn parent(self) -> Option<Level> {
        Level::from_value(self.value() + 1)
    }

    pub fn child(self) -> Option<Level> {
        self.value().checked_sub(1).and_then(Level::from_value)
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Segment => "segment",
            Level::Session => "session",
            Level::Day => "day",
            Level::Week => "week",
            Level::Profile => "profile",
        }
    }

    fn index(self) -> usize {
        self.value() as usize - 1
    }
}

impl TryFrom<u8> for Level {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Level::from_value(value).ok_or_else(|| format!("level {value} outside 1..=5"))
    }
}

impl From<Level> for u8 {
    fn from(level: Level) -> u8 {
        level.value()
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.value())
    }
}

/// Node identifier, allocated monotonically per user starting at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryNode {
    pub id: NodeId,
    pub user_id: String,
    pub level: Level,
    pub interval: TemporalInterval,
    pub text: String,
    /// Unit-norm embedding; empty when the node was inserted without one.
    #[serde(with = "crate::store::embedding_b64")]
    pub embedding: Vec<f32>,
    pub parent_id: Option<NodeId>,
    pub child_ids: Vec<NodeId>,
    pub source_turn_ids: Vec<String>,
    pub created_at: Timestamp,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TmtError {
    #[error("node {0} already exists")]
    DuplicateId(NodeId),
    #[error("parent {0} does not exist")]
    MissingParent(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {node} belongs to user {found}, not {expected}")]
    ForeignUser {
        node: NodeId,
        expected: String,
        found: String,
    },
    #[error("edge {parent}->{child}: parent level {parent_level} is not child level {child_level} + 1")]
    LevelEdgeViolation {
        parent: NodeId,
        child: NodeId,
        parent_level: Level,
        child_level: Level,
    },
    #[error("edge {parent}->{child}: parent interval {parent_interval} does not cover {child_interval}")]
    ContainmentViolation {
        parent: NodeId,
        child: NodeId,
        parent_interval: TemporalInterval,
        child_interval: TemporalInterval,
    },
    #[error("node {child} already has parent {parent}")]
    AlreadyParented { child: NodeId, parent: NodeId },
    #[error("embedding norm {norm} is not 1")]
    NotUnitNorm { norm: f64 },
    #[error("embedding dimension {found} differs from store dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("interval start {start} after end {end}")]
    InvertedInterval { start: Timestamp, end: Timestamp },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub node_id: NodeId,
    pub rule: String,
    pub detail: String,
}

pub const RULE_CONTAINMENT: &str = "temporal containment";
pub const RULE_LEVEL_EDGE: &str = "level edge";
pub const RULE_PROGRESSIVE: &str = "progressive consolidation";
pub const RULE_LINKAGE: &str = "linkage";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TreeReport {
    pub user_id: String,
    pub node_count_per_level: BTreeMap<u8, usize>,
    pub violations: Vec<Violation>,
}

impl TreeReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, level: Level) -> usize {
        self.node_count_per_level.get(&level.value()).copied().unwrap_or(0)
    }
}

const NORM_TOLERANCE: f64 = 1e-6;

/// One user's memory tree.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryTree {
    user_id: String,
    dimension: usize,
    nodes: BTreeMap<NodeId, MemoryNode>,
    /// Per level, ids sorted by (interval.end, id).
    by_level: [Vec<NodeId>; 5],
}

impl MemoryTree {
    pub fn new(user_id: impl Into<String>, dimension: usize) -> Self {
        Self {
            user_id: user_id.into(),
            dimension,
            nodes: BTreeMap::new(),
            by_level: Default::default(),
        }
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, id: NodeId) -> Option<&MemoryNode> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &MemoryNode> {
        self.nodes.values()
    }

    pub fn max_id(&self) -> Option<NodeId> {
        self.nodes.keys().next_back().copied()
    }

    /// Inserts a node, linking it to its parent (if `parent_id` is set) and
    /// adopting every id in `child_ids` as a child. All edges are checked
    /// before anything is mutated.
    pub fn insert_node(&mut self, mut node: MemoryNode) -> Result<NodeId, TmtError> {
        if self.nodes.contains_key(&node.id) {
            return Err(TmtError::DuplicateId(node.id));
        }
        if node.user_id != self.user_id {
            return Err(TmtError::ForeignUser {
                node: node.id,
                expected: self.user_id.clone(),
                found: node.user_id,
            });
        }
        if node.interval.start > node.interval.end {
            return Err(TmtError::InvertedInterval {
                start: node.interval.start,
                end: node.interval.end,
            });
        }
        if !node.embedding.is_empty() {
            if node.embedding.len() != self.dimension {
                return Err(TmtError::DimensionMismatch {
                    expected: self.dimension,
                    found: node.embedding.len(),
                });
            }
            let norm = l2_norm(&node.embedding);
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(TmtError::NotUnitNorm { norm });
            }
        }
        if let Some(parent_id) = node.parent_id {
            let parent = self.nodes.get(&parent_id).ok_or(TmtError::MissingParent(parent_id))?;
            check_edge(parent, &node)?;
        }
        for child_id in &node.child_ids {
            let child = self.nodes.get(child_id).ok_or(TmtError::UnknownNode(*child_id))?;
            check_edge(&node, child)?;
            if let Some(existing) = child.parent_id {
                return Err(TmtError::AlreadyParented {
                    child: *child_id,
                    parent: existing,
                });
            }
        }

        let id = node.id;
        let mut child_ids = std::mem::take(&mut node.child_ids);
        child_ids.sort_by_key(|c| (self.nodes[c].interval.start, *c));
        child_ids.dedup();
        for child_id in &child_ids {
            if let Some(child) = self.nodes.get_mut(child_id) {
                child.parent_id = Some(id);
            }
        }
        node.child_ids = child_ids;

        if let Some(parent_id) = node.parent_id {
            let start = node.interval.start;
            let nodes = &self.nodes;
            let mut siblings: Vec<NodeId> = nodes[&parent_id].child_ids.clone();
            siblings.push(id);
            siblings.sort_by_key(|c| {
                if *c == id {
                    (start, *c)
                } else {
                    (nodes[c].interval.start, *c)
                }
            });
            self.nodes.get_mut(&parent_id).expect("checked above").child_ids = siblings;
        }

        let slot = &mut self.by_level[node.level.index()];
        let key = (node.interval.end, id);
        let pos = slot.partition_point(|other| {
            let n = &self.nodes[other];
            (n.interval.end, n.id) < key
        });
        slot.insert(pos, id);
        self.nodes.insert(id, node);
        Ok(id)
    }

    /// Nodes of one level ordered by `interval.end` ascending, ties by id.
    pub fn nodes_at_level(&self, level: Level) -> Vec<&MemoryNode> {
        self.by_level[level.index()].iter().map(|id| &self.nodes[id]).collect()
    }

    pub fn count_at_level(&self, level: Level) -> usize {
        self.by_level[level.index()].len()
    }

    /// Ancestors of `id` whose level is in `levels`, nearest first.
    pub fn ancestors(&self, id: NodeId, levels: &BTreeSet<Level>) -> Result<Vec<&MemoryNode>, TmtError> {
        let mut current = self.nodes.get(&id).ok_or(TmtError::UnknownNode(id))?;
        let mut out = Vec::new();
        while let Some(parent_id) = current.parent_id {
            let Some(parent) = self.nodes.get(&parent_id) else {
                break;
            };
            if levels.contains(&parent.level) {
                out.push(parent);
            }
            current = parent;
        }
        Ok(out)
    }

    /// The most recent `window` nodes of a level, most recent first.
    pub fn history_window(&self, level: Level, window: usize) -> Vec<&MemoryNode> {
        self.by_level[level.index()]
            .iter()
            .rev()
            .take(window)
            .map(|id| &self.nodes[id])
            .collect()
    }

    pub fn validate(&self) -> TreeReport {
        let mut node_count_per_level = BTreeMap::new();
        for level in Level::ALL {
            node_count_per_level.insert(level.value(), self.count_at_level(level));
        }
        let mut violations = Vec::new();

        for node in self.nodes.values() {
            if let Some(parent_id) = node.parent_id {
                match self.nodes.get(&parent_id) {
                    None => violations.push(Violation {
                        node_id: node.id,
                        rule: RULE_LINKAGE.into(),
                        detail: format!("parent {parent_id} missing"),
                    }),
                    Some(parent) => {
                        if !parent.child_ids.contains(&node.id) {
                            violations.push(Violation {
                                node_id: node.id,
                                rule: RULE_LINKAGE.into(),
                                detail: format!("parent {parent_id} does not list this child"),
                            });
                        }
                    }
                }
            }
            for child_id in &node.child_ids {
                let Some(child) = self.nodes.get(child_id) else {
                    violations.push(Violation {
                        node_id: node.id,
                        rule: RULE_LINKAGE.into(),
                        detail: format!("child {child_id} missing"),
                    });
                    continue;
                };
                if child.parent_id != Some(node.id) {
                    violations.push(Violation {
                        node_id: node.id,
                        rule: RULE_LINKAGE.into(),
                        detail: format!("child {child_id} points at a different parent"),
                    });
                }
                if node.level.value() != child.level.value() + 1 {
                    violations.push(Violation {
                        node_id: child.id,
                        rule: RULE_LEVEL_EDGE.into(),
                        detail: format!("parent {} at {} over child at {}", node.id, node.level, child.level),
                    });
                }
                if !node.interval.contains(&child.interval) {
                    violations.push(Violation {
                        node_id: child.id,
                        rule: RULE_CONTAINMENT.into(),
                        detail: format!(
                            "parent {} interval {} does not cover {}",
                            node.id, node.interval, child.interval
                        ),
                    });
                }
            }
        }

        for pair in Level::ALL.windows(2) {
            let (lower, upper) = (pair[0], pair[1]);
            let lower_count = self.count_at_level(lower);
            let upper_count = self.count_at_level(upper);
            if lower_count > 0 && upper_count > lower_count {
                let node_id = self.by_level[upper.index()][0];
                violations.push(Violation {
                    node_id,
                    rule: RULE_PROGRESSIVE.into(),
                    detail: format!(
                        "{} nodes at level {} over {} at level {}",
                        upper_count,
                        upper.value(),
                        lower_count,
                        lower.value()
                    ),
                });
            }
        }

        TreeReport {
            user_id: self.user_id.clone(),
            node_count_per_level,
            violations,
        }
    }
}

fn check_edge(parent: &MemoryNode, child: &MemoryNode) -> Result<(), TmtError> {
    if parent.user_id != child.user_id {
        return Err(TmtError::ForeignUser {
            node: child.id,
            expected: parent.user_id.clone(),
            found: child.user_id.clone(),
        });
    }
    if parent.level.value() != child.level.value() + 1 {
        return Err(TmtError::LevelEdgeViolation {
            parent: parent.id,
            child: child.id,
            parent_level: parent.level,
            child_level: child.level,
        });
    }
    if !parent.interval.contains(&child.interval) {
        return Err(TmtError::ContainmentViolation {
            parent: parent.id,
            child: child.id,
            parent_interval: parent.interval,
            child_interval: child.interval,
        });
    }
    Ok(())
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt()
}
