//! Geometry of stored embeddings, per level.
//!
//! All distances are cosine distances, `1 - cos(u, v)`. Labels are users.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::tmt::{Level, MemoryTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifoldError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("zero vector at point {0}")]
    ZeroVector(usize),
    #[error("point {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
}

pub const DEFINITIONS: &str = "distance = 1 - cosine; silhouette = mean over points of (b - a) / max(a, b) with users as labels, singleton clusters scoring 0; spread = mean distance to the normalized centroid; radius95 = nearest-rank 95th percentile of those distances; separation_ratio = mean pairwise distance between user centroids / mean distance of points to their own user centroid";

/// Within-label spread at or below this is rounding noise.
const SPREAD_FLOOR: f64 = 1e-12;

fn check(points: &[Vec<f32>]) -> Result<Vec<Vec<f64>>, ManifoldError> {
    let dim = points.first().map(Vec::len).unwrap_or(0);
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if p.len() != dim {
                return Err(ManifoldError::DimensionMismatch {
                    index: i,
                    expected: dim,
                    got: p.len(),
                });
            }
            let v: Vec<f64> = p.iter().map(|x| *x as f64).collect();
            if v.iter().all(|x| *x == 0.0) {
                return Err(ManifoldError::ZeroVector(i));
            }
            Ok(v)
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    1.0 - (dot / (norm(u) * norm(v))).clamp(-1.0, 1.0)
}

fn centroid(points: &[&Vec<f64>]) -> Option<Vec<f64>> {
    let dim = points.first()?.len();
    let mut c = vec![0.0; dim];
    for p in points {
        for (acc, x) in c.iter_mut().zip(p.iter()) {
            *acc += x;
        }
    }
    let n = norm(&c);
    (n > 0.0).then(|| c.into_iter().map(|x| x / n).collect())
}

fn group<L: Ord + Clone>(labels: &[L]) -> BTreeMap<L, Vec<usize>> {
    let mut groups: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.clone()).or_default().push(i);
    }
    groups
}

/// Mean silhouette coefficient.
pub fn silhouette<L: Ord + Clone>(points: &[Vec<f32>], labels: &[L]) -> Result<f64, ManifoldError> {
    if points.len() != labels.len() {
        return Err(ManifoldError::DegenerateInput(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    let pts = check(points)?;
    let groups = group(labels);
    if groups.len() < 2 {
        return Err(ManifoldError::DegenerateInput("fewer than two labels".into()));
    }
    if groups.values().all(|members| members.len() < 2) {
        return Err(ManifoldError::DegenerateInput("every label is a singleton".into()));
    }

    let mut total = 0.0;
    for (i, label) in labels.iter().enumerate() {
        let own = &groups[label];
        if own.len() == 1 {
            continue;
        }
        let mean_to = |members: &[usize]| {
            let sum: f64 = members
                .iter()
                .filter(|j| **j != i)
                .map(|j| cosine_distance(&pts[i], &pts[*j]))
                .sum();
            let n = members.iter().filter(|j| **j != i).count();
            sum / n as f64
        };
        let a = mean_to(own);
        let b = groups
            .iter()
            .filter(|(l, _)| *l != label)
            .map(|(_, members)| mean_to(members))
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / points.len() as f64)
}

/// (spread, radius95) around the normalized centroid.
pub fn spread_metrics(points: &[Vec<f32>]) -> Result<(f64, f64), ManifoldError> {
    if points.is_empty() {
        return Err(ManifoldError::DegenerateInput("no points".into()));
    }
    let pts = check(points)?;
    let refs: Vec<&Vec<f64>> = pts.iter().collect();
    let c = centroid(&refs).ok_or_else(|| ManifoldError::DegenerateInput("points cancel out".into()))?;
    let mut d: Vec<f64> = pts.iter().map(|p| cosine_distance(p, &c)).collect();
    let spread = d.iter().sum::<f64>() / d.len() as f64;
    d.sort_by(f64::total_cmp);
    let rank = ((0.95 * d.len() as f64).ceil() as usize).max(1);
    Ok((spread, d[rank - 1]))
}

/// Mean distance between label centroids over mean distance of points to
/// their own centroid.
pub fn separation_ratio<L: Ord + Clone>(points: &[Vec<f32>], labels: &[L]) -> Result<f64, ManifoldError> {
    if points.len() != labels.len() {
        return Err(ManifoldError::DegenerateInput(
            "points and labels differ in length".into(),
        ));
    }
    let pts = check(points)?;
    let groups = group(labels);
    if groups.len() < 2 {
        return Err(ManifoldError::DegenerateInput("fewer than two labels".into()));
    }
    if groups.values().all(|members| members.len() < 2) {
        return Err(ManifoldError::DegenerateInput("every label is a singleton".into()));
    }
    let mut centroids = Vec::new();
    let mut intra = 0.0;
    for members in groups.values() {
        let refs: Vec<&Vec<f64>> = members.iter().map(|i| &pts[*i]).collect();
        let c = centroid(&refs).ok_or_else(|| ManifoldError::DegenerateInput("points cancel out".into()))?;
        intra += refs.iter().map(|p| cosine_distance(p, &c)).sum::<f64>();
        centroids.push(c);
    }
    intra /= pts.len() as f64;
    let mut inter = 0.0;
    let mut pairs = 0;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            inter += cosine_distance(&centroids[i], &centroids[j]);
            pairs += 1;
        }
    }
    inter /= pairs as f64;
    if intra <= SPREAD_FLOOR {
        return Err(ManifoldError::DegenerateInput("no spread within labels".into()));
    }
    Ok(inter / intra)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifoldRow {
    pub user_id: String,
    pub level: Level,
    pub count: usize,
    /// Level-wide, shared by every user's row at the level.
    pub silhouette: Option<f64>,
    pub spread: Option<f64>,
    pub radius95: Option<f64>,
    /// Level-wide.
    pub separation_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifoldReport {
    pub definitions: String,
    pub rows: Vec<ManifoldRow>,
}

/// Metrics for every (user, level) with at least one embedded node. Metrics
/// whose inputs are degenerate are left empty.
pub fn analyze(trees: &[MemoryTree]) -> ManifoldReport {
    let mut rows = Vec::new();
    for level in Level::ALL {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        let mut per_user = Vec::new();
        for tree in trees {
            let embedded: Vec<Vec<f32>> = tree
                .nodes_at_level(level)
                .into_iter()
                .filter(|n| !n.embedding.is_empty())
                .map(|n| n.embedding.clone())
                .collect();
            if embedded.is_empty() {
                continue;
            }
            for e in &embedded {
                points.push(e.clone());
                labels.push(tree.user_id().to_string());
            }
            per_user.push((tree.user_id().to_string(), embedded));
        }
        let sil = silhouette(&points, &labels).ok();
        let sep = separation_ratio(&points, &labels).ok();
        for (user_id, embedded) in per_user {
            let spread = spread_metrics(&embedded).ok();
            rows.push(ManifoldRow {
                user_id,
                level,
                count: embedded.len(),
                silhouette: sil,
                spread: spread.map(|s| s.0),
                radius95: spread.map(|s| s.1),
                separation_ratio: sep,
            });
        }
    }
    ManifoldReport {
        definitions: DEFINITIONS.to_string(),
        rows,
    }
}
