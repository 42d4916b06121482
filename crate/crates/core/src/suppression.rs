//! Greedy non-maximum suppression, top-k selection, voting over detection
//! sets from several model snapshots, and nested-box filtering.
//!
//! Every ordering in this module uses the same deterministic rule: higher
//! score first, then larger area, then earlier input position.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{contains, iou, ScoredBox};

/// Suppression threshold for proposals.
pub const PROPOSAL_NMS_IOU: f64 = 0.7;
/// Proposals forwarded to the detection stage.
pub const PROPOSAL_TOP_K: usize = 2000;
/// Suppression threshold when voting across detection sets.
pub const VOTE_NMS_IOU: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuppressionConfig {
    pub proposal_iou: f64,
    pub proposal_top_k: usize,
    pub vote_iou: f64,
    pub nested_eps: f64,
}

impl Default for SuppressionConfig {
    fn default() -> Self {
        Self {
            proposal_iou: PROPOSAL_NMS_IOU,
            proposal_top_k: PROPOSAL_TOP_K,
            vote_iou: VOTE_NMS_IOU,
            nested_eps: 0.0,
        }
    }
}

/// Detection candidates, optionally tagged with the snapshot that produced them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    pub items: Vec<ScoredBox>,
    pub iteration: Option<u32>,
}

impl DetectionSet {
    pub fn new(items: Vec<ScoredBox>) -> Self {
        Self {
            items,
            iteration: None,
        }
    }

    pub fn tagged(items: Vec<ScoredBox>, iteration: u32) -> Self {
        Self {
            items,
            iteration: Some(iteration),
        }
    }
}

/// Ordering of `(input index, box)` pairs: score desc, area desc, index asc.
pub fn rank_order(a: (usize, &ScoredBox), b: (usize, &ScoredBox)) -> Ordering {
    b.1.score
        .total_cmp(&a.1.score)
        .then_with(|| b.1.bbox.area().total_cmp(&a.1.bbox.area()))
        .then_with(|| a.0.cmp(&b.0))
}

/// Input indices sorted by [`rank_order`].
pub fn ranked_indices(boxes: &[ScoredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| rank_order((a, &boxes[a]), (b, &boxes[b])));
    order
}

fn check_threshold(iou_threshold: f64) -> Result<()> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "IoU threshold must be in (0, 1], got {iou_threshold}"
        )));
    }
    Ok(())
}

/// Input indices kept by greedy NMS, stopping once `limit` boxes are kept.
///
/// A box is suppressed when its IoU with an already kept box is strictly
/// greater than the threshold. Because kept boxes are emitted in rank order,
/// the result with a limit is a prefix of the unlimited result.
pub fn nms_indices(boxes: &[ScoredBox], iou_threshold: f64, limit: usize) -> Result<Vec<usize>> {
    check_threshold(iou_threshold)?;
    let mut keep: Vec<usize> = Vec::new();
    if limit == 0 {
        return Ok(keep);
    }
    for i in ranked_indices(boxes) {
        let candidate = &boxes[i].bbox;
        if keep
            .iter()
            .all(|&k| iou(&boxes[k].bbox, candidate) <= iou_threshold)
        {
            keep.push(i);
            if keep.len() == limit {
                break;
            }
        }
    }
    Ok(keep)
}

/// Greedy NMS. Output is in descending rank order.
pub fn nms(boxes: &[ScoredBox], iou_threshold: f64) -> Result<Vec<ScoredBox>> {
    nms_top_k(boxes, iou_threshold, usize::MAX)
}

/// NMS followed by top-k, computed without visiting boxes past the k-th keep.
pub fn nms_top_k(boxes: &[ScoredBox], iou_threshold: f64, k: usize) -> Result<Vec<ScoredBox>> {
    Ok(nms_indices(boxes, iou_threshold, k)?
        .into_iter()
        .map(|i| boxes[i])
        .collect())
}

/// The `k` best boxes in descending rank order.
pub fn top_k(boxes: &[ScoredBox], k: usize) -> Vec<ScoredBox> {
    ranked_indices(boxes)
        .into_iter()
        .take(k)
        .map(|i| boxes[i])
        .collect()
}

/// Merges detection sets from several snapshots and suppresses the union.
pub fn iterative_vote(sets: &[DetectionSet], iou_threshold: f64) -> Result<DetectionSet> {
    if sets.is_empty() {
        return Err(Error::invalid("voting needs at least one detection set"));
    }
    let merged: Vec<ScoredBox> = sets.iter().flat_map(|s| s.items.iter().copied()).collect();
    Ok(DetectionSet::new(nms(&merged, iou_threshold)?))
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Keeps the best-ranked box of every group of mutually nested boxes.
///
/// Groups are connected components of the symmetric containment relation
/// (`contains` with `eps`), so `A ⊃ B` and `A ⊃ C` put `A`, `B` and `C` in one
/// group even when `B` and `C` are unrelated. Output is in descending rank
/// order.
pub fn filter_nested(boxes: &[ScoredBox], eps: f64) -> Vec<ScoredBox> {
    let n = boxes.len();
    let mut groups = DisjointSet::new(n);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&boxes[i].bbox, &boxes[j].bbox);
            if contains(a, b, eps) || contains(b, a, eps) {
                groups.union(i, j);
            }
        }
    }
    let mut taken = vec![false; n];
    let mut out = Vec::new();
    for i in ranked_indices(boxes) {
        let root = groups.find(i);
        if !taken[root] {
            taken[root] = true;
            out.push(boxes[i]);
        }
    }
    out
}
