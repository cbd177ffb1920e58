//! Exact k-d tree over the target cloud.
//!
//! The association step asks, for every moved source point, for its k
//! nearest target points within a radius. Queries are exact: results are
//! identical to a brute-force scan, including the tie rule (equal
//! distances are ordered by smaller original index).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geometry::{dist2, Point3};

const NO_CHILD: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    point: u32,
    left: u32,
    right: u32,
}

/// Immutable spatial index with axis-aligned median splits. Build once
/// per target cloud; query freely (also from multiple threads).
pub struct SpatialIndex {
    points: Vec<Point3>,
    nodes: Vec<Node>,
    root: u32,
}

#[inline]
fn coord(p: &Point3, axis: usize) -> f64 {
    match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

/// Worst-candidate-first ordering: larger squared distance is "greater",
/// ties broken toward the larger index so the smaller index wins a spot.
struct Candidate {
    d2: f64,
    index: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.d2 == other.d2 && self.index == other.index
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl SpatialIndex {
    /// Build over a non-empty list of finite points. Deterministic for a
    /// fixed input order; duplicates are kept (multiset semantics).
    pub fn build(points: &[Point3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::DegenerateCloud(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build_subtree(points, &mut order, 0, &mut nodes);
        Ok(SpatialIndex {
            points: points.to_vec(),
            nodes,
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Up to `k` points within `max_dist` of `query`, as
    /// `(original_index, squared_distance)` sorted by ascending distance
    /// (ties by ascending index). The radius is inclusive. May be empty.
    pub fn k_nearest_within(&self, query: &Point3, k: usize, max_dist: f64) -> Vec<(usize, f64)> {
        assert!(k >= 1, "k must be at least 1");
        assert!(max_dist > 0.0, "max_dist must be positive");
        let r2 = max_dist * max_dist;
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.visit(self.root, query, k, r2, 0, &mut heap);
        let sorted = heap.into_sorted_vec();
        sorted
            .into_iter()
            .map(|c| (c.index as usize, c.d2))
            .collect()
    }

    fn visit(
        &self,
        node: u32,
        query: &Point3,
        k: usize,
        r2: f64,
        depth: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        if node == NO_CHILD {
            return;
        }
        let n = self.nodes[node as usize];
        let point = &self.points[n.point as usize];

        let d2 = dist2(query, point);
        if d2 <= r2 {
            let cand = Candidate {
                d2,
                index: n.point,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if cand.cmp(heap.peek().expect("heap is full")) == Ordering::Less {
                heap.pop();
                heap.push(cand);
            }
        }

        let axis = depth % 3;
        let diff = coord(query, axis) - coord(point, axis);
        let (near, far) = if diff < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.visit(near, query, k, r2, depth + 1, heap);

        // The far half-space can only be skipped when the splitting plane
        // is strictly farther than the current bound; at exactly the bound
        // it may still hold an equal-distance point with a smaller index.
        let bound = if heap.len() == k {
            heap.peek().expect("heap is full").d2.min(r2)
        } else {
            r2
        };
        if diff * diff <= bound {
            self.visit(far, query, k, r2, depth + 1, heap);
        }
    }
}

fn build_subtree(points: &[Point3], order: &mut [u32], depth: usize, nodes: &mut Vec<Node>) -> u32 {
    if order.is_empty() {
        return NO_CHILD;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    // Total order on (coordinate, original index): the median element is
    // unique, so the tree shape is deterministic.
    order.select_nth_unstable_by(mid, |&a, &b| {
        coord(&points[a as usize], axis)
            .total_cmp(&coord(&points[b as usize], axis))
            .then(a.cmp(&b))
    });
    let point = order[mid];
    let slot = nodes.len();
    nodes.push(Node {
        point,
        left: NO_CHILD,
        right: NO_CHILD,
    });
    let (lo, rest) = order.split_at_mut(mid);
    let hi = &mut rest[1..];
    let left = build_subtree(points, lo, depth + 1, nodes);
    let right = build_subtree(points, hi, depth + 1, nodes);
    nodes[slot].left = left;
    nodes[slot].right = right;
    slot as u32
}
