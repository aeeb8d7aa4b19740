//! Dynamic M-tree over an in-memory page store.
//!
//! The same structure doubles as the PM-tree: a tree built with a non-empty
//! [`PivotSet`] additionally maintains pivot rings on routing entries and
//! pivot distances on ground entries (see [`crate::pmtree`]). Pivot data never
//! influences insertion or splitting, so an M-tree and a PM-tree built from the
//! same dataset and capacity share their topology.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::dataset::Dataset;
use crate::metric::{Descriptor, DistanceCounter, MetricError, MetricObject, ObjectId, ObjectKind};
use crate::pmtree::PivotSet;
use crate::stats::{IoCounter, QueryStats};

pub type NodeId = u32;

/// Minimal node utilization as a fraction of capacity.
pub const MIN_UTILIZATION: f64 = 0.2;

/// Number of entries examined as promotion candidates when a node splits.
const PROMOTION_CANDIDATES: usize = 10;

/// Absolute tolerance used by the structural audits.
pub const AUDIT_TOLERANCE: f64 = 1e-9;

/// Relative margin added to every bound derived from the triangle inequality.
/// Stored distances are rounded, so a bound combining several of them can
/// overshoot the exact value by a few ulps and prune a qualifying object.
pub const BOUND_SLACK: f64 = 1e-12;

#[inline]
pub(crate) fn slack(magnitude: f64) -> f64 {
    BOUND_SLACK * magnitude
}

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("cannot index an empty dataset")]
    EmptyDataset,
    #[error("node capacity {0} is below the minimum of 4")]
    CapacityTooSmall(usize),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Pivots(String),
}

/// Distance interval to one pivot covering a whole subtree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ring {
    pub min: f64,
    pub max: f64,
}

impl Ring {
    pub fn point(d: f64) -> Self {
        Ring { min: d, max: d }
    }

    fn extend(&mut self, d: f64) {
        self.min = self.min.min(d);
        self.max = self.max.max(d);
    }

    fn union(&mut self, other: &Ring) {
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingEntry {
    pub center: MetricObject,
    pub radius: f64,
    /// Distance to the parent routing entry's center; 0 in the root node.
    pub parent_dist: f64,
    pub child: NodeId,
    /// One ring per inner pivot (empty for a plain M-tree).
    pub rings: Vec<Ring>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundEntry {
    pub object: MetricObject,
    /// Distance to the parent routing entry's center; 0 in a root leaf.
    pub parent_dist: f64,
    /// Exact distances to the leaf pivots (empty for a plain M-tree).
    pub pivot_dists: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf(Vec<GroundEntry>),
    Inner(Vec<RoutingEntry>),
}

impl Node {
    pub fn len(&self) -> usize {
        match self {
            Node::Leaf(e) => e.len(),
            Node::Inner(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf(_))
    }
}

/// Balanced metric tree; an M-tree when built without pivots, a PM-tree otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTree {
    pub(crate) kind: ObjectKind,
    pub(crate) capacity: usize,
    pub(crate) nodes: Vec<Node>,
    pub(crate) root: NodeId,
    pub(crate) len: usize,
    pub(crate) pivots: PivotSet,
}

/// One side of a split, ready to become a routing entry in the parent.
struct Promoted {
    center: MetricObject,
    radius: f64,
    node: NodeId,
    rings: Vec<Ring>,
}

/// Result of a range or kNN query.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeResult {
    /// Matching ids in ascending order.
    pub ids: Vec<ObjectId>,
    pub stats: QueryStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    /// `(id, distance)` pairs by ascending `(distance, id)`.
    pub neighbors: Vec<(ObjectId, f64)>,
    /// Set when `k` exceeded the database size and every object was returned.
    pub truncated: bool,
    pub stats: QueryStats,
}

/// Total order on distances for heaps and tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dist(pub f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl MetricTree {
    /// Builds an M-tree by inserting the dataset objects one by one.
    pub fn build(dataset: &Dataset, capacity: usize) -> Result<(Self, DistanceCounter), TreeError> {
        Self::build_with_pivots(dataset, capacity, PivotSet::empty())
    }

    pub(crate) fn build_with_pivots(
        dataset: &Dataset,
        capacity: usize,
        pivots: PivotSet,
    ) -> Result<(Self, DistanceCounter), TreeError> {
        if capacity < 4 {
            return Err(TreeError::CapacityTooSmall(capacity));
        }
        if dataset.is_empty() {
            return Err(TreeError::EmptyDataset);
        }
        for o in dataset.objects.iter().chain(pivots.objects.iter()) {
            dataset.kind.check(&o.descriptor)?;
        }
        let mut tree = MetricTree {
            kind: dataset.kind,
            capacity,
            nodes: vec![Node::Leaf(Vec::new())],
            root: 0,
            len: 0,
            pivots,
        };
        let mut counter = DistanceCounter::new();
        for obj in &dataset.objects {
            tree.insert(obj.clone(), &mut counter);
        }
        Ok((tree, counter))
    }

    pub fn kind(&self) -> ObjectKind {
        self.kind
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn pivots(&self) -> &PivotSet {
        &self.pivots
    }

    /// Number of levels (1 for a single leaf).
    pub fn height(&self) -> usize {
        let mut h = 1;
        let mut id = self.root;
        while let Node::Inner(entries) = &self.nodes[id as usize] {
            id = entries[0].child;
            h += 1;
        }
        h
    }

    /// Fetches a node, charging one logical read.
    #[inline]
    pub fn fetch_node(&self, id: NodeId, io: &mut IoCounter) -> &Node {
        io.bump();
        &self.nodes[id as usize]
    }

    /// Uncounted access for audits and serialization.
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    #[inline]
    pub(crate) fn dist(
        &self,
        a: &Descriptor,
        b: &Descriptor,
        counter: &mut DistanceCounter,
    ) -> f64 {
        self.kind.distance(a, b, counter)
    }

    fn min_fill(&self) -> usize {
        (MIN_UTILIZATION * self.capacity as f64).ceil() as usize
    }

    /// Inserts one object (single-path descent, split on overflow).
    pub fn insert(&mut self, obj: MetricObject, counter: &mut DistanceCounter) {
        let pivot_dists: Vec<f64> = self
            .pivots
            .objects
            .iter()
            .map(|p| self.kind.distance(&obj.descriptor, &p.descriptor, counter))
            .collect();
        if let Some((a, b)) = self.insert_rec(self.root, &obj, &pivot_dists, None, 0.0, counter) {
            let entries = vec![a, b]
                .into_iter()
                .map(|p| RoutingEntry {
                    center: p.center,
                    radius: p.radius,
                    parent_dist: 0.0,
                    child: p.node,
                    rings: p.rings,
                })
                .collect();
            self.nodes.push(Node::Inner(entries));
            self.root = (self.nodes.len() - 1) as NodeId;
        }
        self.len += 1;
    }

    fn insert_rec(
        &mut self,
        node_id: NodeId,
        obj: &MetricObject,
        pivot_dists: &[f64],
        parent_center: Option<&Descriptor>,
        dist_to_parent: f64,
        counter: &mut DistanceCounter,
    ) -> Option<(Promoted, Promoted)> {
        let inner_pivots = self.pivots.inner;
        let leaf_pivots = self.pivots.leaf();
        let kind = self.kind;
        let (child, center, d_best, best) = match &mut self.nodes[node_id as usize] {
            Node::Leaf(entries) => {
                entries.push(GroundEntry {
                    object: obj.clone(),
                    parent_dist: dist_to_parent,
                    pivot_dists: pivot_dists[..leaf_pivots].to_vec(),
                });
                if entries.len() <= self.capacity {
                    return None;
                }
                return Some(self.split(node_id, counter));
            }
            Node::Inner(entries) => {
                // least radius enlargement, then closest center, then smaller center id
                let mut best: Option<(f64, f64, ObjectId, usize)> = None;
                for (i, e) in entries.iter().enumerate() {
                    let d = kind.distance(&obj.descriptor, &e.center.descriptor, counter);
                    let cand = ((d - e.radius).max(0.0), d, e.center.id, i);
                    let better = match &best {
                        None => true,
                        Some(b) => {
                            (Dist(cand.0), Dist(cand.1), cand.2) < (Dist(b.0), Dist(b.1), b.2)
                        }
                    };
                    if better {
                        best = Some(cand);
                    }
                }
                let (_, d, _, i) = best.expect("inner nodes are never empty");
                let e = &mut entries[i];
                e.radius = e.radius.max(d);
                for (ring, &pd) in e.rings.iter_mut().zip(&pivot_dists[..inner_pivots]) {
                    ring.extend(pd);
                }
                (e.child, e.center.descriptor.clone(), d, i)
            }
        };

        let split = self.insert_rec(child, obj, pivot_dists, Some(&center), d_best, counter)?;
        let (a, b) = split;
        let make = |p: Promoted, counter: &mut DistanceCounter| RoutingEntry {
            parent_dist: parent_center
                .map(|pc| kind.distance(&p.center.descriptor, pc, counter))
                .unwrap_or(0.0),
            center: p.center,
            radius: p.radius,
            child: p.node,
            rings: p.rings,
        };
        let ea = make(a, counter);
        let eb = make(b, counter);
        let Node::Inner(entries) = &mut self.nodes[node_id as usize] else {
            unreachable!()
        };
        entries[best] = ea;
        entries.push(eb);
        if entries.len() <= self.capacity {
            return None;
        }
        Some(self.split(node_id, counter))
    }

    /// Splits an overflowing node in place: the left half keeps `node_id`, the
    /// right half goes to a fresh page.
    fn split(&mut self, node_id: NodeId, counter: &mut DistanceCounter) -> (Promoted, Promoted) {
        let kind = self.kind;
        let min_fill = self.min_fill();
        let inner_pivots = self.pivots.inner;
        let node = std::mem::replace(&mut self.nodes[node_id as usize], Node::Leaf(Vec::new()));

        // (descriptor, radius) of each member as seen from a promoted center
        let members: Vec<(&MetricObject, f64)> = match &node {
            Node::Leaf(e) => e.iter().map(|g| (&g.object, 0.0)).collect(),
            Node::Inner(e) => e.iter().map(|r| (&r.center, r.radius)).collect(),
        };
        let n = members.len();
        let candidates: Vec<usize> = if n <= PROMOTION_CANDIDATES {
            (0..n).collect()
        } else {
            (0..PROMOTION_CANDIDATES)
                .map(|i| i * n / PROMOTION_CANDIDATES)
                .collect()
        };

        // rows[c][j] = distance from candidate c to member j
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(candidates.len());
        for (ci, &c) in candidates.iter().enumerate() {
            let row = (0..n)
                .map(|j| {
                    if j == c {
                        0.0
                    } else if let Some(prev) = candidates[..ci].iter().position(|&p| p == j) {
                        rows[prev][c]
                    } else {
                        kind.distance(&members[c].0.descriptor, &members[j].0.descriptor, counter)
                    }
                })
                .collect();
            rows.push(row);
        }

        let mut best: Option<(f64, usize, usize, Vec<bool>)> = None;
        for ai in 0..candidates.len() {
            for bi in ai + 1..candidates.len() {
                let side = partition(
                    &rows[ai],
                    &rows[bi],
                    candidates[ai],
                    candidates[bi],
                    min_fill,
                );
                let (mut ra, mut rb) = (0.0f64, 0.0f64);
                for (j, &to_b) in side.iter().enumerate() {
                    if to_b {
                        rb = rb.max(rows[bi][j] + members[j].1);
                    } else {
                        ra = ra.max(rows[ai][j] + members[j].1);
                    }
                }
                let score = ra.max(rb);
                if best.as_ref().is_none_or(|b| score < b.0) {
                    best = Some((score, ai, bi, side));
                }
            }
        }
        let (_, ai, bi, side) = best.expect("a split node holds at least two entries");
        let (row_a, row_b) = (&rows[ai], &rows[bi]);
        let center_a = members[candidates[ai]].0.clone();
        let center_b = members[candidates[bi]].0.clone();

        let right_id = self.nodes.len() as NodeId;
        let (left, right, ra, rb, rings_a, rings_b) = match node {
            Node::Leaf(entries) => {
                let (mut l, mut r) = (Vec::new(), Vec::new());
                for (j, mut g) in entries.into_iter().enumerate() {
                    if side[j] {
                        g.parent_dist = row_b[j];
                        r.push(g);
                    } else {
                        g.parent_dist = row_a[j];
                        l.push(g);
                    }
                }
                let radius =
                    |v: &Vec<GroundEntry>| v.iter().map(|g| g.parent_dist).fold(0.0, f64::max);
                let rings = |v: &Vec<GroundEntry>| leaf_rings(v, inner_pivots);
                let (ra, rb) = (radius(&l), radius(&r));
                let (ga, gb) = (rings(&l), rings(&r));
                (Node::Leaf(l), Node::Leaf(r), ra, rb, ga, gb)
            }
            Node::Inner(entries) => {
                let (mut l, mut r) = (Vec::new(), Vec::new());
                for (j, mut e) in entries.into_iter().enumerate() {
                    if side[j] {
                        e.parent_dist = row_b[j];
                        r.push(e);
                    } else {
                        e.parent_dist = row_a[j];
                        l.push(e);
                    }
                }
                let radius = |v: &Vec<RoutingEntry>| {
                    v.iter()
                        .map(|e| e.parent_dist + e.radius)
                        .fold(0.0, f64::max)
                };
                let (ra, rb) = (radius(&l), radius(&r));
                let (ga, gb) = (inner_rings(&l, inner_pivots), inner_rings(&r, inner_pivots));
                (Node::Inner(l), Node::Inner(r), ra, rb, ga, gb)
            }
        };
        self.nodes[node_id as usize] = left;
        self.nodes.push(right);
        (
            Promoted {
                center: center_a,
                radius: ra,
                node: node_id,
                rings: rings_a,
            },
            Promoted {
                center: center_b,
                radius: rb,
                node: right_id,
                rings: rings_b,
            },
        )
    }

    /// Every object stored below `node`, in leaf order.
    pub fn subtree_objects(&self, node: NodeId) -> Vec<&GroundEntry> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(id) = stack.pop() {
            match &self.nodes[id as usize] {
                Node::Leaf(entries) => out.extend(entries.iter()),
                Node::Inner(entries) => stack.extend(entries.iter().rev().map(|e| e.child)),
            }
        }
        out
    }

    /// Range query using parent and basic filtering only (pivot data ignored).
    pub fn range_query(&self, query: &MetricObject, radius: f64) -> Result<RangeResult, TreeError> {
        self.range_search(query, radius, false)
    }

    pub(crate) fn range_search(
        &self,
        query: &MetricObject,
        radius: f64,
        use_pivots: bool,
    ) -> Result<RangeResult, TreeError> {
        self.kind.check(&query.descriptor)?;
        let mut dc = DistanceCounter::new();
        let mut io = IoCounter::new();
        let query_pivots: Option<Vec<f64>> = use_pivots.then(|| {
            self.pivots
                .objects
                .iter()
                .map(|p| self.dist(&query.descriptor, &p.descriptor, &mut dc))
                .collect()
        });
        let mut ids = Vec::new();
        let mut stack: Vec<(NodeId, Option<f64>)> = vec![(self.root, None)];
        while let Some((id, parent_q)) = stack.pop() {
            match self.fetch_node(id, &mut io) {
                Node::Inner(entries) => {
                    for e in entries {
                        if let Some(qp) = &query_pivots {
                            if rings_exclude(&e.rings, qp, radius) {
                                continue;
                            }
                        }
                        if let Some(dpq) = parent_q {
                            let margin = slack(dpq + e.parent_dist + e.radius);
                            if (dpq - e.parent_dist).abs() > radius + e.radius + margin {
                                continue;
                            }
                        }
                        let d = self.dist(&query.descriptor, &e.center.descriptor, &mut dc);
                        if d <= radius + e.radius + slack(d + e.radius) {
                            stack.push((e.child, Some(d)));
                        }
                    }
                }
                Node::Leaf(entries) => {
                    for g in entries {
                        if let Some(qp) = &query_pivots {
                            let excluded = g
                                .pivot_dists
                                .iter()
                                .zip(qp)
                                .any(|(&pd, &q)| (q - pd).abs() > radius + slack(q + pd));
                            if excluded {
                                continue;
                            }
                        }
                        if let Some(dpq) = parent_q {
                            if (dpq - g.parent_dist).abs() > radius + slack(dpq + g.parent_dist) {
                                continue;
                            }
                        }
                        if self.dist(&query.descriptor, &g.object.descriptor, &mut dc) <= radius {
                            ids.push(g.object.id);
                        }
                    }
                }
            }
        }
        ids.sort_unstable();
        Ok(RangeResult {
            ids,
            stats: QueryStats {
                distance_computations: dc.count(),
                node_reads: io.reads(),
                ..Default::default()
            },
        })
    }

    /// Best-first kNN query using parent and basic filtering only.
    pub fn knn_query(&self, query: &MetricObject, k: usize) -> Result<KnnResult, TreeError> {
        self.knn_search(query, k, false)
    }

    pub(crate) fn knn_search(
        &self,
        query: &MetricObject,
        k: usize,
        use_pivots: bool,
    ) -> Result<KnnResult, TreeError> {
        self.kind.check(&query.descriptor)?;
        let truncated = k > self.len;
        let k = k.min(self.len);
        let mut dc = DistanceCounter::new();
        let mut io = IoCounter::new();
        let mut stats = QueryStats::default();
        let query_pivots: Vec<f64> = if use_pivots {
            self.pivots
                .objects
                .iter()
                .map(|p| self.dist(&query.descriptor, &p.descriptor, &mut dc))
                .collect()
        } else {
            Vec::new()
        };

        // best k so far as a max-heap on (distance, id)
        let mut best: BinaryHeap<(Dist, ObjectId)> = BinaryHeap::new();
        let bound = |best: &BinaryHeap<(Dist, ObjectId)>| {
            if best.len() < k {
                f64::INFINITY
            } else {
                best.peek().map_or(f64::INFINITY, |b| b.0 .0)
            }
        };
        let mut queue: BinaryHeap<Reverse<(Dist, NodeId, Dist)>> = BinaryHeap::new();
        if k > 0 {
            queue.push(Reverse((Dist(0.0), self.root, Dist(f64::NAN))));
            stats.heap_pushes += 1;
            stats.max_heap_size = 1;
        }
        while let Some(Reverse((Dist(lower), id, Dist(parent_q)))) = queue.pop() {
            stats.heap_pops += 1;
            if lower > bound(&best) {
                break;
            }
            let has_parent = !parent_q.is_nan();
            match self.fetch_node(id, &mut io) {
                Node::Inner(entries) => {
                    for e in entries {
                        let r = bound(&best);
                        let piv_lb = ring_lower_bound(&e.rings, &query_pivots);
                        if piv_lb > r {
                            continue;
                        }
                        let margin = slack(parent_q + e.parent_dist + e.radius);
                        if has_parent && (parent_q - e.parent_dist).abs() - e.radius - margin > r {
                            continue;
                        }
                        let d = self.dist(&query.descriptor, &e.center.descriptor, &mut dc);
                        let lower = (d - e.radius - slack(d + e.radius)).max(piv_lb).max(0.0);
                        if lower <= r {
                            queue.push(Reverse((Dist(lower), e.child, Dist(d))));
                            stats.heap_pushes += 1;
                            stats.max_heap_size = stats.max_heap_size.max(queue.len() as u64);
                        }
                    }
                }
                Node::Leaf(entries) => {
                    for g in entries {
                        let r = bound(&best);
                        let piv_lb = g
                            .pivot_dists
                            .iter()
                            .zip(&query_pivots)
                            .map(|(pd, q)| (pd - q).abs() - slack(pd + q))
                            .fold(0.0, f64::max);
                        if piv_lb > r {
                            continue;
                        }
                        if has_parent
                            && (parent_q - g.parent_dist).abs() - slack(parent_q + g.parent_dist)
                                > r
                        {
                            continue;
                        }
                        let d = self.dist(&query.descriptor, &g.object.descriptor, &mut dc);
                        let cand = (Dist(d), g.object.id);
                        if best.len() < k {
                            best.push(cand);
                        } else if best.peek().is_some_and(|worst| cand < *worst) {
                            best.pop();
                            best.push(cand);
                        }
                    }
                }
            }
        }
        let mut neighbors: Vec<(ObjectId, f64)> =
            best.into_iter().map(|(d, id)| (id, d.0)).collect();
        neighbors.sort_by(|a, b| Dist(a.1).cmp(&Dist(b.1)).then(a.0.cmp(&b.0)));
        stats.distance_computations = dc.count();
        stats.node_reads = io.reads();
        Ok(KnnResult {
            neighbors,
            truncated,
            stats,
        })
    }

    /// Structural audit: nesting condition, exact to-parent distances, balance,
    /// minimum utilization and ring tightness. Returns human-readable violations.
    pub fn audit(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let mut scratch = DistanceCounter::new();
        let mut leaf_depth: Option<usize> = None;
        let min_fill = self.min_fill();
        // (node, depth, center of the parent routing entry)
        let mut stack: Vec<(NodeId, usize, Option<&MetricObject>)> = vec![(self.root, 1, None)];
        while let Some((id, depth, parent)) = stack.pop() {
            let node = &self.nodes[id as usize];
            if id != self.root && node.len() < min_fill {
                violations.push(format!(
                    "node {id} holds {} < {min_fill} entries",
                    node.len()
                ));
            }
            if node.len() > self.capacity {
                violations.push(format!("node {id} overflows with {} entries", node.len()));
            }
            match node {
                Node::Leaf(entries) => {
                    match leaf_depth {
                        None => leaf_depth = Some(depth),
                        Some(h) if h != depth => {
                            violations.push(format!("leaf {id} at depth {depth}, expected {h}"))
                        }
                        _ => {}
                    }
                    for g in entries {
                        let expected = parent.map_or(0.0, |p| {
                            self.dist(&g.object.descriptor, &p.descriptor, &mut scratch)
                        });
                        if g.parent_dist != expected {
                            violations.push(format!(
                                "object {} stores to-parent {} but the distance is {expected}",
                                g.object.id, g.parent_dist
                            ));
                        }
                        if g.pivot_dists.len() != self.pivots.leaf() {
                            violations.push(format!("object {} has a short PD array", g.object.id));
                        }
                        for (t, (&pd, p)) in
                            g.pivot_dists.iter().zip(&self.pivots.objects).enumerate()
                        {
                            let exact =
                                self.dist(&g.object.descriptor, &p.descriptor, &mut scratch);
                            if pd != exact {
                                violations.push(format!("object {} PD[{t}] is stale", g.object.id));
                            }
                        }
                    }
                }
                Node::Inner(entries) => {
                    for e in entries {
                        let expected = parent.map_or(0.0, |p| {
                            self.dist(&e.center.descriptor, &p.descriptor, &mut scratch)
                        });
                        if e.parent_dist != expected {
                            violations.push(format!(
                                "routing entry {} stores to-parent {} but the distance is {expected}",
                                e.center.id, e.parent_dist
                            ));
                        }
                        let below = self.subtree_objects(e.child);
                        for g in &below {
                            let d =
                                self.dist(&e.center.descriptor, &g.object.descriptor, &mut scratch);
                            if d > e.radius + AUDIT_TOLERANCE {
                                violations.push(format!(
                                    "object {} at {d} escapes routing entry {} of radius {}",
                                    g.object.id, e.center.id, e.radius
                                ));
                            }
                        }
                        if e.rings.len() != self.pivots.inner {
                            violations.push(format!(
                                "routing entry {} has a short HR array",
                                e.center.id
                            ));
                        }
                        for (t, ring) in e.rings.iter().enumerate() {
                            let lo = below
                                .iter()
                                .map(|g| g.pivot_dists[t])
                                .fold(f64::INFINITY, f64::min);
                            let hi = below.iter().map(|g| g.pivot_dists[t]).fold(0.0, f64::max);
                            if ring.min != lo || ring.max != hi {
                                violations.push(format!(
                                    "routing entry {} ring {t} = <{}, {}> but subtree spans <{lo}, {hi}>",
                                    e.center.id, ring.min, ring.max
                                ));
                            }
                        }
                        stack.push((e.child, depth + 1, Some(&e.center)));
                    }
                }
            }
        }
        violations
    }
}

/// Generalized-hyperplane assignment of members to the two promoted entries
/// (`true` = second), then topped up to `min_fill` from the larger side by
/// taking the members closest to the deficient center.
fn partition(row_a: &[f64], row_b: &[f64], a: usize, b: usize, min_fill: usize) -> Vec<bool> {
    let n = row_a.len();
    let mut side: Vec<bool> = (0..n)
        .map(|j| {
            if j == a {
                false
            } else if j == b {
                true
            } else {
                row_b[j] < row_a[j]
            }
        })
        .collect();
    let count_b = side.iter().filter(|&&s| s).count();
    let (deficient_is_b, deficit) = if count_b < min_fill {
        (true, min_fill - count_b)
    } else if n - count_b < min_fill {
        (false, min_fill - (n - count_b))
    } else {
        return side;
    };
    let (row, keep) = if deficient_is_b {
        (row_b, a)
    } else {
        (row_a, b)
    };
    let mut movable: Vec<usize> = (0..n)
        .filter(|&j| side[j] != deficient_is_b && j != keep)
        .collect();
    movable.sort_by(|&x, &y| Dist(row[x]).cmp(&Dist(row[y])).then(x.cmp(&y)));
    for &j in movable.iter().take(deficit) {
        side[j] = deficient_is_b;
    }
    side
}

fn leaf_rings(entries: &[GroundEntry], count: usize) -> Vec<Ring> {
    (0..count)
        .map(|t| {
            let mut ring = Ring::point(entries[0].pivot_dists[t]);
            for g in &entries[1..] {
                ring.extend(g.pivot_dists[t]);
            }
            ring
        })
        .collect()
}

fn inner_rings(entries: &[RoutingEntry], count: usize) -> Vec<Ring> {
    (0..count)
        .map(|t| {
            let mut ring = entries[0].rings[t];
            for e in &entries[1..] {
                ring.union(&e.rings[t]);
            }
            ring
        })
        .collect()
}

/// L-infinity check of the query ball against an entry's rings.
pub(crate) fn rings_exclude(rings: &[Ring], query_pivots: &[f64], radius: f64) -> bool {
    rings.iter().zip(query_pivots).any(|(ring, &q)| {
        let margin = slack(q + radius + ring.max);
        q + radius + margin < ring.min || q - radius - margin > ring.max
    })
}

/// Pivot lower bound on the distance from the query to anything inside the rings.
pub(crate) fn ring_lower_bound(rings: &[Ring], query_pivots: &[f64]) -> f64 {
    rings
        .iter()
        .zip(query_pivots)
        .map(|(ring, &q)| (q - ring.max).max(ring.min - q) - slack(q + ring.max))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_polygons, generate_vectors};

    fn scan_range(ds: &Dataset, q: &MetricObject, r: f64) -> Vec<ObjectId> {
        let mut c = DistanceCounter::new();
        ds.objects
            .iter()
            .filter(|o| ds.kind.distance(&q.descriptor, &o.descriptor, &mut c) <= r)
            .map(|o| o.id)
            .collect()
    }

    fn scan_knn(ds: &Dataset, q: &MetricObject, k: usize) -> Vec<(ObjectId, f64)> {
        let mut c = DistanceCounter::new();
        let mut all: Vec<(ObjectId, f64)> = ds
            .objects
            .iter()
            .map(|o| (o.id, ds.kind.distance(&q.descriptor, &o.descriptor, &mut c)))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn single_object_tree() {
        let ds = generate_vectors(1, 3, 1, 0.1, 1).unwrap();
        let (t, _) = MetricTree::build(&ds, 4).unwrap();
        assert_eq!(t.height(), 1);
        assert_eq!(t.node_count(), 1);
        let Node::Leaf(e) = t.node(t.root()) else {
            panic!()
        };
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].parent_dist, 0.0);
    }

    #[test]
    fn no_split_below_capacity() {
        let ds = generate_vectors(20, 3, 2, 0.1, 1).unwrap();
        let (t, c) = MetricTree::build(&ds, 20).unwrap();
        assert_eq!(t.node_count(), 1);
        assert_eq!(c.count(), 0);
        let Node::Leaf(e) = t.node(t.root()) else {
            panic!()
        };
        assert!(e.iter().all(|g| g.parent_dist == 0.0));
    }

    #[test]
    fn build_errors() {
        let ds = generate_vectors(5, 3, 1, 0.1, 1).unwrap();
        assert!(matches!(
            MetricTree::build(&ds, 3),
            Err(TreeError::CapacityTooSmall(3))
        ));
        assert!(matches!(
            MetricTree::build(&ds.prefix(0), 4),
            Err(TreeError::EmptyDataset)
        ));
    }

    #[test]
    fn built_trees_pass_the_audit() {
        for (seed, cap) in [(1u64, 4usize), (2, 5), (3, 8), (4, 20)] {
            let ds = generate_vectors(600, 4, 5, 0.05, seed).unwrap();
            let (t, _) = MetricTree::build(&ds, cap).unwrap();
            assert_eq!(t.audit(), Vec::<String>::new());
            assert_eq!(t.subtree_objects(t.root()).len(), 600);
            assert!(t.height() > 1);
        }
        let ds = generate_polygons(400, 5).unwrap();
        let (t, _) = MetricTree::build(&ds, 6).unwrap();
        assert_eq!(t.audit(), Vec::<String>::new());
    }

    #[test]
    fn partition_respects_min_fill() {
        // every member is closer to a, so b must be topped up with the members nearest to it
        let row_a = [0.0, 5.0, 1.0, 1.0, 1.0, 1.0];
        let row_b = [5.0, 0.0, 4.0, 3.0, 4.5, 2.0];
        let side = partition(&row_a, &row_b, 0, 1, 3);
        assert_eq!(side, vec![false, true, false, true, false, true]);
    }

    #[test]
    fn fetch_counts_every_read() {
        let ds = generate_vectors(300, 2, 3, 0.05, 9).unwrap();
        let (t, _) = MetricTree::build(&ds, 5).unwrap();
        let mut io = IoCounter::new();
        t.fetch_node(t.root(), &mut io);
        t.fetch_node(t.root(), &mut io);
        assert_eq!(io.reads(), 2);
        let mut io = IoCounter::new();
        let mut stack = vec![t.root()];
        while let Some(id) = stack.pop() {
            if let Node::Inner(e) = t.fetch_node(id, &mut io) {
                stack.extend(e.iter().map(|e| e.child));
            }
        }
        assert_eq!(io.reads() as usize, t.node_count());
    }

    #[test]
    fn range_matches_scan() {
        let ds = generate_vectors(1000, 5, 8, 0.08, 13).unwrap();
        let (t, _) = MetricTree::build(&ds, 10).unwrap();
        let qs = crate::dataset::GeneratorSpec::Clustered {
            dim: 5,
            clusters: 8,
            spread: 0.08,
        }
        .sample_like(30, 13, 77)
        .unwrap();
        for (i, q) in qs.iter().enumerate() {
            let r = 0.02 * i as f64;
            let res = t.range_query(q, r).unwrap();
            assert_eq!(res.ids, scan_range(&ds, q, r));
            assert!(res.stats.distance_computations <= ds.len() as u64 + t.node_count() as u64);
            assert!(res.stats.node_reads as usize <= t.node_count());
        }
        let all = t.range_query(&qs[0], f64::MAX).unwrap();
        assert_eq!(all.ids.len(), 1000);
        let own = t.range_query(&ds.objects[17], 0.0).unwrap();
        assert!(own.ids.contains(&17));
    }

    #[test]
    fn knn_matches_scan() {
        let ds = generate_polygons(700, 21).unwrap();
        let (t, _) = MetricTree::build(&ds, 8).unwrap();
        let qs = crate::dataset::GeneratorSpec::Polygons
            .sample_like(20, 21, 5)
            .unwrap();
        for q in &qs {
            for k in [1, 10, 50] {
                let res = t.knn_query(q, k).unwrap();
                assert!(!res.truncated);
                assert_eq!(res.neighbors, scan_knn(&ds, q, k));
            }
        }
        let res = t.knn_query(&ds.objects[3], 1).unwrap();
        assert_eq!(res.neighbors, vec![(3, 0.0)]);
        let res = t.knn_query(&qs[0], 700).unwrap();
        assert_eq!(res.neighbors, scan_knn(&ds, &qs[0], 700));
        let res = t.knn_query(&qs[0], 1000).unwrap();
        assert!(res.truncated);
        assert_eq!(res.neighbors.len(), 700);
    }

    #[test]
    fn knn_ties_prefer_smaller_ids() {
        let ds = generate_vectors(30, 2, 1, 0.0, 4).unwrap();
        let (t, _) = MetricTree::build(&ds, 4).unwrap();
        let res = t.knn_query(&ds.objects[0], 5).unwrap();
        assert_eq!(
            res.neighbors.iter().map(|n| n.0).collect::<Vec<_>>(),
            vec![0, 1, 2, 3, 4]
        );
    }

    #[test]
    fn query_kind_is_checked() {
        let ds = generate_vectors(10, 2, 1, 0.1, 4).unwrap();
        let (t, _) = MetricTree::build(&ds, 4).unwrap();
        let bad = MetricObject::vector(0, vec![0.0; 3]);
        assert!(t.range_query(&bad, 1.0).is_err());
        assert!(t.knn_query(&bad, 1).is_err());
    }

    #[test]
    fn parent_filtering_never_prunes_an_overlapping_ball() {
        let mut pruned = 0;
        for seed in 0..6u64 {
            let ds = generate_polygons(250, seed).unwrap();
            let (t, _) = MetricTree::build(&ds, 5).unwrap();
            let qs = crate::dataset::GeneratorSpec::Polygons
                .sample_like(5, seed, 90 + seed)
                .unwrap();
            let mut c = DistanceCounter::new();
            for (i, q) in qs.iter().enumerate() {
                let r = 0.03 * i as f64;
                let mut stack = vec![(t.root(), None::<f64>)];
                while let Some((id, parent_q)) = stack.pop() {
                    let children: Vec<(&MetricObject, f64, f64, Option<NodeId>)> = match t.node(id)
                    {
                        Node::Inner(e) => e
                            .iter()
                            .map(|e| (&e.center, e.parent_dist, e.radius, Some(e.child)))
                            .collect(),
                        Node::Leaf(e) => e
                            .iter()
                            .map(|g| (&g.object, g.parent_dist, 0.0, None))
                            .collect(),
                    };
                    for (obj, to_parent, cover, child) in children {
                        let d = ds.kind.distance(&q.descriptor, &obj.descriptor, &mut c);
                        if let Some(dpq) = parent_q {
                            if (dpq - to_parent).abs() > r + cover {
                                pruned += 1;
                                assert!(d > r + cover, "unsound prune: {d} <= {}", r + cover);
                            }
                        }
                        if let Some(child) = child {
                            stack.push((child, Some(d)));
                        }
                    }
                }
            }
        }
        assert!(pruned > 0);
    }
}
