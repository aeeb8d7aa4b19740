//! Metric skyline query over an M-tree or PM-tree.
//!
//! Best-first traversal with a priority heap ordered by the L1 norm of each
//! item's MDDR minimal corner. Four variants are supported:
//!
//! | variant            | Piv-MDDR | pivot skyline filter | deferred B-MDDR |
//! |--------------------|----------|----------------------|-----------------|
//! | `M-tree`           |          |                      |                 |
//! | `PM-tree`          | yes      |                      |                 |
//! | `PM-tree+PSF`      | yes      | yes                  |                 |
//! | `PM-tree+PSF+DEF`  | yes      | yes                  | yes             |
//!
//! Every child MDDR is also intersected with the MDDR of the heap item it was
//! expanded from; that bound is free and keeps popped keys non-decreasing.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::metric::{DistanceCounter, MetricError, MetricObject, ObjectId};
use crate::mtree::{
    slack, GroundEntry, MetricTree, Node, NodeId, Ring, RoutingEntry, AUDIT_TOLERANCE,
};
use crate::skyline::{dominates_unchecked, l1_norm, l1_precheck, sort_first_skyline, Mddr, QPoint};
use crate::stats::{IoCounter, QueryStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MsqError {
    #[error("at least one query example is required")]
    NoQueries,
    #[error("query example {index}: {source}")]
    Query { index: usize, source: MetricError },
    #[error("unknown variant `{0}` (expected M-tree, PM-tree, PM-tree+PSF or PM-tree+PSF+DEF)")]
    UnknownVariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    MTree,
    PmTree,
    PmTreePsf,
    PmTreePsfDef,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::MTree,
        Variant::PmTree,
        Variant::PmTreePsf,
        Variant::PmTreePsfDef,
    ];

    pub fn uses_pivots(self) -> bool {
        self != Variant::MTree
    }

    pub fn pivot_skyline_filtering(self) -> bool {
        matches!(self, Variant::PmTreePsf | Variant::PmTreePsfDef)
    }

    pub fn deferred(self) -> bool {
        self == Variant::PmTreePsfDef
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::MTree => "M-tree",
            Variant::PmTree => "PM-tree",
            Variant::PmTreePsf => "PM-tree+PSF",
            Variant::PmTreePsfDef => "PM-tree+PSF+DEF",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = MsqError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        Ok(match norm.as_str() {
            "m-tree" | "mtree" => Variant::MTree,
            "pm-tree" | "pmtree" => Variant::PmTree,
            "pm-tree+psf" | "pmtree+psf" | "psf" => Variant::PmTreePsf,
            "pm-tree+psf+def" | "pmtree+psf+def" | "def" => Variant::PmTreePsfDef,
            _ => return Err(MsqError::UnknownVariant(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MsqOptions {
    pub variant: Variant,
    /// Stop after this many skyline objects (partial skyline).
    pub limit: Option<usize>,
    /// Record the key of every popped heap item.
    pub trace: bool,
}

impl MsqOptions {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            limit: None,
            trace: false,
        }
    }

    pub fn with_limit(mut self, limit: usize) -> Self {
        self.limit = Some(limit);
        self
    }

    pub fn traced(mut self) -> Self {
        self.trace = true;
        self
    }
}

/// One emitted skyline object with the cumulative costs at emission time.
#[derive(Debug, Clone, PartialEq)]
pub struct SkylineRecord {
    pub id: ObjectId,
    pub point: QPoint,
    pub stats: QueryStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsqOutput {
    /// Skyline objects in emission order (non-decreasing L1 norm).
    pub skyline: Vec<SkylineRecord>,
    pub stats: QueryStats,
    /// Pivot skyline members still undominated when the run ended.
    pub remaining_pivot_skyline: Vec<ObjectId>,
    /// Keys of popped heap items, when tracing was requested.
    pub popped_keys: Vec<f64>,
}

impl MsqOutput {
    pub fn ids(&self) -> Vec<ObjectId> {
        self.skyline.iter().map(|r| r.id).collect()
    }

    pub fn sorted_ids(&self) -> Vec<ObjectId> {
        let mut ids = self.ids();
        ids.sort_unstable();
        ids
    }
}

/// Par-MDDR of an entry with covering radius `radius` (0 for ground entries)
/// and to-parent distance `parent_dist`, from the query distances of the
/// parent's center. Costs no distance computation.
///
/// Like every derived bound here, it is widened by the relative rounding
/// margin [`crate::mtree::BOUND_SLACK`].
pub fn par_mddr(parent_query_dists: &[f64], parent_dist: f64, radius: f64) -> Mddr {
    let lower = parent_query_dists
        .iter()
        .map(|&dqp| {
            let lb = (dqp - (parent_dist + radius)).max((parent_dist - radius) - dqp);
            (lb - slack(dqp + parent_dist + radius)).max(0.0)
        })
        .collect();
    let upper = parent_query_dists
        .iter()
        .map(|&dqp| {
            let ub = dqp + parent_dist + radius;
            ub + slack(ub)
        })
        .collect();
    Mddr::new(lower, upper)
}

/// B-MDDR from the entry's own query distances; a point for ground entries.
pub fn b_mddr(query_dists: &[f64], radius: f64) -> Mddr {
    if radius == 0.0 {
        return Mddr::point(query_dists);
    }
    Mddr::new(
        query_dists
            .iter()
            .map(|&d| (d - radius - slack(d + radius)).max(0.0))
            .collect(),
        query_dists
            .iter()
            .map(|&d| d + radius + slack(d + radius))
            .collect(),
    )
}

fn piv_mddr_from<I>(intervals: I, q2p: &[Vec<f64>], m: usize) -> Mddr
where
    I: Iterator<Item = (f64, f64)> + Clone,
{
    let mut lower = vec![0.0f64; m];
    let mut upper = vec![f64::INFINITY; m];
    for (i, (lo, hi)) in lower.iter_mut().zip(upper.iter_mut()).enumerate() {
        for ((ring_min, ring_max), row) in intervals.clone().zip(q2p) {
            let dpq = row[i];
            let margin = slack(dpq + ring_max);
            *lo = lo.max(dpq - ring_max - margin).max(ring_min - dpq - margin);
            *hi = hi.min(dpq + ring_max + margin);
        }
    }
    Mddr::new(lower, upper)
}

/// Piv-MDDR of a routing entry from its rings and the query-to-pivot matrix
/// (`q2p[j][i]` = distance from pivot `j` to query example `i`).
pub fn piv_mddr(rings: &[Ring], q2p: &[Vec<f64>], m: usize) -> Mddr {
    piv_mddr_from(rings.iter().map(|r| (r.min, r.max)), q2p, m)
}

/// Piv-MDDR of a ground entry: its pivot distances act as zero-width rings.
pub fn piv_mddr_ground(pivot_dists: &[f64], q2p: &[Vec<f64>], m: usize) -> Mddr {
    piv_mddr_from(pivot_dists.iter().map(|&d| (d, d)), q2p, m)
}

/// Pivot skyline: the skyline of the pivots' own query-space points.
/// Returns `(pivot index, point)` pairs; costs no distance computation.
pub fn compute_pivot_skyline(q2p: &[Vec<f64>]) -> Vec<(usize, QPoint)> {
    let points: Vec<(ObjectId, QPoint)> = q2p
        .iter()
        .enumerate()
        .map(|(j, row)| (j as ObjectId, row.clone()))
        .collect();
    sort_first_skyline(&points)
        .into_iter()
        .map(|j| (j as usize, q2p[j as usize].clone()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Equipped {
    /// Own B-MDDR computed (ranks first among equal keys).
    Basic,
    /// Deferred: only Piv-MDDR ∩ Par-MDDR known.
    PivPar,
}

#[derive(Debug, Clone, Copy)]
enum EntryRef<'a> {
    Routing(&'a RoutingEntry),
    Ground(&'a GroundEntry),
}

impl EntryRef<'_> {
    fn radius(&self) -> f64 {
        match self {
            EntryRef::Routing(e) => e.radius,
            EntryRef::Ground(_) => 0.0,
        }
    }

    fn parent_dist(&self) -> f64 {
        match self {
            EntryRef::Routing(e) => e.parent_dist,
            EntryRef::Ground(g) => g.parent_dist,
        }
    }

    fn object(&self) -> &MetricObject {
        match self {
            EntryRef::Routing(e) => &e.center,
            EntryRef::Ground(g) => &g.object,
        }
    }
}

#[derive(Debug)]
struct HeapItem {
    key: f64,
    equipped: Equipped,
    node: NodeId,
    slot: u32,
    mddr: Mddr,
    /// Distances from the query examples to the entry's center/object; known
    /// once the item carries its B-MDDR.
    query_dists: Option<Vec<f64>>,
}

impl HeapItem {
    fn rank(&self) -> (f64, Equipped, NodeId, u32) {
        (self.key, self.equipped, self.node, self.slot)
    }
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    // reversed: BinaryHeap is a max-heap and the smallest rank must surface first
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.rank(), other.rank());
        b.0.total_cmp(&a.0)
            .then(b.1.cmp(&a.1))
            .then(b.2.cmp(&a.2))
            .then(b.3.cmp(&a.3))
    }
}

struct QueryRun<'a> {
    tree: &'a MetricTree,
    queries: &'a [MetricObject],
    options: MsqOptions,
    q2p: Vec<Vec<f64>>,
    pivot_skyline: Vec<(ObjectId, QPoint, f64)>,
    skyline: Vec<SkylineRecord>,
    skyline_l1: Vec<f64>,
    heap: BinaryHeap<HeapItem>,
    dc: DistanceCounter,
    io: IoCounter,
    stats: QueryStats,
    popped_keys: Vec<f64>,
}

impl<'a> QueryRun<'a> {
    fn entry(&self, node: NodeId, slot: u32) -> EntryRef<'a> {
        match self.tree.node(node) {
            Node::Inner(e) => EntryRef::Routing(&e[slot as usize]),
            Node::Leaf(e) => EntryRef::Ground(&e[slot as usize]),
        }
    }

    fn query_dists(&mut self, obj: &MetricObject) -> Vec<f64> {
        let tree = self.tree;
        self.queries
            .iter()
            .map(|q| tree.dist(&q.descriptor, &obj.descriptor, &mut self.dc))
            .collect()
    }

    fn piv(&self, entry: EntryRef<'_>) -> Mddr {
        let m = self.queries.len();
        match entry {
            EntryRef::Routing(e) => piv_mddr(&e.rings, &self.q2p, m),
            EntryRef::Ground(g) => piv_mddr_ground(&g.pivot_dists, &self.q2p, m),
        }
    }

    /// True when `mddr` is dominated by a skyline object or, under PSF, by a
    /// remaining pivot skyline member.
    fn filter(&self, mddr: &Mddr) -> bool {
        let dominated =
            |p: &[f64], p_l1: f64| l1_precheck(p_l1, mddr) && dominates_unchecked(p, &mddr.lower);
        if self
            .skyline
            .iter()
            .zip(&self.skyline_l1)
            .any(|(s, &l1)| dominated(&s.point, l1))
        {
            return true;
        }
        self.options.variant.pivot_skyline_filtering()
            && self
                .pivot_skyline
                .iter()
                .any(|(_, p, l1)| dominated(p, *l1))
    }

    fn push(&mut self, item: HeapItem) {
        self.heap.push(item);
        self.stats.heap_pushes += 1;
        self.stats.max_heap_size = self.stats.max_heap_size.max(self.heap.len() as u64);
    }

    fn snapshot(&self) -> QueryStats {
        QueryStats {
            distance_computations: self.dc.count(),
            node_reads: self.io.reads(),
            ..self.stats
        }
    }

    /// Equips an entry with its B-MDDR (intersected with `prior` for routing
    /// entries; ground entries collapse to their exact point).
    fn equip_basic(&mut self, entry: EntryRef<'_>, prior: Option<&Mddr>) -> (Mddr, Vec<f64>) {
        let dists = self.query_dists(entry.object());
        let mut mddr = b_mddr(&dists, entry.radius());
        if let (EntryRef::Routing(_), Some(prior)) = (entry, prior) {
            mddr.intersect_in_place(prior);
        }
        (mddr, dists)
    }

    fn make_item(
        node: NodeId,
        slot: u32,
        equipped: Equipped,
        mddr: Mddr,
        query_dists: Option<Vec<f64>>,
    ) -> HeapItem {
        HeapItem {
            key: mddr.l1_min_corner(),
            equipped,
            node,
            slot,
            mddr,
            query_dists,
        }
    }

    fn init(&mut self) {
        let variant = self.options.variant;
        if variant.uses_pivots() {
            let tree = self.tree;
            self.q2p = tree
                .pivots()
                .objects
                .iter()
                .map(|p| {
                    self.queries
                        .iter()
                        .map(|q| tree.dist(&p.descriptor, &q.descriptor, &mut self.dc))
                        .collect()
                })
                .collect();
            if variant.pivot_skyline_filtering() {
                self.pivot_skyline = compute_pivot_skyline(&self.q2p)
                    .into_iter()
                    .map(|(j, p)| {
                        let l1 = l1_norm(&p);
                        (tree.pivots().objects[j].id, p, l1)
                    })
                    .collect();
            }
        }
        let root = self.tree.root();
        let count = self.tree.fetch_node(root, &mut self.io).len();
        for slot in 0..count as u32 {
            let entry = self.entry(root, slot);
            let (mut mddr, dists) = self.equip_basic(entry, None);
            if variant.uses_pivots() {
                if let EntryRef::Routing(_) = entry {
                    mddr.intersect_in_place(&self.piv(entry));
                }
            }
            self.push(Self::make_item(
                root,
                slot,
                Equipped::Basic,
                mddr,
                Some(dists),
            ));
        }
    }

    /// Expands a popped routing item (non-deferred insertion of its children).
    fn expand(&mut self, parent: &HeapItem) {
        let EntryRef::Routing(routing) = self.entry(parent.node, parent.slot) else {
            unreachable!("only routing entries are expanded")
        };
        let parent_dists = parent
            .query_dists
            .as_ref()
            .expect("expanded items carry B-MDDRs");
        let child = routing.child;
        let count = self.tree.fetch_node(child, &mut self.io).len();
        let variant = self.options.variant;
        for slot in 0..count as u32 {
            let entry = self.entry(child, slot);
            let mut mddr = par_mddr(parent_dists, entry.parent_dist(), entry.radius());
            mddr.intersect_in_place(&parent.mddr);
            if variant.uses_pivots() {
                mddr.intersect_in_place(&self.piv(entry));
            }
            if self.filter(&mddr) {
                continue;
            }
            if variant.deferred() {
                self.push(Self::make_item(child, slot, Equipped::PivPar, mddr, None));
                continue;
            }
            let (mddr, dists) = self.equip_basic(entry, Some(&mddr));
            if self.filter(&mddr) {
                continue;
            }
            self.push(Self::make_item(
                child,
                slot,
                Equipped::Basic,
                mddr,
                Some(dists),
            ));
        }
    }

    /// A deferred item resurfaced: re-check, compute its B-MDDR, re-check, push back.
    fn resolve_deferred(&mut self, item: HeapItem) {
        if self.filter(&item.mddr) {
            return;
        }
        let entry = self.entry(item.node, item.slot);
        let (mddr, dists) = self.equip_basic(entry, Some(&item.mddr));
        if self.filter(&mddr) {
            return;
        }
        self.push(Self::make_item(
            item.node,
            item.slot,
            Equipped::Basic,
            mddr,
            Some(dists),
        ));
    }

    fn emit(&mut self, item: HeapItem) {
        let EntryRef::Ground(g) = self.entry(item.node, item.slot) else {
            unreachable!()
        };
        let point = item.mddr.lower;
        let id = g.object.id;
        if self.stats.distance_computations_at_first_skyline.is_none() {
            self.stats.distance_computations_at_first_skyline = Some(self.dc.count());
            self.stats.heap_ops_at_first_skyline = Some(self.stats.heap_ops());
        }
        let before = self.heap.len();
        self.heap
            .retain(|other| !dominates_unchecked(&point, &other.mddr.lower));
        self.stats.heap_removals += (before - self.heap.len()) as u64;
        self.pivot_skyline
            .retain(|(pid, p, _)| *pid != id && !dominates_unchecked(&point, p));
        self.skyline_l1.push(l1_norm(&point));
        let record = SkylineRecord {
            id,
            point,
            stats: self.snapshot(),
        };
        self.skyline.push(record);
    }

    fn run(mut self) -> MsqOutput {
        self.init();
        let limit = self.options.limit.unwrap_or(usize::MAX);
        while self.skyline.len() < limit {
            let Some(item) = self.heap.pop() else { break };
            self.stats.heap_pops += 1;
            if self.options.trace {
                self.popped_keys.push(item.key);
            }
            match (item.equipped, self.tree.node(item.node).is_leaf()) {
                (Equipped::PivPar, _) => self.resolve_deferred(item),
                (Equipped::Basic, true) => self.emit(item),
                (Equipped::Basic, false) => self.expand(&item),
            }
        }
        let stats = self.snapshot();
        MsqOutput {
            skyline: self.skyline,
            stats,
            remaining_pivot_skyline: self
                .pivot_skyline
                .into_iter()
                .map(|(id, _, _)| id)
                .collect(),
            popped_keys: self.popped_keys,
        }
    }
}

fn check_queries(tree: &MetricTree, queries: &[MetricObject]) -> Result<(), MsqError> {
    if queries.is_empty() {
        return Err(MsqError::NoQueries);
    }
    for (index, q) in queries.iter().enumerate() {
        tree.kind()
            .check(&q.descriptor)
            .map_err(|source| MsqError::Query { index, source })?;
    }
    Ok(())
}

/// Runs a metric skyline query for the query examples `queries`.
pub fn msq(
    tree: &MetricTree,
    queries: &[MetricObject],
    options: MsqOptions,
) -> Result<MsqOutput, MsqError> {
    check_queries(tree, queries)?;
    let run = QueryRun {
        tree,
        queries,
        options,
        q2p: Vec::new(),
        pivot_skyline: Vec::new(),
        skyline: Vec::new(),
        skyline_l1: Vec::new(),
        heap: BinaryHeap::new(),
        dc: DistanceCounter::new(),
        io: IoCounter::new(),
        stats: QueryStats::default(),
        popped_keys: Vec::new(),
    };
    Ok(run.run())
}

/// Result of [`audit_bounds`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundAudit {
    pub entries_checked: usize,
    pub violations: Vec<String>,
}

/// Exhaustively checks, for every entry of the tree, that the query-space
/// points of all objects below it lie inside its Par-, B- and Piv-MDDR
/// (tolerance 1e-9), and that every ring covers the pivot distances of the
/// objects below it. Distances are evaluated directly, independent of any run.
pub fn audit_bounds(tree: &MetricTree, queries: &[MetricObject]) -> Result<BoundAudit, MsqError> {
    check_queries(tree, queries)?;
    let m = queries.len();
    let mut dc = DistanceCounter::new();
    let q2p: Vec<Vec<f64>> = tree
        .pivots()
        .objects
        .iter()
        .map(|p| {
            queries
                .iter()
                .map(|q| tree.dist(&p.descriptor, &q.descriptor, &mut dc))
                .collect()
        })
        .collect();
    let qpoint = |o: &MetricObject, dc: &mut DistanceCounter| -> QPoint {
        queries
            .iter()
            .map(|q| tree.dist(&q.descriptor, &o.descriptor, dc))
            .collect()
    };
    let mut audit = BoundAudit::default();
    let check = |label: &str,
                 id: ObjectId,
                 mddr: &Mddr,
                 points: &[(ObjectId, QPoint)],
                 audit: &mut BoundAudit| {
        for (oid, p) in points {
            if !mddr.contains(p, AUDIT_TOLERANCE) {
                audit.violations.push(format!(
                    "{label} of entry {id} misses object {oid}: {p:?} not in {:?}..{:?}",
                    mddr.lower, mddr.upper
                ));
            }
        }
    };
    // (node, query distances of the parent routing entry's center)
    let mut stack: Vec<(NodeId, Option<QPoint>)> = vec![(tree.root(), None)];
    while let Some((id, parent_q)) = stack.pop() {
        match tree.node(id) {
            Node::Inner(entries) => {
                for e in entries {
                    audit.entries_checked += 1;
                    let below: Vec<(ObjectId, QPoint)> = tree
                        .subtree_objects(e.child)
                        .into_iter()
                        .map(|g| (g.object.id, qpoint(&g.object, &mut dc)))
                        .collect();
                    let own = qpoint(&e.center, &mut dc);
                    if let Some(pq) = &parent_q {
                        check(
                            "Par-MDDR",
                            e.center.id,
                            &par_mddr(pq, e.parent_dist, e.radius),
                            &below,
                            &mut audit,
                        );
                    }
                    check(
                        "B-MDDR",
                        e.center.id,
                        &b_mddr(&own, e.radius),
                        &below,
                        &mut audit,
                    );
                    if !q2p.is_empty() {
                        check(
                            "Piv-MDDR",
                            e.center.id,
                            &piv_mddr(&e.rings, &q2p, m),
                            &below,
                            &mut audit,
                        );
                    }
                    for g in tree.subtree_objects(e.child) {
                        for (t, ring) in e.rings.iter().enumerate() {
                            let d = g.pivot_dists[t];
                            if d < ring.min - AUDIT_TOLERANCE || d > ring.max + AUDIT_TOLERANCE {
                                audit.violations.push(format!(
                                    "ring {t} of entry {} misses object {}",
                                    e.center.id, g.object.id
                                ));
                            }
                        }
                    }
                    stack.push((e.child, Some(own)));
                }
            }
            Node::Leaf(entries) => {
                for g in entries {
                    audit.entries_checked += 1;
                    let own = vec![(g.object.id, qpoint(&g.object, &mut dc))];
                    if let Some(pq) = &parent_q {
                        check(
                            "Par-MDDR",
                            g.object.id,
                            &par_mddr(pq, g.parent_dist, 0.0),
                            &own,
                            &mut audit,
                        );
                    }
                    check(
                        "B-MDDR",
                        g.object.id,
                        &b_mddr(&own[0].1, 0.0),
                        &own,
                        &mut audit,
                    );
                    if !q2p.is_empty() {
                        check(
                            "Piv-MDDR",
                            g.object.id,
                            &piv_mddr_ground(&g.pivot_dists, &q2p, m),
                            &own,
                            &mut audit,
                        );
                    }
                }
            }
        }
    }
    Ok(audit)
}
