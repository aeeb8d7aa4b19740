//! PM-tree extensions: global pivots, pivot selection and pivot-filtered queries.

use crate::dataset::Dataset;
use crate::metric::{DistanceCounter, MetricObject, ObjectId};
use crate::mtree::{KnnResult, MetricTree, RangeResult, TreeError};
use crate::rng::SeededRng;

/// Candidate sample size per requested pivot for the max-min selection.
const CANDIDATES_PER_PIVOT: usize = 50;

/// Global pivots of a PM-tree.
///
/// Ground entries store distances to all `objects.len()` pivots; routing
/// entries keep rings for the first `inner` pivots only.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PivotSet {
    pub objects: Vec<MetricObject>,
    pub inner: usize,
}

impl PivotSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Pivot set whose routing entries use all pivots.
    pub fn new(objects: Vec<MetricObject>) -> Self {
        let inner = objects.len();
        Self { objects, inner }
    }

    /// Keeps rings for `ceil(fraction * p)` inner pivots; `fraction` in `(0, 1]`.
    pub fn with_inner_fraction(
        objects: Vec<MetricObject>,
        fraction: f64,
    ) -> Result<Self, TreeError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(TreeError::Pivots(format!(
                "inner pivot fraction {fraction} must lie in (0, 1]"
            )));
        }
        let inner = (fraction * objects.len() as f64).ceil() as usize;
        Ok(Self { objects, inner })
    }

    /// Number of pivots (all of them are used by ground entries).
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Pivot count used by ground entries (PD arrays).
    pub fn leaf(&self) -> usize {
        self.objects.len()
    }

    pub fn ids(&self) -> Vec<ObjectId> {
        self.objects.iter().map(|o| o.id).collect()
    }
}

/// Greedy max-min pivot selection over a random candidate sample of size
/// `min(n, 50p)`. The first sampled candidate is the first pivot; each next
/// pivot maximizes its minimum distance to the pivots chosen so far (ties go
/// to the smaller id). Distances are charged to `counter`.
pub fn select_pivots(
    dataset: &Dataset,
    p: usize,
    seed: u64,
    counter: &mut DistanceCounter,
) -> Result<Vec<ObjectId>, TreeError> {
    let n = dataset.len();
    if p > n {
        return Err(TreeError::Pivots(format!(
            "cannot select {p} pivots from {n} objects"
        )));
    }
    if p == 0 {
        return Ok(Vec::new());
    }
    let mut rng = SeededRng::new(seed);
    let sample = rng.sample_indices(n, n.min(CANDIDATES_PER_PIVOT * p));
    let mut chosen = vec![sample[0]];
    let mut taken = vec![false; sample.len()];
    taken[0] = true;
    let mut min_dist = vec![f64::INFINITY; sample.len()];
    while chosen.len() < p {
        let last = &dataset.objects[*chosen.last().unwrap()].descriptor;
        let mut best: Option<(f64, usize, usize)> = None;
        for (slot, &idx) in sample.iter().enumerate() {
            if taken[slot] {
                continue;
            }
            let d = dataset
                .kind
                .distance(&dataset.objects[idx].descriptor, last, counter);
            min_dist[slot] = min_dist[slot].min(d);
            let better = match best {
                None => true,
                Some((bd, bidx, _)) => min_dist[slot] > bd || (min_dist[slot] == bd && idx < bidx),
            };
            if better {
                best = Some((min_dist[slot], idx, slot));
            }
        }
        let (_, idx, slot) = best.expect("sample holds at least p objects");
        taken[slot] = true;
        chosen.push(idx);
    }
    Ok(chosen.into_iter().map(|i| dataset.objects[i].id).collect())
}

impl MetricTree {
    /// Builds a PM-tree. Insertion and splitting are the M-tree's; every
    /// inserted object additionally pays one distance per pivot.
    pub fn build_pm(
        dataset: &Dataset,
        capacity: usize,
        pivots: PivotSet,
    ) -> Result<(Self, DistanceCounter), TreeError> {
        if pivots.inner > pivots.len() {
            return Err(TreeError::Pivots("more inner pivots than pivots".into()));
        }
        // pivot skyline filtering relies on every pivot being a database object
        for p in &pivots.objects {
            if dataset.get(p.id) != Some(p) {
                return Err(TreeError::Pivots(format!(
                    "pivot {} is not an object of the dataset",
                    p.id
                )));
            }
        }
        Self::build_with_pivots(dataset, capacity, pivots)
    }

    /// Selects `p` pivots, keeps rings for `ceil(inner_fraction * p)` of them
    /// and builds the PM-tree. The returned counter covers selection and build.
    pub fn build_pm_with_selection(
        dataset: &Dataset,
        capacity: usize,
        p: usize,
        inner_fraction: f64,
        seed: u64,
    ) -> Result<(Self, DistanceCounter), TreeError> {
        let mut selection = DistanceCounter::new();
        let ids = select_pivots(dataset, p, seed, &mut selection)?;
        let objects = ids
            .iter()
            .map(|&id| dataset.objects[id as usize].clone())
            .collect();
        let pivots = PivotSet::with_inner_fraction(objects, inner_fraction)?;
        let (tree, build) = Self::build_pm(dataset, capacity, pivots)?;
        selection.absorb(build);
        Ok((tree, selection))
    }

    /// Range query with pivot (L-infinity) filtering ahead of parent and basic
    /// filtering. The query-to-pivot distances are charged to the query.
    pub fn pm_range_query(
        &self,
        query: &MetricObject,
        radius: f64,
    ) -> Result<RangeResult, TreeError> {
        self.range_search(query, radius, true)
    }

    /// kNN query with pivot lower bounds.
    pub fn pm_knn_query(&self, query: &MetricObject, k: usize) -> Result<KnnResult, TreeError> {
        self.knn_search(query, k, true)
    }
}
