//! Query-space geometry: dominance, MDDRs and the Sort-First Skyline.
//!
//! A database object is mapped into the query space as the point of its
//! distances to the `m` query examples. An MDDR is an axis-aligned box there
//! that bounds the points of a whole subtree.

use std::cmp::Ordering;

use thiserror::Error;

use crate::dataset::Dataset;
use crate::metric::{DistanceCounter, MetricError, MetricObject, ObjectId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkylineError {
    #[error("query-space dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("at least one query example is required")]
    NoQueries,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// An object's image in the query space.
pub type QPoint = Vec<f64>;

/// `a` dominates `b`: no worse in every coordinate, strictly better in one.
pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool, SkylineError> {
    if a.len() != b.len() {
        return Err(SkylineError::DimensionMismatch(a.len(), b.len()));
    }
    Ok(dominates_unchecked(a, b))
}

#[inline]
pub(crate) fn dominates_unchecked(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        strict |= x < y;
    }
    strict
}

/// Sum of coordinates.
pub fn l1_norm(p: &[f64]) -> f64 {
    p.iter().sum()
}

/// Minimum dominating-dominated rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Mddr {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Mddr {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        debug_assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    /// Degenerate rectangle holding a single point.
    pub fn point(p: &[f64]) -> Self {
        Self {
            lower: p.to_vec(),
            upper: p.to_vec(),
        }
    }

    /// The whole non-negative orthant.
    pub fn unbounded(m: usize) -> Self {
        Self {
            lower: vec![0.0; m],
            upper: vec![f64::INFINITY; m],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// L1 norm of the minimal corner: a lower bound on the L1 norm of any point inside.
    pub fn l1_min_corner(&self) -> f64 {
        l1_norm(&self.lower)
    }

    pub fn l1_max_corner(&self) -> f64 {
        l1_norm(&self.upper)
    }

    pub fn contains(&self, p: &[f64], tolerance: f64) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&x, (&lo, &hi))| x >= lo - tolerance && x <= hi + tolerance)
    }

    /// Per-dimension intersection of two bounds on the same object set.
    ///
    /// Sound bounds cannot be disjoint; if rounding makes a lower bound exceed
    /// the upper one, the upper bound is raised to it and a warning is logged.
    pub fn intersect(&self, other: &Mddr) -> Result<Mddr, SkylineError> {
        if self.dim() != other.dim() {
            return Err(SkylineError::DimensionMismatch(self.dim(), other.dim()));
        }
        let mut out = self.clone();
        out.intersect_in_place(other);
        Ok(out)
    }

    pub(crate) fn intersect_in_place(&mut self, other: &Mddr) {
        for i in 0..self.lower.len() {
            let lo = self.lower[i].max(other.lower[i]);
            let mut hi = self.upper[i].min(other.upper[i]);
            if lo > hi {
                log::warn!("disjoint MDDR bounds in dimension {i}: [{lo}, {hi}], clamping");
                hi = lo;
            }
            self.lower[i] = lo;
            self.upper[i] = hi;
        }
    }
}

/// Every point inside `r` is dominated by `p`: `p` is no worse than the
/// minimal corner in every coordinate and strictly better in one.
pub fn mddr_dominated_by(p: &[f64], r: &Mddr) -> Result<bool, SkylineError> {
    if p.len() != r.dim() {
        return Err(SkylineError::DimensionMismatch(p.len(), r.dim()));
    }
    Ok(dominates_unchecked(p, &r.lower))
}

/// Coarser scalar pre-check: the L1 norm of `p` is below the L1 norm of the
/// minimal corner. Necessary for [`mddr_dominated_by`], so a `false` here
/// rules dominance out without the per-coordinate scan.
#[inline]
pub fn l1_precheck(p_l1: f64, r: &Mddr) -> bool {
    p_l1 < r.l1_min_corner()
}

fn l1_order(a: &(ObjectId, QPoint), b: &(ObjectId, QPoint)) -> Ordering {
    l1_norm(&a.1)
        .total_cmp(&l1_norm(&b.1))
        .then_with(|| {
            a.1.iter()
                .zip(&b.1)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then(a.0.cmp(&b.0))
}

/// Sort-First Skyline: one pass over the points in ascending L1 order,
/// keeping those not dominated by an already kept point. Returns ids in that order.
pub fn sort_first_skyline(points: &[(ObjectId, QPoint)]) -> Vec<ObjectId> {
    let mut sorted: Vec<&(ObjectId, QPoint)> = points.iter().collect();
    sorted.sort_by(|a, b| l1_order(a, b));
    let mut skyline: Vec<&(ObjectId, QPoint)> = Vec::new();
    for cand in sorted {
        if !skyline.iter().any(|s| dominates_unchecked(&s.1, &cand.1)) {
            skyline.push(cand);
        }
    }
    skyline.into_iter().map(|s| s.0).collect()
}

/// O(n²) pairwise-dominance skyline; ids in input order.
pub fn pairwise_skyline(points: &[(ObjectId, QPoint)]) -> Vec<ObjectId> {
    points
        .iter()
        .filter(|(_, p)| !points.iter().any(|(_, q)| dominates_unchecked(q, p)))
        .map(|(id, _)| *id)
        .collect()
}

/// Maps every object into the query space (n·m distance computations).
pub fn query_space_points(
    dataset: &Dataset,
    queries: &[MetricObject],
    counter: &mut DistanceCounter,
) -> Result<Vec<(ObjectId, QPoint)>, SkylineError> {
    if queries.is_empty() {
        return Err(SkylineError::NoQueries);
    }
    for q in queries {
        dataset.kind.check(&q.descriptor)?;
    }
    Ok(dataset
        .objects
        .iter()
        .map(|o| {
            let p = queries
                .iter()
                .map(|q| dataset.kind.distance(&q.descriptor, &o.descriptor, counter))
                .collect();
            (o.id, p)
        })
        .collect())
}

/// Reference metric skyline by exhaustive transformation and pairwise
/// dominance. Returns ids in ascending order.
pub fn brute_force_metric_skyline(
    dataset: &Dataset,
    queries: &[MetricObject],
    counter: &mut DistanceCounter,
) -> Result<Vec<ObjectId>, SkylineError> {
    let points = query_space_points(dataset, queries, counter)?;
    let mut ids = pairwise_skyline(&points);
    ids.sort_unstable();
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_vectors;
    use proptest::prelude::*;

    fn sorted(mut v: Vec<ObjectId>) -> Vec<ObjectId> {
        v.sort_unstable();
        v
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[1.0, 2.0], &[2.0, 2.0]).unwrap());
        assert!(!dominates(&[1.0, 2.0], &[1.0, 2.0]).unwrap());
        assert!(!dominates(&[1.0, 3.0], &[2.0, 1.0]).unwrap());
        assert!(dominates(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mddr_dominance_examples() {
        let r = Mddr::new(vec![2.0, 2.0], vec![3.0, 3.0]);
        assert!(mddr_dominated_by(&[1.0, 1.0], &r).unwrap());
        assert!(!mddr_dominated_by(&[1.0, 4.0], &r).unwrap());
        assert!(!mddr_dominated_by(&[2.0, 2.0], &r).unwrap());
        assert!(mddr_dominated_by(&[2.0], &r).is_err());
    }

    #[test]
    fn l1_corner_examples() {
        assert_eq!(
            Mddr::new(vec![0.0, 0.0], vec![1.0, 2.0]).l1_min_corner(),
            0.0
        );
        assert_eq!(
            Mddr::new(vec![1.0, 3.0], vec![2.0, 4.0]).l1_min_corner(),
            4.0
        );
        assert_eq!(Mddr::point(&[1.5, 2.5, 3.0]).l1_min_corner(), 7.0);
    }

    #[test]
    fn intersection_examples() {
        let a = Mddr::new(vec![0.0, 0.0], vec![10.0, 10.0]);
        let b = Mddr::new(vec![2.0, 2.0], vec![8.0, 8.0]);
        assert_eq!(a.intersect(&a).unwrap(), a);
        assert_eq!(a.intersect(&b).unwrap(), b);
        assert_eq!(a.intersect(&b).unwrap(), b.intersect(&a).unwrap());
        // roundoff-disjoint bounds clamp to the larger lower bound
        let c = Mddr::new(vec![5.0, 0.0], vec![5.0, 1.0]);
        let d = Mddr::new(vec![5.000000000000001, 0.0], vec![6.0, 1.0]);
        let i = c.intersect(&d).unwrap();
        assert_eq!(i.lower[0], i.upper[0]);
        assert!(a.intersect(&Mddr::unbounded(3)).is_err());
    }

    #[test]
    fn sort_first_examples() {
        // five mutually incomparable points dominating six others
        let front = [(1.0, 9.0), (2.0, 6.0), (4.0, 4.0), (6.0, 2.0), (9.0, 1.0)];
        let behind = [
            (2.0, 10.0),
            (3.0, 7.0),
            (5.0, 5.0),
            (7.0, 3.0),
            (9.5, 1.5),
            (8.0, 8.0),
        ];
        let pts: Vec<(ObjectId, QPoint)> = front
            .iter()
            .chain(&behind)
            .enumerate()
            .map(|(i, &(x, y))| (i as ObjectId, vec![x, y]))
            .collect();
        assert_eq!(sorted(pairwise_skyline(&pts)), vec![0, 1, 2, 3, 4]);
        assert_eq!(sorted(sort_first_skyline(&pts)), vec![0, 1, 2, 3, 4]);

        let same: Vec<_> = (0..4).map(|i| (i, vec![1.0, 1.0])).collect();
        assert_eq!(sorted(sort_first_skyline(&same)), vec![0, 1, 2, 3]);
        assert_eq!(sort_first_skyline(&[(7, vec![3.0])]), vec![7]);
    }

    #[test]
    fn single_example_skyline_is_nearest_neighbors() {
        let ds = generate_vectors(300, 3, 1, 0.0, 2).unwrap();
        let q = MetricObject::vector(0, vec![0.5; 3]);
        let mut c = DistanceCounter::new();
        let ids = brute_force_metric_skyline(&ds, std::slice::from_ref(&q), &mut c).unwrap();
        // zero spread: every object sits at the same point, so all tie at the minimum
        assert_eq!(ids.len(), 300);
        assert_eq!(c.count(), 300);

        let ds = generate_vectors(300, 3, 4, 0.1, 2).unwrap();
        let mut c = DistanceCounter::new();
        let ids = brute_force_metric_skyline(&ds, std::slice::from_ref(&q), &mut c).unwrap();
        let pts = query_space_points(&ds, std::slice::from_ref(&q), &mut c).unwrap();
        let min = pts.iter().map(|p| p.1[0]).fold(f64::INFINITY, f64::min);
        let expected: Vec<_> = pts.iter().filter(|p| p.1[0] == min).map(|p| p.0).collect();
        assert_eq!(ids, expected);
        assert!(brute_force_metric_skyline(&ds, &[], &mut c).is_err());
    }

    #[test]
    fn query_copies_and_duplicates_are_in_the_skyline() {
        let mut ds = generate_vectors(200, 4, 3, 0.1, 6).unwrap();
        let dup = ds.objects[10].clone();
        ds.objects.push(MetricObject { id: 200, ..dup });
        let queries = vec![
            ds.objects[3].clone(),
            ds.objects[50].clone(),
            ds.objects[10].clone(),
        ];
        let mut c = DistanceCounter::new();
        let ids = brute_force_metric_skyline(&ds, &queries, &mut c).unwrap();
        for id in [3, 50, 10, 200] {
            assert!(ids.contains(&id), "{id} missing");
        }
        let pts = query_space_points(&ds, &queries, &mut c).unwrap();
        assert_eq!(ids, sorted(sort_first_skyline(&pts)));
    }

    fn point(m: usize) -> impl Strategy<Value = Vec<f64>> {
        // coarse grid so ties and equal coordinates are frequent
        prop::collection::vec((0u8..6).prop_map(f64::from), m)
    }

    fn rect(m: usize) -> impl Strategy<Value = Mddr> {
        prop::collection::vec((0u8..6, 0u8..4), m).prop_map(|v| {
            let lower: Vec<f64> = v.iter().map(|&(l, _)| f64::from(l)).collect();
            let upper = v.iter().map(|&(l, w)| f64::from(l + w)).collect();
            Mddr::new(lower, upper)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(4000))]

        #[test]
        fn dominance_is_a_strict_partial_order(
            (a, b, c) in (1usize..5).prop_flat_map(|m| (point(m), point(m), point(m)))
        ) {
            prop_assert!(!dominates_unchecked(&a, &a));
            if dominates_unchecked(&a, &b) {
                prop_assert!(!dominates_unchecked(&b, &a));
                if dominates_unchecked(&b, &c) {
                    prop_assert!(dominates_unchecked(&a, &c));
                }
            }
        }

        #[test]
        fn mddr_dominance_is_sound(
            (p, r, t) in (1usize..5).prop_flat_map(|m| (point(m), rect(m), prop::collection::vec(0.0f64..=1.0, m)))
        ) {
            // q is an arbitrary point of r
            let q: Vec<f64> = r.lower.iter().zip(&r.upper).zip(&t).map(|((lo, hi), t)| lo + t * (hi - lo)).collect();
            prop_assert!(r.contains(&q, 0.0));
            if mddr_dominated_by(&p, &r).unwrap() {
                prop_assert!(dominates_unchecked(&p, &q));
                prop_assert!(l1_precheck(l1_norm(&p), &r));
            }
            prop_assert!(r.l1_min_corner() <= l1_norm(&q) + 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn sort_first_matches_pairwise(
            pts in (1usize..5).prop_flat_map(|m| prop::collection::vec(point(m), 1..2000))
        ) {
            let pts: Vec<(ObjectId, QPoint)> = pts.into_iter().enumerate().map(|(i, p)| (i as ObjectId, p)).collect();
            prop_assert_eq!(sorted(sort_first_skyline(&pts)), sorted(pairwise_skyline(&pts)));
        }
    }
}
