//! Metric objects and the two distance functions used by the indexes.
//!
//! Every metric evaluation made by an index or a query goes through
//! [`ObjectKind::distance`], which bumps a caller-owned [`DistanceCounter`].
//! The free functions [`l2_distance`] and [`hausdorff_distance`] are the raw,
//! uncounted kernels.

use thiserror::Error;

/// External identifier of a database object.
pub type ObjectId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("vector dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("polygon has no vertices")]
    EmptyPolygon,
    #[error("object kind mismatch: expected {expected}, got {actual}")]
    KindMismatch {
        expected: &'static str,
        actual: &'static str,
    },
}

/// The payload of a metric object.
#[derive(Debug, Clone, PartialEq)]
pub enum Descriptor {
    Vector(Vec<f64>),
    /// 2-D vertices, treated as an unordered point cloud.
    Polygon(Vec<[f64; 2]>),
}

impl Descriptor {
    fn kind_name(&self) -> &'static str {
        match self {
            Descriptor::Vector(_) => "vector",
            Descriptor::Polygon(_) => "polygon",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricObject {
    pub id: ObjectId,
    pub descriptor: Descriptor,
}

impl MetricObject {
    pub fn vector(id: ObjectId, coords: Vec<f64>) -> Self {
        Self {
            id,
            descriptor: Descriptor::Vector(coords),
        }
    }

    pub fn polygon(id: ObjectId, vertices: Vec<[f64; 2]>) -> Self {
        Self {
            id,
            descriptor: Descriptor::Polygon(vertices),
        }
    }
}

/// Number of metric evaluations performed within one accounting scope
/// (an index build or a single query).
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct DistanceCounter {
    count: u64,
}

impl DistanceCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Adds the evaluations recorded by another accounting scope.
    pub fn absorb(&mut self, other: DistanceCounter) {
        self.count += other.count;
    }

    #[inline]
    fn bump(&mut self) {
        self.count += 1;
    }
}

/// Euclidean distance between two vectors of equal dimension.
pub fn l2_distance(u: &[f64], v: &[f64]) -> Result<f64, MetricError> {
    if u.len() != v.len() {
        return Err(MetricError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    Ok(l2_unchecked(u, v))
}

#[inline]
fn l2_unchecked(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[inline]
fn point_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Largest distance from a point of `from` to its nearest point of `to`.
fn directed_hausdorff(from: &[[f64; 2]], to: &[[f64; 2]]) -> f64 {
    from.iter()
        .map(|&x| {
            to.iter()
                .map(|&y| point_dist(x, y))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance between two vertex clouds.
pub fn hausdorff_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptyPolygon);
    }
    Ok(directed_hausdorff(a, b).max(directed_hausdorff(b, a)))
}

/// The kind of objects stored in one database; determines the metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectKind {
    /// Fixed-dimension real vectors under L2.
    Vector { dim: usize },
    /// 2-D polygons under the Hausdorff distance.
    Polygon,
}

impl ObjectKind {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectKind::Vector { .. } => "vector",
            ObjectKind::Polygon => "polygon",
        }
    }

    /// Checks that `d` belongs to this kind (and, for vectors, has the right dimension).
    pub fn check(&self, d: &Descriptor) -> Result<(), MetricError> {
        match (self, d) {
            (ObjectKind::Vector { dim }, Descriptor::Vector(v)) => {
                if v.len() == *dim {
                    Ok(())
                } else {
                    Err(MetricError::DimensionMismatch {
                        left: *dim,
                        right: v.len(),
                    })
                }
            }
            (ObjectKind::Polygon, Descriptor::Polygon(p)) => {
                if p.is_empty() {
                    Err(MetricError::EmptyPolygon)
                } else {
                    Ok(())
                }
            }
            _ => Err(MetricError::KindMismatch {
                expected: self.name(),
                actual: d.kind_name(),
            }),
        }
    }

    /// Counted metric evaluation.
    pub fn try_distance(
        &self,
        a: &Descriptor,
        b: &Descriptor,
        counter: &mut DistanceCounter,
    ) -> Result<f64, MetricError> {
        let d = match (a, b) {
            (Descriptor::Vector(u), Descriptor::Vector(v)) => l2_distance(u, v)?,
            (Descriptor::Polygon(p), Descriptor::Polygon(q)) => hausdorff_distance(p, q)?,
            _ => {
                return Err(MetricError::KindMismatch {
                    expected: a.kind_name(),
                    actual: b.kind_name(),
                })
            }
        };
        counter.bump();
        Ok(d)
    }

    /// Counted metric evaluation on descriptors already validated with [`ObjectKind::check`].
    ///
    /// Panics if the descriptors are incompatible.
    #[inline]
    pub fn distance(&self, a: &Descriptor, b: &Descriptor, counter: &mut DistanceCounter) -> f64 {
        counter.bump();
        match (a, b) {
            (Descriptor::Vector(u), Descriptor::Vector(v)) => {
                assert_eq!(u.len(), v.len(), "unchecked vector dimension mismatch");
                l2_unchecked(u, v)
            }
            (Descriptor::Polygon(p), Descriptor::Polygon(q)) => {
                directed_hausdorff(p, q).max(directed_hausdorff(q, p))
            }
            _ => panic!("unchecked object kind mismatch"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_hausdorff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
        let mut ab = 0.0f64;
        for x in a {
            let mut best = f64::INFINITY;
            for y in b {
                best = best.min(((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt());
            }
            ab = ab.max(best);
        }
        let mut ba = 0.0f64;
        for y in b {
            let mut best = f64::INFINITY;
            for x in a {
                best = best.min(((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt());
            }
            ba = ba.max(best);
        }
        ab.max(ba)
    }

    #[test]
    fn l2_examples() {
        assert_eq!(l2_distance(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(l2_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(
            l2_distance(&[1.0, 2.0, 3.0], &[4.0, 6.0, 3.0]).unwrap(),
            5.0
        );
        assert!(matches!(
            l2_distance(&[1.0], &[1.0, 2.0]),
            Err(MetricError::DimensionMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn hausdorff_translation_and_identity() {
        let p = vec![
            [0.1, 0.1],
            [0.2, 0.15],
            [0.3, 0.1],
            [0.25, 0.3],
            [0.12, 0.2],
        ];
        assert_eq!(hausdorff_distance(&p, &p).unwrap(), 0.0);
        // translate far enough that each vertex's nearest counterpart is its own image
        let shifted: Vec<_> = p.iter().map(|v| [v[0] + 1.0, v[1]]).collect();
        let d = hausdorff_distance(&p, &shifted).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        assert_eq!(
            hausdorff_distance(&[[0.0, 0.0]], &[[1.0, 0.0]]).unwrap(),
            1.0
        );
        assert_eq!(hausdorff_distance(&[], &p), Err(MetricError::EmptyPolygon));
    }

    #[test]
    fn counter_counts_each_evaluation_once() {
        let kind = ObjectKind::Polygon;
        let a = Descriptor::Polygon(vec![[0.0, 0.0]; 15]);
        let b = Descriptor::Polygon(vec![[1.0, 1.0]; 15]);
        let mut c = DistanceCounter::new();
        for _ in 0..7 {
            kind.distance(&a, &b, &mut c);
        }
        kind.try_distance(&a, &b, &mut c).unwrap();
        assert_eq!(c.count(), 8);
        // failed evaluations are not counted
        let v = Descriptor::Vector(vec![0.0]);
        assert!(kind.try_distance(&a, &v, &mut c).is_err());
        assert_eq!(c.count(), 8);
    }

    #[test]
    fn kind_check() {
        let k = ObjectKind::Vector { dim: 3 };
        assert!(k.check(&Descriptor::Vector(vec![0.0; 3])).is_ok());
        assert!(k.check(&Descriptor::Vector(vec![0.0; 2])).is_err());
        assert!(k.check(&Descriptor::Polygon(vec![[0.0, 0.0]])).is_err());
        assert!(ObjectKind::Polygon
            .check(&Descriptor::Polygon(vec![]))
            .is_err());
    }

    fn polygon() -> impl Strategy<Value = Vec<[f64; 2]>> {
        prop::collection::vec((0.0f64..1.0, 0.0f64..1.0).prop_map(|(x, y)| [x, y]), 1..16)
    }

    proptest! {
        #[test]
        fn hausdorff_matches_brute_force(a in polygon(), b in polygon()) {
            let d = hausdorff_distance(&a, &b).unwrap();
            prop_assert!((d - brute_hausdorff(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn hausdorff_metric_axioms(a in polygon(), b in polygon(), c in polygon()) {
            let ab = hausdorff_distance(&a, &b).unwrap();
            prop_assert_eq!(hausdorff_distance(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(ab, hausdorff_distance(&b, &a).unwrap());
            let ac = hausdorff_distance(&a, &c).unwrap();
            let bc = hausdorff_distance(&b, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn l2_metric_axioms(
            (u, v, w) in (1usize..16).prop_flat_map(|d| (
                prop::collection::vec(-10.0f64..10.0, d),
                prop::collection::vec(-10.0f64..10.0, d),
                prop::collection::vec(-10.0f64..10.0, d),
            ))
        ) {
            prop_assert_eq!(l2_distance(&u, &u).unwrap(), 0.0);
            let uv = l2_distance(&u, &v).unwrap();
            prop_assert_eq!(uv, l2_distance(&v, &u).unwrap());
            prop_assert!(l2_distance(&u, &w).unwrap() <= uv + l2_distance(&v, &w).unwrap() + 1e-9);
        }
    }
}
