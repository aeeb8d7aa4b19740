//! Cost counters reported by queries.

/// Number of node fetches made by one query. Nodes are never cached, so
/// fetching the same node twice counts twice.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct IoCounter {
    reads: u64,
}

impl IoCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reads(&self) -> u64 {
        self.reads
    }

    #[inline]
    pub(crate) fn bump(&mut self) {
        self.reads += 1;
    }
}

/// Costs of a single query.
///
/// A heap operation is one push, one pop or one removal by dominance pruning.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct QueryStats {
    pub distance_computations: u64,
    pub heap_pushes: u64,
    pub heap_pops: u64,
    pub heap_removals: u64,
    pub max_heap_size: u64,
    pub node_reads: u64,
    /// Distance computations spent up to (and including) the pop that
    /// produced the first skyline object.
    pub distance_computations_at_first_skyline: Option<u64>,
    /// Heap operations up to (and including) that pop.
    pub heap_ops_at_first_skyline: Option<u64>,
}

impl QueryStats {
    pub fn heap_ops(&self) -> u64 {
        self.heap_pushes + self.heap_pops + self.heap_removals
    }

    /// True when every counter of `self` is at most the matching counter of `other`.
    pub fn le_counterwise(&self, other: &QueryStats) -> bool {
        let opt_le = |a: Option<u64>, b: Option<u64>| match (a, b) {
            (None, _) => true,
            (Some(x), Some(y)) => x <= y,
            (Some(_), None) => false,
        };
        self.distance_computations <= other.distance_computations
            && self.heap_pushes <= other.heap_pushes
            && self.heap_pops <= other.heap_pops
            && self.heap_removals <= other.heap_removals
            && self.max_heap_size <= other.max_heap_size
            && self.node_reads <= other.node_reads
            && opt_le(
                self.distance_computations_at_first_skyline,
                other.distance_computations_at_first_skyline,
            )
            && opt_le(
                self.heap_ops_at_first_skyline,
                other.heap_ops_at_first_skyline,
            )
    }
}

/// Share of distance computations and of heap operations spent before the
/// first skyline object was found (the expansion phase).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseProfile {
    pub distance_fraction: f64,
    pub heap_fraction: f64,
}

/// `None` when the run never produced a skyline object.
pub fn phase_profile(stats: &QueryStats) -> Option<PhaseProfile> {
    let dc = stats.distance_computations_at_first_skyline?;
    let ho = stats.heap_ops_at_first_skyline?;
    let ratio = |part: u64, total: u64| {
        if total == 0 {
            0.0
        } else {
            part as f64 / total as f64
        }
    };
    Some(PhaseProfile {
        distance_fraction: ratio(dc, stats.distance_computations),
        heap_fraction: ratio(ho, stats.heap_ops()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_ratios() {
        let s = QueryStats {
            distance_computations: 100,
            heap_pushes: 10,
            heap_pops: 6,
            heap_removals: 4,
            distance_computations_at_first_skyline: Some(85),
            heap_ops_at_first_skyline: Some(5),
            ..Default::default()
        };
        let p = phase_profile(&s).unwrap();
        assert_eq!(p.distance_fraction, 0.85);
        assert_eq!(p.heap_fraction, 0.25);
        assert!(phase_profile(&QueryStats::default()).is_none());
    }

    #[test]
    fn counterwise_order() {
        let a = QueryStats {
            node_reads: 3,
            ..Default::default()
        };
        let b = QueryStats {
            node_reads: 4,
            ..Default::default()
        };
        assert!(a.le_counterwise(&b));
        assert!(!b.le_counterwise(&a));
    }
}
