//! Metric skyline queries over M-tree and PM-tree indexes.

pub mod dataset;
pub mod experiment;
pub mod metric;
pub mod msq;
pub mod mtree;
pub mod pmtree;
pub mod rng;
pub mod skyline;
pub mod stats;
pub mod storage;

pub use dataset::{Dataset, DatasetError, GeneratorSpec};
pub use metric::{Descriptor, DistanceCounter, MetricError, MetricObject, ObjectId, ObjectKind};
pub use msq::{msq, MsqError, MsqOptions, MsqOutput, Variant};
pub use mtree::{MetricTree, TreeError};
pub use pmtree::{select_pivots, PivotSet};
pub use skyline::{Mddr, QPoint, SkylineError};
pub use stats::{IoCounter, QueryStats};
