//! Benchmark sweeps, oracle verification and CSV reports.
//!
//! Report columns, in order:
//!
//! ```text
//! sweep_axis, sweep_value, variant, n, capacity, pivots, inner_pivots, m, limit,
//! queries, avg_distance_computations, avg_heap_ops, avg_max_heap_size,
//! avg_node_reads, avg_skyline_size, avg_distance_fraction_before_first,
//! avg_heap_fraction_before_first, seq_scan_baseline
//! ```
//!
//! `seq_scan_baseline` is `m * n`, the cost of evaluating every example
//! against every object. Empty cells mean "not applicable".

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError};
use crate::metric::{DistanceCounter, MetricObject, ObjectId};
use crate::msq::{msq, MsqError, MsqOptions, MsqOutput, Variant};
use crate::mtree::{MetricTree, TreeError};
use crate::skyline::brute_force_metric_skyline;
use crate::stats::{phase_profile, QueryStats};

/// Offset between the index seed and the seed of the query-example stream.
pub const QUERY_SEED_OFFSET: u64 = 0x5157_0000;

pub const REPORT_COLUMNS: [&str; 18] = [
    "sweep_axis",
    "sweep_value",
    "variant",
    "n",
    "capacity",
    "pivots",
    "inner_pivots",
    "m",
    "limit",
    "queries",
    "avg_distance_computations",
    "avg_heap_ops",
    "avg_max_heap_size",
    "avg_node_reads",
    "avg_skyline_size",
    "avg_distance_fraction_before_first",
    "avg_heap_fraction_before_first",
    "seq_scan_baseline",
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Query(#[from] MsqError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    MTree,
    PmTree,
}

impl FromStr for IndexKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mtree" | "m-tree" => Ok(IndexKind::MTree),
            "pmtree" | "pm-tree" => Ok(IndexKind::PmTree),
            _ => Err(ExperimentError::Invalid(format!(
                "unknown index kind `{s}` (mtree or pmtree)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Pivots,
    NodeSize,
    DbSize,
    MExamples,
    PartialK,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Pivots => "pivots",
            SweepAxis::NodeSize => "nodeSize",
            SweepAxis::DbSize => "dbSize",
            SweepAxis::MExamples => "mExamples",
            SweepAxis::PartialK => "partialK",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            SweepAxis::Pivots,
            SweepAxis::NodeSize,
            SweepAxis::DbSize,
            SweepAxis::MExamples,
            SweepAxis::PartialK,
        ]
        .into_iter()
        .find(|a| a.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| {
            ExperimentError::Invalid(format!(
                "unknown sweep axis `{s}` (pivots, nodeSize, dbSize, mExamples or partialK)"
            ))
        })
    }
}

/// A sweep written as `axis=v1,v2,...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
}

impl FromStr for Sweep {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (axis, values) = s.split_once('=').ok_or_else(|| {
            ExperimentError::Invalid(format!("sweep `{s}` is not of the form axis=v1,v2"))
        })?;
        let values = values
            .split(',')
            .map(|v| {
                v.trim().parse().map_err(|_| {
                    ExperimentError::Invalid(format!("sweep value `{v}` is not a count"))
                })
            })
            .collect::<Result<Vec<usize>, _>>()?;
        Ok(Sweep {
            axis: axis.trim().parse()?,
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub index: IndexKind,
    pub capacity: usize,
    /// Leaf pivots (ignored for an M-tree index).
    pub pivots: usize,
    pub inner_pivot_fraction: f64,
    /// Number of skyline queries averaged per row.
    pub queries: usize,
    /// Query examples per skyline query.
    pub examples: usize,
    pub variants: Vec<Variant>,
    pub limit: Option<usize>,
    pub sweep: Option<Sweep>,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            index: IndexKind::PmTree,
            capacity: 20,
            pivots: 128,
            inner_pivot_fraction: 0.5,
            queries: 50,
            examples: 2,
            variants: Variant::ALL.to_vec(),
            limit: None,
            sweep: None,
            seed: 1,
        }
    }
}

/// Parameters of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Setting {
    value: Option<usize>,
    n: usize,
    capacity: usize,
    pivots: usize,
    m: usize,
    limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub sweep_axis: Option<SweepAxis>,
    pub sweep_value: Option<usize>,
    pub variant: Variant,
    pub n: usize,
    pub capacity: usize,
    pub pivots: usize,
    pub inner_pivots: usize,
    pub m: usize,
    pub limit: Option<usize>,
    pub queries: usize,
    pub avg_distance_computations: f64,
    pub avg_heap_ops: f64,
    pub avg_max_heap_size: f64,
    pub avg_node_reads: f64,
    pub avg_skyline_size: f64,
    pub avg_distance_fraction_before_first: Option<f64>,
    pub avg_heap_fraction_before_first: Option<f64>,
    pub seq_scan_baseline: u64,
}

impl ExperimentSpec {
    fn validate(&self, ds: &Dataset) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Invalid(msg));
        if self.queries == 0 || self.examples == 0 {
            return bad("queries and examples must be positive".into());
        }
        if self.variants.is_empty() {
            return bad("no variant selected".into());
        }
        if self.index == IndexKind::MTree {
            if let Some(v) = self.variants.iter().find(|v| v.uses_pivots()) {
                return bad(format!("variant {v} needs a PM-tree index"));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return bad("sweep without values".into());
            }
            if sweep.axis == SweepAxis::DbSize {
                if let Some(&v) = sweep.values.iter().find(|&&v| v == 0 || v > ds.len()) {
                    return bad(format!("dbSize {v} outside 1..={}", ds.len()));
                }
            }
            if sweep.axis == SweepAxis::MExamples && sweep.values.contains(&0) {
                return bad("mExamples values must be positive".into());
            }
            if sweep.axis == SweepAxis::Pivots && self.index == IndexKind::MTree {
                return bad("a pivots sweep needs a PM-tree index".into());
            }
        }
        Ok(())
    }

    fn settings(&self, ds: &Dataset) -> Vec<Setting> {
        let base = Setting {
            value: None,
            n: ds.len(),
            capacity: self.capacity,
            pivots: if self.index == IndexKind::MTree {
                0
            } else {
                self.pivots
            },
            m: self.examples,
            limit: self.limit,
        };
        let Some(sweep) = &self.sweep else {
            return vec![base];
        };
        sweep
            .values
            .iter()
            .map(|&v| {
                let mut s = Setting {
                    value: Some(v),
                    ..base
                };
                match sweep.axis {
                    SweepAxis::Pivots => s.pivots = v,
                    SweepAxis::NodeSize => s.capacity = v,
                    SweepAxis::DbSize => s.n = v,
                    SweepAxis::MExamples => s.m = v,
                    SweepAxis::PartialK => s.limit = Some(v),
                }
                s
            })
            .collect()
    }
}

/// Builds the index an experiment runs on.
pub fn build_index(
    ds: &Dataset,
    capacity: usize,
    pivots: usize,
    inner_pivot_fraction: f64,
    seed: u64,
) -> Result<(MetricTree, DistanceCounter), TreeError> {
    if pivots == 0 {
        MetricTree::build(ds, capacity)
    } else {
        MetricTree::build_pm_with_selection(
            ds,
            capacity,
            pivots.min(ds.len()),
            inner_pivot_fraction,
            seed,
        )
    }
}

/// `count` query-example sets of `m` examples each, following the database
/// distribution. Deterministic in `seed`.
pub fn query_sets(
    ds: &Dataset,
    count: usize,
    m: usize,
    seed: u64,
) -> Result<Vec<Vec<MetricObject>>, DatasetError> {
    let all = ds.sample_queries(count * m, seed.wrapping_add(QUERY_SEED_OFFSET))?;
    Ok(all.chunks(m).map(|c| c.to_vec()).collect())
}

/// Runs every query set (in parallel) and returns the outputs in input order.
pub fn run_queries(
    tree: &MetricTree,
    sets: &[Vec<MetricObject>],
    options: MsqOptions,
) -> Result<Vec<MsqOutput>, MsqError> {
    sets.par_iter().map(|qs| msq(tree, qs, options)).collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn summarize(
    setting: &Setting,
    axis: Option<SweepAxis>,
    variant: Variant,
    tree: &MetricTree,
    outputs: &[MsqOutput],
) -> ReportRow {
    let stats: Vec<&QueryStats> = outputs.iter().map(|o| &o.stats).collect();
    let avg =
        |f: &dyn Fn(&QueryStats) -> u64| mean(stats.iter().map(|s| f(s) as f64)).unwrap_or(0.0);
    let profiles: Vec<_> = stats.iter().filter_map(|s| phase_profile(s)).collect();
    ReportRow {
        sweep_axis: axis,
        sweep_value: setting.value,
        variant,
        n: setting.n,
        capacity: setting.capacity,
        pivots: tree.pivots().len(),
        inner_pivots: tree.pivots().inner,
        m: setting.m,
        limit: setting.limit,
        queries: outputs.len(),
        avg_distance_computations: avg(&|s| s.distance_computations),
        avg_heap_ops: avg(&|s| s.heap_ops()),
        avg_max_heap_size: avg(&|s| s.max_heap_size),
        avg_node_reads: avg(&|s| s.node_reads),
        avg_skyline_size: mean(outputs.iter().map(|o| o.skyline.len() as f64)).unwrap_or(0.0),
        avg_distance_fraction_before_first: mean(profiles.iter().map(|p| p.distance_fraction)),
        avg_heap_fraction_before_first: mean(profiles.iter().map(|p| p.heap_fraction)),
        seq_scan_baseline: (setting.m * setting.n) as u64,
    }
}

/// Runs the experiment and returns one row per (sweep point, variant).
pub fn run_experiment(
    ds: &Dataset,
    spec: &ExperimentSpec,
) -> Result<Vec<ReportRow>, ExperimentError> {
    spec.validate(ds)?;
    let axis = spec.sweep.as_ref().map(|s| s.axis);
    let mut rows = Vec::new();
    let mut built: Option<((usize, usize, usize), MetricTree)> = None;
    for setting in spec.settings(ds) {
        let key = (setting.n, setting.capacity, setting.pivots);
        if built.as_ref().map(|b| b.0) != Some(key) {
            let data = ds.prefix(setting.n);
            let (tree, _) = build_index(
                &data,
                setting.capacity,
                setting.pivots,
                spec.inner_pivot_fraction,
                spec.seed,
            )?;
            log::info!(
                "built index: n = {}, capacity = {}, pivots = {}, {} nodes",
                setting.n,
                setting.capacity,
                tree.pivots().len(),
                tree.node_count()
            );
            built = Some((key, tree));
        }
        let tree = &built.as_ref().unwrap().1;
        let sets = query_sets(ds, spec.queries, setting.m, spec.seed)?;
        for &variant in &spec.variants {
            let options = MsqOptions {
                variant,
                limit: setting.limit,
                trace: false,
            };
            let outputs = run_queries(tree, &sets, options)?;
            rows.push(summarize(&setting, axis, variant, tree, &outputs));
        }
    }
    Ok(rows)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn real(v: f64) -> String {
    format!("{v:.6}")
}

/// Writes rows with the column order documented at module level.
pub fn write_report_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.sweep_axis
                .map(|a| a.name().to_string())
                .unwrap_or_else(|| "none".into()),
            opt(r.sweep_value),
            r.variant.name().to_string(),
            r.n.to_string(),
            r.capacity.to_string(),
            r.pivots.to_string(),
            r.inner_pivots.to_string(),
            r.m.to_string(),
            opt(r.limit),
            r.queries.to_string(),
            real(r.avg_distance_computations),
            real(r.avg_heap_ops),
            real(r.avg_max_heap_size),
            real(r.avg_node_reads),
            real(r.avg_skyline_size),
            r.avg_distance_fraction_before_first
                .map(real)
                .unwrap_or_default(),
            r.avg_heap_fraction_before_first
                .map(real)
                .unwrap_or_default(),
            r.seq_scan_baseline.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one skyline result stream: a row per emitted object with its
/// query-space coordinates and the cumulative costs at emission, then a
/// `total` row with the final costs.
pub fn write_skyline_csv<W: Write>(
    output: &MsqOutput,
    m: usize,
    out: W,
) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["record".to_string(), "id".to_string()];
    header.extend((1..=m).map(|i| format!("d{i}")));
    header.extend(
        [
            "distance_computations",
            "heap_pushes",
            "heap_pops",
            "heap_removals",
            "max_heap_size",
            "node_reads",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    let stat_cells = |s: &QueryStats| {
        [
            s.distance_computations,
            s.heap_pushes,
            s.heap_pops,
            s.heap_removals,
            s.max_heap_size,
            s.node_reads,
        ]
        .map(|v| v.to_string())
    };
    for (i, r) in output.skyline.iter().enumerate() {
        let mut row = vec![i.to_string(), r.id.to_string()];
        row.extend(r.point.iter().map(|x| format!("{x:.17e}")));
        row.extend(stat_cells(&r.stats));
        w.write_record(&row)?;
    }
    let mut total = vec!["total".to_string(), String::new()];
    total.extend(std::iter::repeat_n(String::new(), m));
    total.extend(stat_cells(&output.stats));
    w.write_record(&total)?;
    w.flush()?;
    Ok(())
}

/// Outcome of [`verify`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: usize,
    pub mismatches: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn scan_distances(ds: &Dataset, q: &MetricObject) -> Vec<(ObjectId, f64)> {
    let mut c = DistanceCounter::new();
    let mut all: Vec<(ObjectId, f64)> = ds
        .objects
        .iter()
        .map(|o| (o.id, ds.kind.distance(&q.descriptor, &o.descriptor, &mut c)))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all
}

/// Compares every requested variant, a range query and a kNN query per
/// query set against sequential-scan and brute-force oracles.
pub fn verify(
    ds: &Dataset,
    tree: &MetricTree,
    variants: &[Variant],
    sets: &[Vec<MetricObject>],
    knn_k: usize,
) -> Result<VerifyReport, ExperimentError> {
    let per_set: Vec<Result<VerifyReport, ExperimentError>> = sets
        .par_iter()
        .enumerate()
        .map(|(i, qs)| {
            let mut report = VerifyReport::default();
            let expected = brute_force_metric_skyline(ds, qs, &mut DistanceCounter::new())
                .map_err(|e| ExperimentError::Invalid(e.to_string()))?;
            for &v in variants {
                let got = msq(tree, qs, MsqOptions::new(v))?.sorted_ids();
                report.checks += 1;
                if got != expected {
                    report.mismatches.push(format!(
                        "query set {i}, {v}: skyline {got:?}, oracle {expected:?}"
                    ));
                }
            }
            let q = &qs[0];
            let scan = scan_distances(ds, q);
            let k = knn_k.clamp(1, ds.len());
            let knn = tree.knn_query(q, k)?.neighbors;
            report.checks += 1;
            if knn[..] != scan[..k] {
                report
                    .mismatches
                    .push(format!("query set {i}: kNN differs from the scan"));
            }
            let radius = scan[k - 1].1;
            let mut in_range: Vec<ObjectId> = scan
                .iter()
                .take_while(|e| e.1 <= radius)
                .map(|e| e.0)
                .collect();
            in_range.sort_unstable();
            for (label, got) in [
                ("range", tree.range_query(q, radius)?.ids),
                ("pivot range", tree.pm_range_query(q, radius)?.ids),
            ] {
                report.checks += 1;
                if got != in_range {
                    report.mismatches.push(format!(
                        "query set {i}: {label} query differs from the scan"
                    ));
                }
            }
            Ok(report)
        })
        .collect();
    let mut total = VerifyReport::default();
    for r in per_set {
        let r = r?;
        total.checks += r.checks;
        total.mismatches.extend(r.mismatches);
    }
    Ok(total)
}
