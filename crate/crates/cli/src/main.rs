use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use metric_skyline::dataset::{load_dataset, save_dataset, GeneratorSpec};
use metric_skyline::experiment::{
    build_index, query_sets, run_experiment, verify, write_report_csv, write_skyline_csv,
    ExperimentSpec, IndexKind, Sweep,
};
use metric_skyline::storage::{load_index, save_index};
use metric_skyline::{msq, Dataset, MetricTree, MsqOptions, Variant};

#[derive(Parser)]
#[command(
    name = "msq-bench",
    version,
    about = "Metric skyline queries over M-tree and PM-tree indexes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic database.
    Gen(GenArgs),
    /// Build an index and write it as a paged file.
    Build(BuildArgs),
    /// Run one metric skyline, range or kNN query.
    Query(QueryArgs),
    /// Run a benchmark sweep and write the CSV report.
    Bench(BenchArgs),
    /// Compare query results against brute-force oracles.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Vectors,
    Polygons,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "vectors")]
    kind: DataKind,
    /// Number of objects.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 12)]
    dim: usize,
    #[arg(long, default_value_t = 20)]
    clusters: usize,
    /// Standard deviation of each coordinate around its cluster center.
    #[arg(long, default_value_t = 0.05)]
    spread: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct IndexArgs {
    /// Index kind: mtree or pmtree.
    #[arg(long, default_value = "pmtree")]
    kind: String,
    /// Node capacity in entries.
    #[arg(long, default_value_t = 20)]
    capacity: usize,
    /// Number of leaf pivots.
    #[arg(long, default_value_t = 128)]
    pivots: usize,
    /// Share of the pivots kept as rings in routing entries.
    #[arg(long, default_value_t = 0.5)]
    inner_pivot_fraction: f64,
}

impl IndexArgs {
    fn index_kind(&self) -> Result<IndexKind> {
        Ok(self.kind.parse()?)
    }

    fn leaf_pivots(&self) -> Result<usize> {
        Ok(match self.index_kind()? {
            IndexKind::MTree => 0,
            IndexKind::PmTree => self.pivots,
        })
    }
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    index: IndexArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    data: PathBuf,
    /// Prebuilt index; built from the data when absent.
    #[arg(long)]
    index: Option<PathBuf>,
    #[command(flatten)]
    build: IndexArgs,
    /// Number of query examples.
    #[arg(long, default_value_t = 2)]
    examples: usize,
    #[arg(long, default_value = "PM-tree+PSF+DEF")]
    variant: Variant,
    /// Stop after this many skyline objects.
    #[arg(long)]
    limit: Option<usize>,
    /// Run a range query with this radius (first example only).
    #[arg(long, conflicts_with = "knn")]
    range: Option<f64>,
    /// Run a kNN query (first example only).
    #[arg(long)]
    knn: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    index: IndexArgs,
    /// Skyline queries averaged per row.
    #[arg(long, default_value_t = 50)]
    queries: usize,
    /// Query examples per skyline query.
    #[arg(long, default_value_t = 2)]
    examples: usize,
    /// Comma-separated variants, or `all`.
    #[arg(long, default_value = "all")]
    variant: String,
    #[arg(long)]
    limit: Option<usize>,
    /// `axis=v1,v2,...` with axis one of pivots, nodeSize, dbSize, mExamples, partialK.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    index: Option<PathBuf>,
    #[command(flatten)]
    build: IndexArgs,
    #[arg(long, default_value_t = 20)]
    queries: usize,
    #[arg(long, default_value_t = 2)]
    examples: usize,
    #[arg(long, default_value = "all")]
    variant: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn parse_variants(list: &str) -> Result<Vec<Variant>> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(Variant::ALL.to_vec());
    }
    list.split(',').map(|v| Ok(v.parse()?)).collect()
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("cannot load dataset {}", path.display()))
}

/// Loads `index` when given (checking it matches the data), builds one otherwise.
fn open_index(
    ds: &Dataset,
    index: Option<&Path>,
    args: &IndexArgs,
    seed: u64,
) -> Result<MetricTree> {
    match index {
        Some(path) => {
            let tree = load_index(path)
                .with_context(|| format!("cannot load index {}", path.display()))?;
            ensure!(
                tree.kind() == ds.kind,
                "index holds {} objects but the dataset holds {} objects",
                tree.kind().name(),
                ds.kind.name()
            );
            ensure!(
                tree.len() == ds.len(),
                "index holds {} objects but the dataset holds {}",
                tree.len(),
                ds.len()
            );
            Ok(tree)
        }
        None => Ok(build_index(
            ds,
            args.capacity,
            args.leaf_pivots()?,
            args.inner_pivot_fraction,
            seed,
        )?
        .0),
    }
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let spec = match a.kind {
        DataKind::Polygons => GeneratorSpec::Polygons,
        DataKind::Vectors => GeneratorSpec::Clustered {
            dim: a.dim,
            clusters: a.clusters,
            spread: a.spread,
        },
    };
    let ds = spec.generate(a.n, a.seed)?;
    save_dataset(&ds, &a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    log::info!(
        "wrote {} {} objects to {}",
        ds.len(),
        ds.kind.name(),
        a.out.display()
    );
    Ok(())
}

fn cmd_build(a: BuildArgs) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    let (tree, dc) = build_index(
        &ds,
        a.index.capacity,
        a.index.leaf_pivots()?,
        a.index.inner_pivot_fraction,
        a.seed,
    )?;
    save_index(&tree, &a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    println!(
        "nodes={} height={} pivots={} inner_pivots={} build_distance_computations={}",
        tree.node_count(),
        tree.height(),
        tree.pivots().len(),
        tree.pivots().inner,
        dc.count()
    );
    Ok(())
}

fn cmd_query(a: QueryArgs) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    let tree = open_index(&ds, a.index.as_deref(), &a.build, a.seed)?;
    ensure!(a.examples > 0, "at least one query example is required");
    let examples = query_sets(&ds, 1, a.examples, a.seed)?.remove(0);
    let mut out = output(a.out.as_deref())?;
    if let Some(r) = a.range {
        let res = tree.pm_range_query(&examples[0], r)?;
        writeln!(out, "id")?;
        for id in res.ids {
            writeln!(out, "{id}")?;
        }
        log::info!("distance computations: {}", res.stats.distance_computations);
    } else if let Some(k) = a.knn {
        let res = tree.pm_knn_query(&examples[0], k)?;
        writeln!(out, "id,distance")?;
        for (id, d) in res.neighbors {
            writeln!(out, "{id},{d:.17e}")?;
        }
        if res.truncated {
            log::warn!(
                "k = {k} exceeds the database size; returned all {} objects",
                ds.len()
            );
        }
    } else {
        let options = MsqOptions {
            variant: a.variant,
            limit: a.limit,
            trace: false,
        };
        let res = msq(&tree, &examples, options)?;
        write_skyline_csv(&res, a.examples, &mut out)?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    let spec = ExperimentSpec {
        index: a.index.index_kind()?,
        capacity: a.index.capacity,
        pivots: a.index.pivots,
        inner_pivot_fraction: a.index.inner_pivot_fraction,
        queries: a.queries,
        examples: a.examples,
        variants: parse_variants(&a.variant)?,
        limit: a.limit,
        sweep: a.sweep.as_deref().map(str::parse::<Sweep>).transpose()?,
        seed: a.seed,
    };
    let rows = run_experiment(&ds, &spec)?;
    let mut out = output(a.out.as_deref())?;
    write_report_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    let tree = open_index(&ds, a.index.as_deref(), &a.build, a.seed)?;
    let mut variants = parse_variants(&a.variant)?;
    if tree.pivots().is_empty() {
        variants.retain(|v| !v.uses_pivots());
    }
    let sets = query_sets(&ds, a.queries, a.examples, a.seed)?;
    let report = verify(&ds, &tree, &variants, &sets, 10)?;
    for m in &report.mismatches {
        eprintln!("mismatch: {m}");
    }
    if !report.passed() {
        bail!(
            "{} of {} checks disagree with the oracles",
            report.mismatches.len(),
            report.checks
        );
    }
    println!("ok: {} checks agree with the oracles", report.checks);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Gen(a) => cmd_gen(a),
        Command::Build(a) => cmd_build(a),
        Command::Query(a) => cmd_query(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Verify(a) => cmd_verify(a),
    }
}
