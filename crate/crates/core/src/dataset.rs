//! Synthetic databases and their text file format.
//!
//! File layout (one record per line, whitespace separated):
//!
//! ```text
//! VEC <dim> <n> <seed> [<clusters> <spread>]    POLY <n> <seed>
//! <x1> <x2> ... <x_dim>                         <k> <x1> <y1> ... <xk> <yk>
//! ...                                           ...
//! ```
//!
//! Reals are written in scientific notation with 17 significant digits so a
//! save/load cycle reproduces every coordinate bit for bit. The optional
//! `clusters spread` pair records the clustered-vector generator so query
//! examples can later be drawn from the same distribution.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::metric::{Descriptor, MetricObject, ObjectId, ObjectKind};
use crate::rng::SeededRng;

/// Polygons carry between this many and [`MAX_VERTICES`] vertices.
pub const MIN_VERTICES: usize = 5;
pub const MAX_VERTICES: usize = 15;

/// Largest gap between consecutive polygon vertices: 10% of the unit-square diameter.
pub const MAX_VERTEX_STEP: f64 = 0.1 * std::f64::consts::SQRT_2;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset file is empty")]
    Empty,
    #[error("malformed header `{header}`: {reason}")]
    Header { header: String, reason: String },
    #[error("record {record} (line {line}): {reason}")]
    Record {
        record: usize,
        line: usize,
        reason: String,
    },
    #[error("truncated file: header announces {expected} records, found {found}; record {found} is missing")]
    Truncated { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: ObjectKind,
    pub seed: u64,
    /// The generator that produced the objects, when known.
    pub generator: Option<GeneratorSpec>,
    pub objects: Vec<MetricObject>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// The first `n` objects (ids stay `0..n`).
    pub fn prefix(&self, n: usize) -> Dataset {
        Dataset {
            kind: self.kind,
            seed: self.seed,
            generator: self.generator,
            objects: self.objects[..n.min(self.len())].to_vec(),
        }
    }

    pub fn get(&self, id: ObjectId) -> Option<&MetricObject> {
        self.objects.get(id as usize)
    }

    /// Draws `count` query examples following the database distribution,
    /// from the stream `sample_seed`. Without a known generator, examples are
    /// copies of distinct random database objects.
    pub fn sample_queries(
        &self,
        count: usize,
        sample_seed: u64,
    ) -> Result<Vec<MetricObject>, DatasetError> {
        match &self.generator {
            Some(g) => g.sample_like(count, self.seed, sample_seed),
            None => {
                if count > self.len() {
                    return Err(DatasetError::InvalidParams(format!(
                        "cannot draw {count} distinct examples from {} objects",
                        self.len()
                    )));
                }
                let mut rng = SeededRng::new(sample_seed);
                Ok(rng
                    .sample_indices(self.len(), count)
                    .into_iter()
                    .enumerate()
                    .map(|(i, idx)| MetricObject {
                        id: i as ObjectId,
                        descriptor: self.objects[idx].descriptor.clone(),
                    })
                    .collect())
            }
        }
    }
}

/// How a database (and query examples that follow its distribution) are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeneratorSpec {
    Polygons,
    Clustered {
        dim: usize,
        clusters: usize,
        spread: f64,
    },
}

impl GeneratorSpec {
    pub fn kind(&self) -> ObjectKind {
        match self {
            GeneratorSpec::Polygons => ObjectKind::Polygon,
            GeneratorSpec::Clustered { dim, .. } => ObjectKind::Vector { dim: *dim },
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset, DatasetError> {
        match *self {
            GeneratorSpec::Polygons => generate_polygons(n, seed),
            GeneratorSpec::Clustered {
                dim,
                clusters,
                spread,
            } => generate_vectors(n, dim, clusters, spread, seed),
        }
    }

    /// Draws `count` fresh objects from the same distribution as the dataset
    /// generated with `dataset_seed`, using the independent stream `sample_seed`.
    /// For clustered vectors the cluster centers are shared with the dataset.
    /// Returned ids are `0..count`.
    pub fn sample_like(
        &self,
        count: usize,
        dataset_seed: u64,
        sample_seed: u64,
    ) -> Result<Vec<MetricObject>, DatasetError> {
        match *self {
            GeneratorSpec::Polygons => {
                let mut rng = SeededRng::new(sample_seed);
                Ok((0..count)
                    .map(|i| MetricObject::polygon(i as ObjectId, random_polygon(&mut rng)))
                    .collect())
            }
            GeneratorSpec::Clustered {
                dim,
                clusters,
                spread,
            } => {
                check_vector_params(count.max(clusters), dim, clusters, spread)?;
                let mut rng = SeededRng::new(dataset_seed);
                let centers = cluster_centers(&mut rng, dim, clusters);
                let mut members = SeededRng::new(sample_seed);
                Ok(clustered_members(&mut members, &centers, count, spread))
            }
        }
    }
}

fn random_polygon(rng: &mut SeededRng) -> Vec<[f64; 2]> {
    let count = MIN_VERTICES + rng.below(MAX_VERTICES - MIN_VERTICES + 1);
    let mut vertices = Vec::with_capacity(count);
    let mut prev = [rng.next_f64(), rng.next_f64()];
    vertices.push(prev);
    while vertices.len() < count {
        // rejection sampling from the bounding box of the disc around `prev`
        let x = prev[0] + (2.0 * rng.next_f64() - 1.0) * MAX_VERTEX_STEP;
        let y = prev[1] + (2.0 * rng.next_f64() - 1.0) * MAX_VERTEX_STEP;
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            continue;
        }
        let (dx, dy) = (x - prev[0], y - prev[1]);
        if (dx * dx + dy * dy).sqrt() > MAX_VERTEX_STEP {
            continue;
        }
        prev = [x, y];
        vertices.push(prev);
    }
    vertices
}

/// `n` random polygons in the unit square with 5 to 15 vertices each.
pub fn generate_polygons(n: usize, seed: u64) -> Result<Dataset, DatasetError> {
    if n == 0 {
        return Err(DatasetError::InvalidParams("n must be at least 1".into()));
    }
    let mut rng = SeededRng::new(seed);
    let objects = (0..n)
        .map(|i| MetricObject::polygon(i as ObjectId, random_polygon(&mut rng)))
        .collect();
    Ok(Dataset {
        kind: ObjectKind::Polygon,
        seed,
        generator: Some(GeneratorSpec::Polygons),
        objects,
    })
}

fn check_vector_params(
    n: usize,
    dim: usize,
    clusters: usize,
    spread: f64,
) -> Result<(), DatasetError> {
    if n == 0 || dim == 0 {
        return Err(DatasetError::InvalidParams(
            "n and d must be at least 1".into(),
        ));
    }
    if clusters == 0 || clusters > n {
        return Err(DatasetError::InvalidParams(format!(
            "cluster count {clusters} must lie in 1..={n}"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(DatasetError::InvalidParams(format!(
            "spread {spread} must be a finite non-negative number"
        )));
    }
    Ok(())
}

fn cluster_centers(rng: &mut SeededRng, dim: usize, clusters: usize) -> Vec<Vec<f64>> {
    (0..clusters)
        .map(|_| (0..dim).map(|_| rng.next_f64()).collect())
        .collect()
}

fn clustered_members(
    rng: &mut SeededRng,
    centers: &[Vec<f64>],
    n: usize,
    spread: f64,
) -> Vec<MetricObject> {
    (0..n)
        .map(|i| {
            let center = &centers[rng.below(centers.len())];
            let coords = center
                .iter()
                .map(|&c| (c + spread * rng.gaussian()).clamp(0.0, 1.0))
                .collect();
            MetricObject::vector(i as ObjectId, coords)
        })
        .collect()
}

/// `n` vectors in `[0,1]^d`, Gaussian (per-coordinate deviation `spread`)
/// around `clusters` uniformly placed centers, clamped to the unit cube.
pub fn generate_vectors(
    n: usize,
    dim: usize,
    clusters: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    check_vector_params(n, dim, clusters, spread)?;
    let mut rng = SeededRng::new(seed);
    let centers = cluster_centers(&mut rng, dim, clusters);
    let objects = clustered_members(&mut rng, &centers, n, spread);
    Ok(Dataset {
        kind: ObjectKind::Vector { dim },
        seed,
        generator: Some(GeneratorSpec::Clustered {
            dim,
            clusters,
            spread,
        }),
        objects,
    })
}

fn fmt_real(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").expect("writing to a String cannot fail");
}

/// Renders a dataset in the text format described at module level.
pub fn to_text(ds: &Dataset) -> String {
    let mut out = String::new();
    match ds.kind {
        ObjectKind::Vector { dim } => {
            write!(out, "VEC {dim} {} {}", ds.len(), ds.seed).unwrap();
            if let Some(GeneratorSpec::Clustered {
                clusters, spread, ..
            }) = ds.generator
            {
                write!(out, " {clusters} ").unwrap();
                fmt_real(&mut out, spread);
            }
            out.push('\n');
        }
        ObjectKind::Polygon => writeln!(out, "POLY {} {}", ds.len(), ds.seed).unwrap(),
    }
    for obj in &ds.objects {
        match &obj.descriptor {
            Descriptor::Vector(v) => {
                for (i, &x) in v.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    fmt_real(&mut out, x);
                }
            }
            Descriptor::Polygon(p) => {
                write!(out, "{}", p.len()).unwrap();
                for v in p {
                    out.push(' ');
                    fmt_real(&mut out, v[0]);
                    out.push(' ');
                    fmt_real(&mut out, v[1]);
                }
            }
        }
        out.push('\n');
    }
    out
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    fs::write(path, to_text(ds))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    parse_text(&fs::read_to_string(path)?)
}

fn header_err(header: &str, reason: impl Into<String>) -> DatasetError {
    DatasetError::Header {
        header: header.to_string(),
        reason: reason.into(),
    }
}

fn parse_num<T: std::str::FromStr>(
    header: &str,
    tok: Option<&str>,
    what: &str,
) -> Result<T, DatasetError> {
    let tok = tok.ok_or_else(|| header_err(header, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| header_err(header, format!("invalid {what} `{tok}`")))
}

/// Parses the text format produced by [`to_text`].
pub fn parse_text(text: &str) -> Result<Dataset, DatasetError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(DatasetError::Empty)?;
    let mut toks = header.split_whitespace();
    let (kind, n, seed, generator) = match toks.next() {
        Some("VEC") => {
            let dim: usize = parse_num(header, toks.next(), "dimension")?;
            if dim == 0 {
                return Err(header_err(header, "dimension must be positive"));
            }
            let n = parse_num(header, toks.next(), "record count")?;
            let seed = parse_num(header, toks.next(), "seed")?;
            let generator = match toks.next() {
                None => None,
                Some(tok) => {
                    let clusters = parse_num(header, Some(tok), "cluster count")?;
                    let spread = parse_num(header, toks.next(), "spread")?;
                    check_vector_params(clusters, dim, clusters, spread)
                        .map_err(|e| header_err(header, e.to_string()))?;
                    Some(GeneratorSpec::Clustered {
                        dim,
                        clusters,
                        spread,
                    })
                }
            };
            (ObjectKind::Vector { dim }, n, seed, generator)
        }
        Some("POLY") => {
            let n = parse_num(header, toks.next(), "record count")?;
            let seed = parse_num(header, toks.next(), "seed")?;
            (ObjectKind::Polygon, n, seed, Some(GeneratorSpec::Polygons))
        }
        _ => {
            return Err(header_err(
                header,
                "expected `VEC d n seed [clusters spread]` or `POLY n seed`",
            ))
        }
    };
    if toks.next().is_some() {
        return Err(header_err(header, "trailing tokens"));
    }
    if n == 0 {
        return Err(header_err(header, "record count must be positive"));
    }

    let mut objects = Vec::with_capacity(n);
    for (line_idx, line) in lines {
        let record = objects.len();
        let err = |reason: String| DatasetError::Record {
            record,
            line: line_idx + 1,
            reason,
        };
        if record == n {
            return Err(err(format!(
                "unexpected extra record beyond the announced {n}"
            )));
        }
        let reals: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| err(format!("invalid number `{t}`")))
            })
            .collect::<Result<_, _>>()?;
        if let Some(bad) = reals.iter().find(|x| !x.is_finite()) {
            return Err(err(format!("non-finite coordinate {bad}")));
        }
        let id = record as ObjectId;
        let obj = match kind {
            ObjectKind::Vector { dim } => {
                if reals.len() != dim {
                    return Err(err(format!(
                        "dimension mismatch: expected {dim} coordinates, found {}",
                        reals.len()
                    )));
                }
                MetricObject::vector(id, reals)
            }
            ObjectKind::Polygon => {
                let k = reals.first().copied().unwrap_or(0.0);
                if k.fract() != 0.0 || !(MIN_VERTICES as f64..=MAX_VERTICES as f64).contains(&k) {
                    return Err(err(format!(
                        "vertex count {k} outside {MIN_VERTICES}..={MAX_VERTICES}"
                    )));
                }
                let k = k as usize;
                if reals.len() != 1 + 2 * k {
                    return Err(err(format!(
                        "expected {} coordinates for {k} vertices, found {}",
                        2 * k,
                        reals.len() - 1
                    )));
                }
                let vertices = reals[1..].chunks_exact(2).map(|c| [c[0], c[1]]).collect();
                MetricObject::polygon(id, vertices)
            }
        };
        objects.push(obj);
    }
    if objects.len() < n {
        return Err(DatasetError::Truncated {
            expected: n,
            found: objects.len(),
        });
    }
    Ok(Dataset {
        kind,
        seed,
        generator,
        objects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_gap(p: &[[f64; 2]]) -> f64 {
        p.windows(2)
            .map(|w| ((w[0][0] - w[1][0]).powi(2) + (w[0][1] - w[1][1]).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }

    #[test]
    fn polygon_generator_contract() {
        let ds = generate_polygons(500, 3).unwrap();
        assert_eq!(ds.len(), 500);
        for (i, o) in ds.objects.iter().enumerate() {
            assert_eq!(o.id as usize, i);
            let Descriptor::Polygon(p) = &o.descriptor else {
                panic!()
            };
            assert!((MIN_VERTICES..=MAX_VERTICES).contains(&p.len()));
            assert!(max_gap(p) <= MAX_VERTEX_STEP + 1e-12);
            assert!(p
                .iter()
                .all(|v| (0.0..=1.0).contains(&v[0]) && (0.0..=1.0).contains(&v[1])));
        }
        assert!(generate_polygons(0, 1).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(
            to_text(&generate_polygons(1000, 42).unwrap()),
            to_text(&generate_polygons(1000, 42).unwrap())
        );
        assert_eq!(
            generate_vectors(100, 2, 4, 0.05, 7).unwrap(),
            generate_vectors(100, 2, 4, 0.05, 7).unwrap()
        );
        assert_ne!(
            generate_vectors(100, 2, 4, 0.05, 7).unwrap(),
            generate_vectors(100, 2, 4, 0.05, 8).unwrap()
        );
    }

    #[test]
    fn zero_spread_collapses_to_center() {
        let ds = generate_vectors(10, 12, 1, 0.0, 5).unwrap();
        for o in &ds.objects {
            assert_eq!(o.descriptor, ds.objects[0].descriptor);
        }
    }

    #[test]
    fn vector_params_are_validated() {
        assert!(generate_vectors(0, 2, 1, 0.1, 0).is_err());
        assert!(generate_vectors(5, 0, 1, 0.1, 0).is_err());
        assert!(generate_vectors(5, 2, 0, 0.1, 0).is_err());
        assert!(generate_vectors(5, 2, 6, 0.1, 0).is_err());
        assert!(generate_vectors(5, 2, 2, -0.1, 0).is_err());
    }

    #[test]
    fn sampled_queries_share_cluster_centers() {
        let spec = GeneratorSpec::Clustered {
            dim: 4,
            clusters: 1,
            spread: 0.0,
        };
        let ds = spec.generate(5, 11).unwrap();
        let qs = spec.sample_like(3, 11, 99).unwrap();
        assert!(qs.iter().all(|q| q.descriptor == ds.objects[0].descriptor));
        let polys = GeneratorSpec::Polygons.sample_like(4, 1, 2).unwrap();
        assert_eq!(polys.len(), 4);
    }

    #[test]
    fn load_errors() {
        assert!(matches!(parse_text(""), Err(DatasetError::Empty)));
        assert!(matches!(
            parse_text("VEX 2 1 0\n"),
            Err(DatasetError::Header { .. })
        ));
        assert!(matches!(
            parse_text("VEC 2 x 0\n"),
            Err(DatasetError::Header { .. })
        ));
        match parse_text("VEC 2 3 0\n1 2\n3 4\n") {
            Err(DatasetError::Truncated {
                expected: 3,
                found: 2,
            }) => {}
            other => panic!("{other:?}"),
        }
        match parse_text("VEC 2 2 0\n1 2\n3\n") {
            Err(DatasetError::Record {
                record: 1, line: 3, ..
            }) => {}
            other => panic!("{other:?}"),
        }
        let four = "POLY 1 0\n4 0 0 0.1 0 0.1 0.1 0 0.1\n";
        assert!(matches!(
            parse_text(four),
            Err(DatasetError::Record { record: 0, .. })
        ));
        let sixteen = format!("POLY 1 0\n16{}\n", " 0.5 0.5".repeat(16));
        assert!(matches!(
            parse_text(&sixteen),
            Err(DatasetError::Record { .. })
        ));
        assert!(parse_text("VEC 1 1 0\n1\n2\n").is_err());
    }

    #[test]
    fn header_records_the_generator() {
        let ds = generate_vectors(20, 3, 4, 0.25, 6).unwrap();
        let text = to_text(&ds);
        assert!(text.starts_with("VEC 3 20 6 4 2.5000000000000000e-1\n"));
        let back = parse_text(&text).unwrap();
        assert_eq!(
            back.sample_queries(5, 1).unwrap(),
            ds.sample_queries(5, 1).unwrap()
        );
        assert!(parse_text("VEC 2 1 0 3\n1 2\n").is_err());
    }

    #[test]
    fn unknown_generator_samples_database_objects() {
        let ds = parse_text("VEC 1 3 0\n1\n2\n3\n").unwrap();
        assert_eq!(ds.generator, None);
        let qs = ds.sample_queries(3, 4).unwrap();
        let mut coords: Vec<Descriptor> = qs.into_iter().map(|q| q.descriptor).collect();
        coords.sort_by(|a, b| format!("{a:?}").cmp(&format!("{b:?}")));
        assert_eq!(
            coords,
            ds.objects
                .iter()
                .map(|o| o.descriptor.clone())
                .collect::<Vec<_>>()
        );
        assert!(ds.sample_queries(4, 4).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("polys.txt");
        let ds = generate_polygons(50, 9).unwrap();
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    proptest! {
        #[test]
        fn text_round_trip_is_exact(n in 1usize..40, dim in 1usize..8, seed: u64, poly: bool) {
            let ds = if poly {
                generate_polygons(n, seed).unwrap()
            } else {
                generate_vectors(n, dim, 1 + (seed as usize % n), 0.2, seed).unwrap()
            };
            prop_assert_eq!(parse_text(&to_text(&ds)).unwrap(), ds);
        }

        #[test]
        fn clamped_coordinates(n in 1usize..50, d in 1usize..6, spread in 0.0f64..2.0, seed: u64) {
            let ds = generate_vectors(n, d, 1, spread, seed).unwrap();
            for o in &ds.objects {
                let Descriptor::Vector(v) = &o.descriptor else { unreachable!() };
                prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }
    }
}
