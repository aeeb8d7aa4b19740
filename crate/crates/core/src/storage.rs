//! Paged index files.
//!
//! A file is a sequence of equally sized pages. The header region starts at
//! page 0 and may span several pages when the pivots are large; node `i` is
//! stored in page `header_pages + i`. All integers and floats are
//! little-endian.
//!
//! Header layout:
//!
//! ```text
//! magic          8 bytes   "MTREE1\0\0" or "PMTREE1\0"
//! page_size      u32
//! header_pages   u32
//! capacity       u32
//! metric         u8        0 = L2 over vectors, 1 = Hausdorff over polygons
//! dimension      u32       vector dimension, 0 for polygons
//! root           u32       node id of the root
//! node_count     u32
//! object_count   u64
//! pivot_count    u32       PM-tree only
//! inner_pivots   u32       PM-tree only
//! pivots         object*   PM-tree only
//! ```
//!
//! Node page: `level` (u8, 0 = leaf), entry count (u32), then the entries.
//! Routing entry: object, radius, to-parent distance (f64s), child (u32),
//! `inner_pivots` rings as (min, max) f64 pairs. Ground entry: object,
//! to-parent distance, `pivot_count` pivot distances.
//!
//! Object: id (u32), then `dimension` f64s for vectors, or a vertex count
//! (u32) followed by x, y pairs for polygons.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::metric::{Descriptor, MetricObject, ObjectKind};
use crate::mtree::{GroundEntry, MetricTree, Node, NodeId, Ring, RoutingEntry};
use crate::pmtree::PivotSet;

pub const MTREE_MAGIC: &[u8; 8] = b"MTREE1\0\0";
pub const PMTREE_MAGIC: &[u8; 8] = b"PMTREE1\0";

/// Smallest page size ever written.
pub const MIN_PAGE_SIZE: usize = 4096;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not an index file (bad magic)")]
    BadMagic,
    #[error("corrupt index file: {0}")]
    Corrupt(String),
}

fn corrupt(msg: impl Into<String>) -> StorageError {
    StorageError::Corrupt(msg.into())
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn object(&mut self, o: &MetricObject) {
        self.u32(o.id);
        match &o.descriptor {
            Descriptor::Vector(v) => v.iter().for_each(|&x| self.f64(x)),
            Descriptor::Polygon(p) => {
                self.u32(p.len() as u32);
                for [x, y] in p {
                    self.f64(*x);
                    self.f64(*y);
                }
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N], StorageError> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| corrupt("unexpected end of page"))?;
        self.pos = end;
        Ok(bytes.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, StorageError> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, StorageError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, StorageError> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64, StorageError> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn object(&mut self, kind: ObjectKind) -> Result<MetricObject, StorageError> {
        let id = self.u32()?;
        let descriptor = match kind {
            ObjectKind::Vector { dim } => {
                Descriptor::Vector((0..dim).map(|_| self.f64()).collect::<Result<_, _>>()?)
            }
            ObjectKind::Polygon => {
                let k = self.u32()? as usize;
                if k == 0 || k > self.buf.len() {
                    return Err(corrupt(format!(
                        "polygon {id} has an invalid vertex count {k}"
                    )));
                }
                let verts = (0..k)
                    .map(|_| Ok([self.f64()?, self.f64()?]))
                    .collect::<Result<_, StorageError>>()?;
                Descriptor::Polygon(verts)
            }
        };
        Ok(MetricObject { id, descriptor })
    }
}

fn encode_node(node: &Node) -> Vec<u8> {
    let mut w = Writer::default();
    match node {
        Node::Leaf(entries) => {
            w.u8(0);
            w.u32(entries.len() as u32);
            for g in entries {
                w.object(&g.object);
                w.f64(g.parent_dist);
                g.pivot_dists.iter().for_each(|&d| w.f64(d));
            }
        }
        Node::Inner(entries) => {
            w.u8(1);
            w.u32(entries.len() as u32);
            for e in entries {
                w.object(&e.center);
                w.f64(e.radius);
                w.f64(e.parent_dist);
                w.u32(e.child);
                for r in &e.rings {
                    w.f64(r.min);
                    w.f64(r.max);
                }
            }
        }
    }
    w.buf
}

/// Serializes a tree into its paged file image.
pub fn encode_index(tree: &MetricTree) -> Vec<u8> {
    let pivots = tree.pivots();
    let mut head = Writer::default();
    head.buf.extend_from_slice(if pivots.is_empty() {
        MTREE_MAGIC
    } else {
        PMTREE_MAGIC
    });
    // page size and header page count are patched in below
    head.u32(0);
    head.u32(0);
    head.u32(tree.capacity() as u32);
    let (metric, dim) = match tree.kind() {
        ObjectKind::Vector { dim } => (0u8, dim as u32),
        ObjectKind::Polygon => (1u8, 0),
    };
    head.u8(metric);
    head.u32(dim);
    head.u32(tree.root());
    head.u32(tree.node_count() as u32);
    head.u64(tree.len() as u64);
    if !pivots.is_empty() {
        head.u32(pivots.len() as u32);
        head.u32(pivots.inner as u32);
        pivots.objects.iter().for_each(|p| head.object(p));
    }

    let nodes: Vec<Vec<u8>> = tree.nodes.iter().map(encode_node).collect();
    let largest = nodes.iter().map(Vec::len).max().unwrap_or(0);
    let page_size = largest.max(MIN_PAGE_SIZE).next_power_of_two();
    let header_pages = head.buf.len().div_ceil(page_size).max(1);
    head.buf[8..12].copy_from_slice(&(page_size as u32).to_le_bytes());
    head.buf[12..16].copy_from_slice(&(header_pages as u32).to_le_bytes());

    let mut out = head.buf;
    out.resize(header_pages * page_size, 0);
    for node in nodes {
        let start = out.len();
        out.extend_from_slice(&node);
        out.resize(start + page_size, 0);
    }
    out
}

/// Rebuilds a tree from a paged file image.
pub fn decode_index(bytes: &[u8]) -> Result<MetricTree, StorageError> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 8] = r.take().map_err(|_| StorageError::BadMagic)?;
    let has_pivots = match &magic {
        m if m == MTREE_MAGIC => false,
        m if m == PMTREE_MAGIC => true,
        _ => return Err(StorageError::BadMagic),
    };
    let page_size = r.u32()? as usize;
    let header_pages = r.u32()? as usize;
    let capacity = r.u32()? as usize;
    let kind = match (r.u8()?, r.u32()? as usize) {
        (0, dim) if dim > 0 => ObjectKind::Vector { dim },
        (1, 0) => ObjectKind::Polygon,
        (m, d) => return Err(corrupt(format!("unknown metric {m} with dimension {d}"))),
    };
    let root = r.u32()?;
    let node_count = r.u32()? as usize;
    let len = r.u64()? as usize;
    if page_size < MIN_PAGE_SIZE || header_pages == 0 || capacity < 4 {
        return Err(corrupt("invalid page size, header size or capacity"));
    }
    let expected = (header_pages + node_count) * page_size;
    if bytes.len() != expected {
        return Err(corrupt(format!(
            "file holds {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    if root as usize >= node_count {
        return Err(corrupt(format!("root {root} outside {node_count} nodes")));
    }
    let pivots = if has_pivots {
        let count = r.u32()? as usize;
        let inner = r.u32()? as usize;
        if inner > count {
            return Err(corrupt("more inner pivots than pivots"));
        }
        let objects = (0..count)
            .map(|_| r.object(kind))
            .collect::<Result<_, _>>()?;
        PivotSet { objects, inner }
    } else {
        PivotSet::empty()
    };
    if r.pos > header_pages * page_size {
        return Err(corrupt("header overflows its pages"));
    }

    let mut nodes = Vec::with_capacity(node_count);
    let mut objects = 0usize;
    for i in 0..node_count {
        let start = (header_pages + i) * page_size;
        let mut r = Reader::new(&bytes[start..start + page_size]);
        let level = r.u8()?;
        let count = r.u32()? as usize;
        if count > capacity {
            return Err(corrupt(format!(
                "node {i} holds {count} entries, capacity is {capacity}"
            )));
        }
        let node = match level {
            0 => {
                let mut entries = Vec::with_capacity(count);
                for _ in 0..count {
                    let object = r.object(kind)?;
                    let parent_dist = r.f64()?;
                    let pivot_dists = (0..pivots.len())
                        .map(|_| r.f64())
                        .collect::<Result<_, _>>()?;
                    entries.push(GroundEntry {
                        object,
                        parent_dist,
                        pivot_dists,
                    });
                }
                objects += count;
                Node::Leaf(entries)
            }
            1 => {
                let mut entries = Vec::with_capacity(count);
                for _ in 0..count {
                    let center = r.object(kind)?;
                    let radius = r.f64()?;
                    let parent_dist = r.f64()?;
                    let child: NodeId = r.u32()?;
                    if child as usize >= node_count {
                        return Err(corrupt(format!("node {i} points to missing node {child}")));
                    }
                    let rings = (0..pivots.inner)
                        .map(|_| {
                            Ok(Ring {
                                min: r.f64()?,
                                max: r.f64()?,
                            })
                        })
                        .collect::<Result<_, StorageError>>()?;
                    entries.push(RoutingEntry {
                        center,
                        radius,
                        parent_dist,
                        child,
                        rings,
                    });
                }
                Node::Inner(entries)
            }
            other => return Err(corrupt(format!("node {i} has unknown level {other}"))),
        };
        nodes.push(node);
    }
    if objects != len {
        return Err(corrupt(format!(
            "leaves hold {objects} objects, header says {len}"
        )));
    }
    Ok(MetricTree {
        kind,
        capacity,
        nodes,
        root,
        len,
        pivots,
    })
}

pub fn save_index(tree: &MetricTree, path: impl AsRef<Path>) -> Result<(), StorageError> {
    fs::write(path, encode_index(tree))?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<MetricTree, StorageError> {
    decode_index(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_polygons, generate_vectors};

    #[test]
    fn mtree_round_trip() {
        let ds = generate_vectors(600, 7, 5, 0.05, 3).unwrap();
        let (t, _) = MetricTree::build(&ds, 9).unwrap();
        let bytes = encode_index(&t);
        assert_eq!(&bytes[..8], MTREE_MAGIC);
        assert_eq!(bytes.len() % MIN_PAGE_SIZE, 0);
        assert_eq!(decode_index(&bytes).unwrap(), t);
    }

    #[test]
    fn pmtree_round_trip_with_large_pages() {
        let ds = generate_polygons(400, 3).unwrap();
        let (t, _) = MetricTree::build_pm_with_selection(&ds, 20, 64, 0.5, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poly.pmt");
        save_index(&t, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], PMTREE_MAGIC);
        let page = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert!(
            page > MIN_PAGE_SIZE,
            "ground entries with 64 pivot distances need bigger pages"
        );
        assert_eq!(load_index(&path).unwrap(), t);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let ds = generate_vectors(50, 3, 2, 0.05, 1).unwrap();
        let (t, _) = MetricTree::build(&ds, 4).unwrap();
        let bytes = encode_index(&t);
        assert!(matches!(
            decode_index(b"nonsense"),
            Err(StorageError::BadMagic)
        ));
        assert!(matches!(
            decode_index(&bytes[..bytes.len() - 1]),
            Err(StorageError::Corrupt(_))
        ));
        let mut bad_level = bytes.clone();
        bad_level[MIN_PAGE_SIZE] = 7;
        assert!(matches!(
            decode_index(&bad_level),
            Err(StorageError::Corrupt(_))
        ));
        assert!(load_index("/nonexistent/index.mt").is_err());
    }
}
