//! The RGRC binary container used for submaps, extracted features, the
//! index, and network weights.
//!
//! Layout, all little-endian: magic `RGRC`, `u32` version, `u32` payload
//! type, `u64` record count, `u32` dimension, then the records. Poses and
//! coordinates are `f64`; embeddings and node features are `f32`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Pose};
use crate::graphnet::{edge_matrix, Enriched, NetDims, NetWeights, SceneGraph};
use crate::retrieval::{Database, IndexRecord};
use crate::submap::{SemanticVoxelGrid, Submap, VoxelCell};

pub const MAGIC: &[u8; 4] = b"RGRC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum PayloadType {
    Submaps = 1,
    Features = 2,
    Index = 3,
    Weights = 4,
}

impl PayloadType {
    fn from_u32(v: u32) -> Result<Self> {
        match v {
            1 => Ok(Self::Submaps),
            2 => Ok(Self::Features),
            3 => Ok(Self::Index),
            4 => Ok(Self::Weights),
            other => Err(Error::Format(format!("unknown payload type {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub payload: PayloadType,
    pub count: u64,
    pub dim: u32,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn header(h: Header) -> Self {
        let mut w = Self::default();
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u32(h.payload as u32);
        w.u64(h.count);
        w.u32(h.dim);
        w
    }

    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn len(&mut self, n: usize) -> Result<()> {
        self.u32(u32::try_from(n).map_err(|_| Error::InvalidInput(format!("length {n} exceeds the container limit")))?);
        Ok(())
    }

    fn point(&mut self, p: &Point3) {
        p.iter().for_each(|&v| self.f64(v));
    }

    fn pose(&mut self, p: &Pose) {
        p.to_row_major_3x4().iter().for_each(|&v| self.f64(v));
    }

    /// Row-major `f32` matrix.
    fn matrix_f32(&mut self, m: &DMatrix<f64>) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f32(m[(i, j)]);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Format("container is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.array()?) as f64)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn point(&mut self) -> Result<Point3> {
        Ok(Point3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    fn pose(&mut self) -> Result<Pose> {
        let mut v = [0.0; 12];
        for x in &mut v {
            *x = self.f64()?;
        }
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let t = Vector3::new(v[3], v[7], v[11]);
        Pose::new(r, t).map_err(|e| Error::Format(format!("stored pose is invalid: {e}")))
    }

    fn matrix_f32(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f32()?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    fn header(&mut self, expected: PayloadType) -> Result<Header> {
        if &self.array::<4>()? != MAGIC {
            return Err(Error::Format("missing RGRC magic".into()));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let payload = PayloadType::from_u32(self.u32()?)?;
        if payload != expected {
            return Err(Error::Format(format!("expected a {expected:?} container, found {payload:?}")));
        }
        Ok(Header { payload, count: self.u64()?, dim: self.u32()? })
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes after the last record", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// Reads only the header of any container.
pub fn read_header(bytes: &[u8]) -> Result<Header> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if &r.array::<4>()? != MAGIC {
        return Err(Error::Format("missing RGRC magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    Ok(Header { payload: PayloadType::from_u32(r.u32()?)?, count: r.u64()?, dim: r.u32()? })
}

/// Submap records: id, timestamp, origin, voxel size, then the cells with
/// `i32` key, point count, centroid, and the non-zero class probabilities as
/// `(u16 class, f64 probability)` pairs, so a round trip is exact.
pub fn encode_submaps(submaps: &[Submap]) -> Result<Vec<u8>> {
    let dim = submaps.first().map_or(0, |s| s.grid.num_classes);
    let mut w = Writer::header(Header { payload: PayloadType::Submaps, count: submaps.len() as u64, dim: dim as u32 });
    for s in submaps {
        if s.grid.num_classes != dim {
            return Err(Error::Mismatch { expected: dim, found: s.grid.num_classes });
        }
        w.u64(s.id);
        w.f64(s.timestamp);
        w.pose(&s.origin);
        w.f64(s.grid.voxel_size);
        w.u64(s.grid.cells.len() as u64);
        for (key, cell) in &s.grid.cells {
            for &k in key {
                w.0.extend_from_slice(&i32::try_from(k).map_err(|_| Error::InvalidInput(format!("voxel key {k} out of range")))?.to_le_bytes());
            }
            w.u32(cell.count);
            w.point(&cell.centroid);
            let nonzero: Vec<(usize, f64)> = cell.probs.iter().copied().enumerate().filter(|&(_, p)| p != 0.0).collect();
            w.u16(nonzero.len() as u16);
            for (c, p) in nonzero {
                w.u16(c as u16);
                w.f64(p);
            }
        }
    }
    Ok(w.0)
}

pub fn decode_submaps(bytes: &[u8]) -> Result<Vec<Submap>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let h = r.header(PayloadType::Submaps)?;
    let dim = h.dim as usize;
    let mut out = Vec::new();
    for _ in 0..h.count {
        let id = r.u64()?;
        let timestamp = r.f64()?;
        let origin = r.pose()?;
        let voxel_size = r.f64()?;
        let n = r.u64()?;
        let mut cells = BTreeMap::new();
        for _ in 0..n {
            let key = [r.i32()? as i64, r.i32()? as i64, r.i32()? as i64];
            let count = r.u32()?;
            let centroid = r.point()?;
            let mut probs = vec![0.0; dim];
            for _ in 0..r.u16()? {
                let c = r.u16()? as usize;
                *probs.get_mut(c).ok_or_else(|| Error::Format(format!("class {c} outside {dim} classes")))? = r.f64()?;
            }
            cells.insert(key, VoxelCell { probs, count, centroid });
        }
        out.push(Submap { id, origin, timestamp, grid: SemanticVoxelGrid { voxel_size, num_classes: dim, cells } });
    }
    r.finish()?;
    Ok(out)
}

/// Feature and index records share one layout: id, timestamp, world pose,
/// alpha, the embedding, then the graph nodes (centroids, classes, local
/// descriptors) and the enriched coordinates and features.
fn encode_records(payload: PayloadType, records: &[IndexRecord]) -> Result<Vec<u8>> {
    let dim = records.first().map_or(0, |r| r.embedding.len());
    let mut w = Writer::header(Header { payload, count: records.len() as u64, dim: dim as u32 });
    for rec in records {
        if rec.embedding.len() != dim {
            return Err(Error::Mismatch { expected: dim, found: rec.embedding.len() });
        }
        let g = &rec.graph;
        w.u64(rec.id);
        w.f64(rec.timestamp);
        w.pose(&rec.world_pose);
        w.f64(g.alpha);
        rec.embedding.iter().for_each(|&v| w.f32(v));
        w.len(g.len())?;
        w.len(g.features.ncols())?;
        let enriched = g.enriched.as_ref();
        w.len(enriched.map_or(0, |e| e.features.ncols()))?;
        w.0.push(enriched.is_some() as u8);
        g.centroids.iter().for_each(|c| w.point(c));
        g.classes.iter().for_each(|&c| w.u16(c));
        w.matrix_f32(&g.features);
        if let Some(e) = enriched {
            e.coords.iter().for_each(|c| w.point(c));
            w.matrix_f32(&e.features);
        }
    }
    Ok(w.0)
}

fn decode_records(payload: PayloadType, bytes: &[u8]) -> Result<Vec<IndexRecord>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let h = r.header(payload)?;
    let dim = h.dim as usize;
    let mut out = Vec::new();
    for _ in 0..h.count {
        let id = r.u64()?;
        let timestamp = r.f64()?;
        let world_pose = r.pose()?;
        let alpha = r.f64()?;
        let embedding = DVector::from_vec((0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?);
        let k = r.len()?;
        let desc_dim = r.len()?;
        let enriched_dim = r.len()?;
        let has_enriched = r.take(1)?[0] != 0;
        let centroids = (0..k).map(|_| r.point()).collect::<Result<Vec<_>>>()?;
        let classes = (0..k).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
        let features = r.matrix_f32(k, desc_dim)?;
        let enriched = if has_enriched {
            let coords = (0..k).map(|_| r.point()).collect::<Result<Vec<_>>>()?;
            Some(Enriched { coords, features: r.matrix_f32(k, enriched_dim)? })
        } else {
            None
        };
        let edges = edge_matrix(&centroids, alpha);
        let graph = SceneGraph { alpha, centroids, classes, features, edges, enriched, global: Some(embedding.clone()) };
        out.push(IndexRecord { id, timestamp, embedding, graph, world_pose });
    }
    r.finish()?;
    Ok(out)
}

pub fn encode_features(records: &[IndexRecord]) -> Result<Vec<u8>> {
    encode_records(PayloadType::Features, records)
}

pub fn decode_features(bytes: &[u8]) -> Result<Vec<IndexRecord>> {
    decode_records(PayloadType::Features, bytes)
}

pub fn encode_index(db: &Database) -> Result<Vec<u8>> {
    encode_records(PayloadType::Index, db.records())
}

/// Rebuilds the database, re-checking id uniqueness and time order.
pub fn decode_index(bytes: &[u8]) -> Result<Database> {
    let mut db = Database::new();
    for rec in decode_records(PayloadType::Index, bytes)? {
        db.insert(rec)?;
    }
    Ok(db)
}

/// Weights: the six network dimensions as `u32`, then every parameter as
/// `f64` in the network's tensor order.
pub fn encode_weights(w: &NetWeights) -> Result<Vec<u8>> {
    let flat = w.to_flat();
    let dim = u32::try_from(flat.len()).map_err(|_| Error::InvalidInput("too many parameters".into()))?;
    let mut out = Writer::header(Header { payload: PayloadType::Weights, count: 1, dim });
    w.dims.to_array().iter().for_each(|&d| out.u32(d));
    flat.iter().for_each(|&v| out.f64(v));
    Ok(out.0)
}

pub fn decode_weights(bytes: &[u8]) -> Result<NetWeights> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let h = r.header(PayloadType::Weights)?;
    if h.count != 1 {
        return Err(Error::Format(format!("weights container holds {} records, expected 1", h.count)));
    }
    let mut dims = [0u32; 6];
    for d in &mut dims {
        *d = r.u32()?;
    }
    let flat = (0..h.dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    NetWeights::from_flat(NetDims::from_array(dims), &flat)
}

macro_rules! file_io {
    ($read:ident, $write:ident, $decode:ident, $encode:ident, $ty:ty, $arg:ty) => {
        pub fn $read(path: &Path) -> Result<$ty> {
            $decode(&fs::read(path)?)
        }

        pub fn $write(path: &Path, value: $arg) -> Result<()> {
            fs::write(path, $encode(value)?)?;
            Ok(())
        }
    };
}

file_io!(read_submaps, write_submaps, decode_submaps, encode_submaps, Vec<Submap>, &[Submap]);
file_io!(read_features, write_features, decode_features, encode_features, Vec<IndexRecord>, &[IndexRecord]);
file_io!(read_index, write_index, decode_index, encode_index, Database, &Database);
file_io!(read_weights, write_weights, decode_weights, encode_weights, NetWeights, &NetWeights);
