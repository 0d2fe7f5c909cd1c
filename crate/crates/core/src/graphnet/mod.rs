//! Object scene graphs and the network that turns them into embeddings.
//!
//! A graph is fully connected: every pair of objects carries the edge value
//! `‖c_i − c_j‖ / alpha`. The equivariant message-passing network enriches
//! node features and coordinates, GeM pooling reduces the nodes to a single
//! global embedding, and a tensor head scores embedding pairs.

mod egnn;
mod head;
pub mod weights;

use nalgebra::{DMatrix, DVector};

pub use egnn::egnn_forward;
pub use head::{gem_pool, gem_pool_raw, tnn_score, GEM_FLOOR};
pub use weights::{NetDims, NetWeights, EMBEDDING_DIM, ENRICHED_DIM, TNN_SLICES};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::instances::ObjectInstance;

/// Edge normalizer used when no training split is available.
pub const DEFAULT_ALPHA: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Enriched {
    pub coords: Vec<Point3>,
    /// `K × 512` node features.
    pub features: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub alpha: f64,
    pub centroids: Vec<Point3>,
    pub classes: Vec<u16>,
    /// `K × 128` local descriptors, one row per node.
    pub features: DMatrix<f64>,
    /// Dense symmetric `K × K` edge values with zero diagonal.
    pub edges: DMatrix<f64>,
    pub enriched: Option<Enriched>,
    pub global: Option<DVector<f64>>,
}

impl SceneGraph {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Node features used for correspondence search.
    pub fn matching_features(&self, source: FeatureSource) -> &DMatrix<f64> {
        match (source, &self.enriched) {
            (FeatureSource::Enriched, Some(e)) => &e.features,
            _ => &self.features,
        }
    }
}

/// Which node features drive descriptor matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureSource {
    /// Enriched features when present, local descriptors otherwise.
    Enriched,
    #[default]
    Local,
}

impl std::str::FromStr for FeatureSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "enriched" => Ok(Self::Enriched),
            "local" => Ok(Self::Local),
            other => Err(Error::Config(format!("unknown feature source '{other}'"))),
        }
    }
}

/// Edge matrix for a set of keypoints.
pub fn edge_matrix(centroids: &[Point3], alpha: f64) -> DMatrix<f64> {
    let k = centroids.len();
    DMatrix::from_fn(k, k, |i, j| if i == j { 0.0 } else { (centroids[i] - centroids[j]).norm() / alpha })
}

/// Builds the fully connected graph from keypoints and their descriptors.
pub fn build_graph(centroids: Vec<Point3>, classes: Vec<u16>, descriptors: &[Vec<f64>], alpha: f64) -> Result<SceneGraph> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    if centroids.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if descriptors.len() != centroids.len() || classes.len() != centroids.len() {
        return Err(Error::Mismatch { expected: centroids.len(), found: descriptors.len().min(classes.len()) });
    }
    let dim = descriptors[0].len();
    if let Some(bad) = descriptors.iter().find(|d| d.len() != dim) {
        return Err(Error::Mismatch { expected: dim, found: bad.len() });
    }
    let features = DMatrix::from_fn(centroids.len(), dim, |i, j| descriptors[i][j]);
    let edges = edge_matrix(&centroids, alpha);
    Ok(SceneGraph { alpha, centroids, classes, features, edges, enriched: None, global: None })
}

/// Largest distance between any two cells of one instance.
pub fn instance_extent(instance: &ObjectInstance) -> f64 {
    let cells = &instance.cells;
    let mut best = 0.0f64;
    for (i, a) in cells.iter().enumerate() {
        for b in &cells[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

/// Linearly interpolated quantile of `values` (`q` in `[0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Edge normalizer from a training split: the 95% quantile of per-instance
/// extents.
pub fn alpha_from_instances<'a>(instances: impl IntoIterator<Item = &'a ObjectInstance>) -> Option<f64> {
    let extents: Vec<f64> = instances.into_iter().map(instance_extent).collect();
    quantile(&extents, 0.95).filter(|a| *a > 0.0)
}
