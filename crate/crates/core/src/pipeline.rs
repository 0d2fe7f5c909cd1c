//! End-to-end processing of one submap, and pairwise registration of two
//! processed submaps.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::descriptors::DescriptorBackend;
use crate::error::Result;
use crate::graphnet::{build_graph, egnn_forward, gem_pool, Enriched, FeatureSource, NetWeights, SceneGraph, DEFAULT_ALPHA, GEM_FLOOR};
use crate::instances::{cluster, ClusterParams, ObjectInstance, DEFAULT_SAMPLE_SIZE};
use crate::registration::{icp_refine, match_features, ransac_align, IcpParams, RansacParams, TransformEstimate};
use crate::submap::SemanticVoxelGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractParams {
    pub cluster: ClusterParams,
    pub sample_size: usize,
    pub alpha: f64,
}

impl Default for ExtractParams {
    fn default() -> Self {
        Self { cluster: ClusterParams::default(), sample_size: DEFAULT_SAMPLE_SIZE, alpha: DEFAULT_ALPHA }
    }
}

/// Everything derived from one submap.
#[derive(Debug, Clone)]
pub struct Extracted {
    pub instances: Vec<ObjectInstance>,
    /// Graph with enriched features and the global embedding attached.
    pub graph: SceneGraph,
    pub embedding: DVector<f64>,
}

/// Graph with no nodes, used for submaps without any object.
pub fn empty_graph(alpha: f64, descriptor_dim: usize, weights: &NetWeights) -> SceneGraph {
    SceneGraph {
        alpha,
        centroids: Vec::new(),
        classes: Vec::new(),
        features: DMatrix::zeros(0, descriptor_dim),
        edges: DMatrix::zeros(0, 0),
        enriched: Some(Enriched { coords: Vec::new(), features: DMatrix::zeros(0, weights.dims.output) }),
        global: None,
    }
}

/// Cluster, sample and describe the objects, build the graph, run the
/// network and pool. A submap without objects gets an empty graph and the
/// embedding of all-floor features, so it still has a place in the index.
pub fn extract(
    grid: &SemanticVoxelGrid,
    backend: &dyn DescriptorBackend,
    weights: &NetWeights,
    params: &ExtractParams,
) -> Result<Extracted> {
    let instances = cluster(grid, &params.cluster, params.sample_size)?;
    if instances.is_empty() {
        let mut graph = empty_graph(params.alpha, weights.dims.input, weights);
        let floor = DVector::from_element(weights.dims.output, GEM_FLOOR);
        let embedding = &weights.projection * floor;
        graph.global = Some(embedding.clone());
        return Ok(Extracted { instances, graph, embedding });
    }
    let descriptors: Vec<Vec<f64>> = instances.par_iter().map(|o| backend.describe(&o.sampled, o.class_id).0).collect();
    let centroids = instances.iter().map(|o| o.centroid).collect();
    let classes = instances.iter().map(|o| o.class_id).collect();
    let graph = build_graph(centroids, classes, &descriptors, params.alpha)?;
    let mut graph = egnn_forward(&graph, weights)?;
    let enriched = &graph.enriched.as_ref().expect("set by the forward pass").features;
    let embedding = gem_pool(enriched, weights);
    graph.global = Some(embedding.clone());
    Ok(Extracted { instances, graph, embedding })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegisterParams {
    pub ransac: RansacParams,
    pub icp: IcpParams,
    pub features: FeatureSource,
}

/// Coarse alignment of object centroids from mutual descriptor matches.
pub fn register_coarse(query: &Extracted, candidate: &Extracted, params: &RegisterParams) -> Result<TransformEstimate> {
    let corr = match_features(query.graph.matching_features(params.features), candidate.graph.matching_features(params.features));
    ransac_align(&query.graph.centroids, &candidate.graph.centroids, &corr, &params.ransac)
}

/// Coarse alignment refined by ICP on the voxels of the inlier objects.
/// The estimate maps candidate coordinates into the query frame.
pub fn register(query: &Extracted, candidate: &Extracted, params: &RegisterParams) -> Result<TransformEstimate> {
    let coarse = register_coarse(query, candidate, params)?;
    let query_points: Vec<_> = coarse.inliers.iter().flat_map(|c| query.instances[c.query_node].cells.iter().copied()).collect();
    let candidate_points: Vec<_> =
        coarse.inliers.iter().flat_map(|c| candidate.instances[c.candidate_node].cells.iter().copied()).collect();
    Ok(icp_refine(&coarse, &query_points, &candidate_points, &params.icp))
}
