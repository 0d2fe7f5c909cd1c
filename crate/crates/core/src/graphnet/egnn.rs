use nalgebra::{DMatrix, Vector3};

use super::weights::{EgnnLayer, NetWeights};
use super::{Enriched, SceneGraph};
use crate::error::{Error, Result};

#[inline]
fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_inplace(m: &mut DMatrix<f64>) {
    m.iter_mut().for_each(|v| *v = silu(*v));
}

/// One layer over all ordered pairs `(i, j)`, `i ≠ j`, listed row-major.
///
/// Squared distances enter the messages in units of `alpha²` so they share
/// a scale with the edge values. Messages see positions only through squared distances,
/// and positions move along difference vectors, which keeps features
/// invariant and coordinates equivariant under rigid motion.
fn layer_forward(
    layer: &EgnnLayer,
    h: &DMatrix<f64>,
    x: &[Vector3<f64>],
    edges: &DMatrix<f64>,
    inv_alpha2: f64,
) -> (DMatrix<f64>, Vec<Vector3<f64>>) {
    let k = x.len();
    let hidden = h.ncols();
    if k < 2 {
        // No neighbours: the aggregated message is zero.
        let mut input = DMatrix::zeros(k, 2 * hidden);
        input.columns_mut(0, hidden).copy_from(h);
        let mut upd = layer.node1.forward(&input);
        silu_inplace(&mut upd);
        return (h + layer.node2.forward(&upd), x.to_vec());
    }

    let w = &layer.edge1.weight;
    let src = h * w.rows(0, hidden);
    let dst = h * w.rows(hidden, hidden);
    let w_dist = w.row(2 * hidden);
    let w_edge = w.row(2 * hidden + 1);
    let bias = layer.edge1.bias.transpose();

    let n_edges = k * (k - 1);
    let mut pre = DMatrix::zeros(n_edges, hidden);
    let mut diffs = Vec::with_capacity(n_edges);
    let mut row = 0;
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let diff = x[i] - x[j];
            let d2 = diff.norm_squared() * inv_alpha2;
            let e = edges[(i, j)];
            let mut r = pre.row_mut(row);
            r += src.row(i) + dst.row(j) + w_dist * d2 + w_edge * e + &bias;
            diffs.push(diff);
            row += 1;
        }
    }
    silu_inplace(&mut pre);
    let mut messages = layer.edge2.forward(&pre);
    silu_inplace(&mut messages);

    let mut gate = layer.coord1.forward(&messages);
    silu_inplace(&mut gate);
    let gate = layer.coord2.forward(&gate);

    let norm = 1.0 / (k - 1) as f64;
    let mut new_x = x.to_vec();
    let mut agg = DMatrix::zeros(k, hidden);
    for i in 0..k {
        let rows = i * (k - 1)..(i + 1) * (k - 1);
        let mut shift = Vector3::zeros();
        for r in rows.clone() {
            shift += diffs[r] * gate[(r, 0)].tanh();
        }
        new_x[i] += shift * norm;
        let mut acc = agg.row_mut(i);
        for r in rows {
            acc += messages.row(r);
        }
        acc *= norm;
    }

    let mut input = DMatrix::zeros(k, 2 * hidden);
    input.columns_mut(0, hidden).copy_from(h);
    input.columns_mut(hidden, hidden).copy_from(&agg);
    let mut upd = layer.node1.forward(&input);
    silu_inplace(&mut upd);
    (h + layer.node2.forward(&upd), new_x)
}

/// Runs the message-passing stack and attaches enriched coordinates and
/// `K × 512` features to a copy of `graph`.
pub fn egnn_forward(graph: &SceneGraph, weights: &NetWeights) -> Result<SceneGraph> {
    let dims = weights.dims;
    if graph.features.ncols() != dims.input {
        return Err(Error::Config(format!(
            "node features have {} dims, network expects {}",
            graph.features.ncols(),
            dims.input
        )));
    }
    if weights.layers.len() != dims.layers || weights.input.output_dim() != dims.hidden {
        return Err(Error::Config("network weights do not match their declared dims".into()));
    }

    let inv_alpha2 = 1.0 / (graph.alpha * graph.alpha);
    let mut x: Vec<Vector3<f64>> = graph.centroids.clone();
    let mut h = weights.input.forward(&graph.features);
    for layer in &weights.layers {
        let (nh, nx) = layer_forward(layer, &h, &x, &graph.edges, inv_alpha2);
        h = nh;
        x = nx;
    }
    let mut features = weights.output.forward(&h);
    features.iter_mut().for_each(|v| *v = v.max(0.0));

    let mut out = graph.clone();
    out.enriched = Some(Enriched { coords: x, features });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point3, Pose};
    use crate::graphnet::{build_graph, NetDims};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_graph(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> SceneGraph {
        let c: Vec<Point3> = (0..k).map(|_| Point3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-2.0..2.0))).collect();
        let d: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
        build_graph(c, vec![0; k], &d, 20.0).unwrap()
    }

    #[test]
    fn output_shape_and_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let w = NetWeights::random(NetDims::default(), 3);
        let g = random_graph(&mut rng, 20, 128);
        let out = egnn_forward(&g, &w).unwrap();
        let e = out.enriched.unwrap();
        assert_eq!(e.features.shape(), (20, 512));
        assert_eq!(e.coords.len(), 20);
        assert!(e.features.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn invariant_features_equivariant_coords() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let dims = NetDims { hidden: 32, ..NetDims::default() };
        let w = NetWeights::random(dims, 4);
        for _ in 0..5 {
            let g = random_graph(&mut rng, 12, 128);
            let pose = Pose::random(&mut rng, 180.0, 100.0);
            let moved_c = pose.transform_slice(&g.centroids);
            let moved = SceneGraph { centroids: moved_c, edges: crate::graphnet::edge_matrix(&pose.transform_slice(&g.centroids), g.alpha), ..g.clone() };
            let a = egnn_forward(&g, &w).unwrap().enriched.unwrap();
            let b = egnn_forward(&moved, &w).unwrap().enriched.unwrap();
            assert!((&a.features - &b.features).abs().max() < 1e-9);
            for (p, q) in a.coords.iter().zip(&b.coords) {
                assert!((pose.transform_point(p) - q).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_coordinate_head_keeps_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let dims = NetDims { hidden: 16, ..NetDims::default() };
        let mut w = NetWeights::random(dims, 5);
        for l in &mut w.layers {
            l.coord2.weight.fill(0.0);
            l.coord2.bias.fill(0.0);
        }
        let g = random_graph(&mut rng, 7, 128);
        let e = egnn_forward(&g, &w).unwrap().enriched.unwrap();
        assert_eq!(e.coords, g.centroids);
    }

    #[test]
    fn single_node_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let w = NetWeights::random(NetDims { hidden: 16, ..NetDims::default() }, 6);
        let g = random_graph(&mut rng, 1, 128);
        let e = egnn_forward(&g, &w).unwrap().enriched.unwrap();
        assert_eq!(e.features.shape(), (1, 512));
        assert_eq!(e.coords, g.centroids);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let w = NetWeights::random(NetDims { hidden: 16, ..NetDims::default() }, 6);
        let g = random_graph(&mut rng, 4, 64);
        assert!(matches!(egnn_forward(&g, &w), Err(Error::Config(_))));
    }
}
