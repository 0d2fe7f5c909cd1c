use nalgebra::{DMatrix, DVector};

use super::weights::NetWeights;

/// Features are clamped to this floor before fractional powers.
pub const GEM_FLOOR: f64 = 1e-6;

/// Elementwise generalized mean over rows: `((1/K) Σ_i f_i^λ)^(1/λ)`.
pub fn gem_pool_raw(features: &DMatrix<f64>, lambda: f64) -> DVector<f64> {
    let k = features.nrows().max(1) as f64;
    DVector::from_iterator(
        features.ncols(),
        features.column_iter().map(|col| {
            let s: f64 = col.iter().map(|v| v.max(GEM_FLOOR).powf(lambda)).sum();
            (s / k).powf(1.0 / lambda)
        }),
    )
}

/// GeM pooling followed by the learned projection to the embedding width.
pub fn gem_pool(features: &DMatrix<f64>, weights: &NetWeights) -> DVector<f64> {
    &weights.projection * gem_pool_raw(features, weights.gem_lambda)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Tensor similarity head. Bilinear slices plus a linear map of the stacked
/// pair feed a ReLU, an `s → 1` reduction, and a sigmoid. The result is kept
/// strictly inside `(0, 1)` even when the sigmoid saturates.
pub fn tnn_score(gi: &DVector<f64>, gj: &DVector<f64>, weights: &NetWeights) -> f64 {
    let tnn = &weights.tnn;
    let n = gi.len();
    let mut logit = tnn.output_bias;
    for (k, slice) in tnn.slices.iter().enumerate() {
        let bilinear = gi.dot(&(slice * gj));
        let pair = tnn.pair.row(k);
        let linear = pair.columns(0, n).dot(&gi.transpose()) + pair.columns(n, n).dot(&gj.transpose());
        let z = (bilinear + linear + tnn.bias[k]).max(0.0);
        logit += tnn.output[k] * z;
    }
    sigmoid(logit).clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphnet::NetDims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims() -> NetDims {
        NetDims::default()
    }

    fn positive_features(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(k, 512, |_, _| rng.random_range(0.01..2.0))
    }

    fn identity_projection(w: &mut NetWeights) {
        w.projection.fill(0.0);
        for i in 0..w.dims.embedding {
            w.projection[(i, i)] = 1.0;
        }
    }

    #[test]
    fn lambda_one_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let f = positive_features(&mut rng, 9);
        let mut w = NetWeights::random(dims(), 1);
        w.gem_lambda = 1.0;
        identity_projection(&mut w);
        let g = gem_pool(&f, &w);
        let mean = f.row_mean();
        for i in 0..256 {
            assert!((g[i] - mean[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_node_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let mut f = positive_features(&mut rng, 1);
        f[(0, 3)] = -4.0;
        for lambda in [0.5, 1.0, 3.0, 17.0] {
            let raw = gem_pool_raw(&f, lambda);
            for j in 0..512 {
                let want = f[(0, j)].max(GEM_FLOOR);
                assert!((raw[j] - want).abs() < 1e-9 * want.max(1.0), "{lambda} {j}");
            }
        }
    }

    #[test]
    fn large_lambda_approaches_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let f = positive_features(&mut rng, 20);
        let raw = gem_pool_raw(&f, 64.0);
        for j in 0..512 {
            let max = f.column(j).max();
            assert!(raw[j] <= max + 1e-12);
            assert!(raw[j] >= 0.95 * max, "{} vs {}", raw[j], max);
        }
    }

    #[test]
    fn zero_head_scores_half() {
        let w = NetWeights::zeros(dims());
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let g = DVector::from_fn(256, |_, _| rng.random_range(-1.0..1.0));
        assert_eq!(tnn_score(&g, &g, &w), 0.5);
    }

    #[test]
    fn score_strictly_inside_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let mut w = NetWeights::random(dims(), 2);
        for _ in 0..20 {
            let a = DVector::from_fn(256, |_, _| rng.random_range(-50.0..50.0));
            let b = DVector::from_fn(256, |_, _| rng.random_range(-50.0..50.0));
            let s = tnn_score(&a, &b, &w);
            assert!(s > 0.0 && s < 1.0);
        }
        w.tnn.output_bias = 1e6;
        let g = DVector::zeros(256);
        let s = tnn_score(&g, &g, &w);
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn bilinear_term_sees_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let w = NetWeights::random(dims(), 3);
        let g = DVector::from_fn(256, |_, _| rng.random_range(-1.0..1.0));
        let same = tnn_score(&g, &g, &w);
        let flipped = tnn_score(&g, &(-&g), &w);
        assert_ne!(same, flipped);
    }

    #[test]
    fn symmetric_weights_symmetric_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let mut w = NetWeights::random(dims(), 4);
        for s in &mut w.tnn.slices {
            *s = (&*s + s.transpose()) * 0.5;
        }
        for k in 0..w.dims.slices {
            for j in 0..256 {
                let v = 0.5 * (w.tnn.pair[(k, j)] + w.tnn.pair[(k, j + 256)]);
                w.tnn.pair[(k, j)] = v;
                w.tnn.pair[(k, j + 256)] = v;
            }
        }
        w.tnn.bias = DVector::from_fn(16, |_, _| rng.random_range(-0.1..0.1));
        for _ in 0..10 {
            let a = DVector::from_fn(256, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(256, |_, _| rng.random_range(-1.0..1.0));
            assert!((tnn_score(&a, &b, &w) - tnn_score(&b, &a, &w)).abs() < 1e-12);
        }
    }
}
