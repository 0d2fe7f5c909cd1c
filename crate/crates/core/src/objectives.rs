//! Training objectives as plain evaluable functions: triplet margin loss,
//! binary cross-entropy on the similarity score, their sum, and in-batch
//! hard-triplet mining. Closed-form gradients are provided for checking.

use nalgebra::{DVector, Vector3};

/// Positives lie within this distance of the anchor (meters).
pub const POSITIVE_RADIUS: f64 = 3.0;
/// Negatives lie at least this far from the anchor (meters).
pub const NEGATIVE_RADIUS: f64 = 20.0;
pub const DEFAULT_MARGIN: f64 = 1.0;

const BCE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TripletSpec {
    pub anchor: DVector<f64>,
    pub positive: DVector<f64>,
    pub negative: DVector<f64>,
    pub margin: f64,
}

/// `max(‖a − p‖ − ‖a − n‖ + m, 0)`.
pub fn triplet_loss(spec: &TripletSpec) -> f64 {
    let dp = (&spec.anchor - &spec.positive).norm();
    let dn = (&spec.anchor - &spec.negative).norm();
    (dp - dn + spec.margin).max(0.0)
}

/// Gradients of [`triplet_loss`] with respect to anchor, positive and
/// negative. Zero on the inactive side of the hinge.
pub fn triplet_loss_grad(spec: &TripletSpec) -> [DVector<f64>; 3] {
    let n = spec.anchor.len();
    if triplet_loss(spec) <= 0.0 {
        return [DVector::zeros(n), DVector::zeros(n), DVector::zeros(n)];
    }
    let ap = &spec.anchor - &spec.positive;
    let an = &spec.anchor - &spec.negative;
    let unit = |v: &DVector<f64>| {
        let norm = v.norm();
        if norm > 0.0 { v / norm } else { DVector::zeros(v.len()) }
    };
    let (up, un) = (unit(&ap), unit(&an));
    [&up - &un, -up, un]
}

/// Binary cross-entropy of a predicted score against a 0/1 proximity label.
/// Scores are clamped away from 0 and 1.
pub fn bce_loss(score: f64, label: f64) -> f64 {
    let s = score.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(label * s.ln() + (1.0 - label) * (1.0 - s).ln())
}

/// d(bce)/d(score) on the unclamped interior.
pub fn bce_loss_grad(score: f64, label: f64) -> f64 {
    let s = score.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -label / s + (1.0 - label) / (1.0 - s)
}

pub fn total_loss(triplet: f64, score_loss: f64) -> f64 {
    triplet + score_loss
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSample {
    pub embedding: DVector<f64>,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedTriplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub spec: TripletSpec,
}

/// Hardest triplet per anchor: the positive farthest from the anchor in
/// embedding space and the negative closest to it. Samples between the two
/// radii are neither. Ties go to the lowest index; anchors lacking a
/// positive or a negative are skipped.
pub fn mine_hard_triplets(batch: &[BatchSample], pos_radius: f64, neg_radius: f64, margin: f64) -> Vec<MinedTriplet> {
    let mut out = Vec::new();
    for (a, anchor) in batch.iter().enumerate() {
        let mut hardest_pos: Option<(usize, f64)> = None;
        let mut hardest_neg: Option<(usize, f64)> = None;
        for (j, other) in batch.iter().enumerate() {
            if j == a {
                continue;
            }
            let world = (other.position - anchor.position).norm();
            let emb = (&other.embedding - &anchor.embedding).norm();
            if world <= pos_radius && hardest_pos.is_none_or(|(_, d)| emb > d) {
                hardest_pos = Some((j, emb));
            }
            if world >= neg_radius && hardest_neg.is_none_or(|(_, d)| emb < d) {
                hardest_neg = Some((j, emb));
            }
        }
        if let (Some((p, _)), Some((n, _))) = (hardest_pos, hardest_neg) {
            out.push(MinedTriplet {
                anchor: a,
                positive: p,
                negative: n,
                spec: TripletSpec {
                    anchor: anchor.embedding.clone(),
                    positive: batch[p].embedding.clone(),
                    negative: batch[n].embedding.clone(),
                    margin,
                },
            });
        }
    }
    out
}
