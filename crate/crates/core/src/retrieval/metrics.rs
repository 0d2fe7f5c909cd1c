//! Place-recognition metrics: Recall@N over ranked candidates and the
//! precision/recall sweep behind F1_max.
//!
//! A positive prediction is a true positive when the predicted place lies
//! within `r_tp` of the query, a false positive beyond `r_fp`, and is
//! ignored in between. Every query with a retrievable earlier place within
//! `r_tp` that does not end up a true positive counts as a false negative.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Point3;

pub const DEFAULT_R_FP: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtEntry {
    pub position: Point3,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    entries: BTreeMap<u64, GtEntry>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: u64, position: Point3, timestamp: f64) {
        self.entries.insert(id, GtEntry { position, timestamp });
    }

    pub fn get(&self, id: u64) -> Result<&GtEntry> {
        self.entries.get(&id).ok_or_else(|| Error::InvalidInput(format!("no ground truth for submap {id}")))
    }

    fn distance(&self, a: u64, b: u64) -> Result<f64> {
        Ok((self.get(a)?.position - self.get(b)?.position).norm())
    }

    /// Whether an entry at least `exclusion` seconds older than `query` lies
    /// within `radius` of it.
    pub fn has_revisit(&self, query: u64, exclusion: f64, radius: f64) -> Result<bool> {
        let q = *self.get(query)?;
        Ok(self
            .entries
            .iter()
            .any(|(&id, e)| id != query && e.timestamp <= q.timestamp - exclusion && (e.position - q.position).norm() <= radius))
    }
}

/// Result of one query: the ranked candidate list, the classifier's chosen
/// candidate, and a confidence score where larger means more likely a revisit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryOutcome {
    pub query_id: u64,
    pub ranked: Vec<u64>,
    pub predicted: Option<u64>,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub queries: usize,
    pub revisits: usize,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub f1_max: f64,
    pub best_threshold: Option<f64>,
    pub pr_curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricParams {
    pub r_tp: f64,
    pub r_fp: f64,
    pub exclusion: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self { r_tp: 3.0, r_fp: DEFAULT_R_FP, exclusion: super::DEFAULT_EXCLUSION_S }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Verdict {
    TruePositive,
    FalsePositive,
    Ignored,
}

struct Prepared {
    has_revisit: bool,
    predicted: Option<(f64, Verdict)>,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 }
}

/// Precision, recall and F1 when predictions with `score ≥ threshold` are
/// positive.
fn pr_at(prepared: &[Prepared], threshold: f64) -> PrPoint {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for p in prepared {
        let verdict = p.predicted.filter(|&(score, _)| score >= threshold).map(|(_, v)| v);
        match verdict {
            Some(Verdict::TruePositive) => tp += 1,
            Some(Verdict::FalsePositive) => fp += 1,
            _ => {}
        }
        if p.has_revisit && verdict != Some(Verdict::TruePositive) {
            fn_ += 1;
        }
    }
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    PrPoint { threshold, precision, recall, f1: harmonic(precision, recall) }
}

pub fn evaluate(outcomes: &[QueryOutcome], gt: &GroundTruth, params: &MetricParams) -> Result<MetricReport> {
    let mut prepared = Vec::with_capacity(outcomes.len());
    let (mut revisits, mut hit1, mut hit5) = (0usize, 0usize, 0usize);
    for o in outcomes {
        let has_revisit = gt.has_revisit(o.query_id, params.exclusion, params.r_tp)?;
        let mut within = Vec::with_capacity(o.ranked.len().min(5));
        for &c in o.ranked.iter().take(5) {
            within.push(gt.distance(o.query_id, c)? <= params.r_tp);
        }
        if has_revisit {
            revisits += 1;
            hit1 += within.first().copied().unwrap_or(false) as usize;
            hit5 += within.iter().any(|&w| w) as usize;
        }
        let predicted = match o.predicted {
            Some(c) => {
                let d = gt.distance(o.query_id, c)?;
                let verdict = if d <= params.r_tp {
                    Verdict::TruePositive
                } else if d > params.r_fp {
                    Verdict::FalsePositive
                } else {
                    Verdict::Ignored
                };
                Some((o.score, verdict))
            }
            None => None,
        };
        prepared.push(Prepared { has_revisit, predicted });
    }

    let mut thresholds: Vec<f64> = prepared.iter().filter_map(|p| p.predicted.map(|(s, _)| s)).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let pr_curve: Vec<PrPoint> = thresholds.iter().map(|&t| pr_at(&prepared, t)).collect();
    let best = pr_curve.iter().fold(None::<&PrPoint>, |acc, p| match acc {
        Some(b) if b.f1 >= p.f1 => Some(b),
        _ => Some(p),
    });
    let ratio = |n: usize| if revisits > 0 { n as f64 / revisits as f64 } else { 0.0 };
    Ok(MetricReport {
        queries: outcomes.len(),
        revisits,
        recall_at_1: ratio(hit1),
        recall_at_5: ratio(hit5),
        f1_max: best.map_or(0.0, |b| b.f1),
        best_threshold: best.map(|b| b.threshold),
        pr_curve,
    })
}

/// F1 at a single fixed threshold.
pub fn f1_at(outcomes: &[QueryOutcome], gt: &GroundTruth, params: &MetricParams, threshold: f64) -> Result<f64> {
    let report = evaluate(outcomes, gt, params)?;
    // Between sweep points the counts are those of the next higher score.
    Ok(report
        .pr_curve
        .iter()
        .filter(|p| p.threshold >= threshold)
        .last()
        .map_or(0.0, |p| p.f1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Ten places along a line, each visited at t and revisited at t + 100.
    fn line_world() -> GroundTruth {
        let mut gt = GroundTruth::new();
        for i in 0..10u64 {
            gt.insert(i, Point3::new(50.0 * i as f64, 0.0, 0.0), 10.0 * i as f64);
            gt.insert(100 + i, Point3::new(50.0 * i as f64 + 0.5, 0.0, 0.0), 200.0 + 10.0 * i as f64);
        }
        gt
    }

    #[test]
    fn perfect_results_score_one() {
        let gt = line_world();
        let outcomes: Vec<QueryOutcome> = (0..10)
            .map(|i| QueryOutcome { query_id: 100 + i, ranked: vec![i, (i + 1) % 10], predicted: Some(i), score: 1.0 })
            .collect();
        let r = evaluate(&outcomes, &gt, &MetricParams::default()).unwrap();
        assert_eq!((r.recall_at_1, r.recall_at_5, r.f1_max), (1.0, 1.0, 1.0));
    }

    #[test]
    fn half_right_gives_half() {
        let gt = line_world();
        // Four queries with revisits: two correct, two pointing 100 m away.
        let outcomes = vec![
            QueryOutcome { query_id: 100, ranked: vec![0], predicted: Some(0), score: 1.0 },
            QueryOutcome { query_id: 101, ranked: vec![1], predicted: Some(1), score: 1.0 },
            QueryOutcome { query_id: 102, ranked: vec![4], predicted: Some(4), score: 1.0 },
            QueryOutcome { query_id: 103, ranked: vec![5], predicted: Some(5), score: 1.0 },
        ];
        let r = evaluate(&outcomes, &gt, &MetricParams::default()).unwrap();
        let p = r.pr_curve[0];
        assert_eq!((p.precision, p.recall), (0.5, 0.5));
        assert_eq!(p.f1, 0.5);
    }

    #[test]
    fn missing_ground_truth_is_error() {
        let gt = line_world();
        let outcomes = vec![QueryOutcome { query_id: 999, ranked: vec![], predicted: None, score: 0.0 }];
        assert!(matches!(evaluate(&outcomes, &gt, &MetricParams::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn between_thresholds_is_ignored() {
        let mut gt = GroundTruth::new();
        gt.insert(0, Point3::zeros(), 0.0);
        gt.insert(1, Point3::new(10.0, 0.0, 0.0), 100.0);
        let outcomes = vec![QueryOutcome { query_id: 1, ranked: vec![0], predicted: Some(0), score: 1.0 }];
        let p = evaluate(&outcomes, &gt, &MetricParams::default()).unwrap().pr_curve[0];
        assert_eq!((p.precision, p.recall), (0.0, 0.0));
        // With r_tp = 20 the same prediction is correct.
        let r = evaluate(&outcomes, &gt, &MetricParams { r_tp: 20.0, ..Default::default() }).unwrap();
        assert_eq!(r.f1_max, 1.0);
    }

    /// Independent recount of TP/FP/FN per threshold straight from positions.
    fn brute_f1(outcomes: &[QueryOutcome], gt: &GroundTruth, threshold: f64) -> f64 {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for o in outcomes {
            let q = gt.get(o.query_id).unwrap();
            let revisit = gt.entries.values().any(|e| e.timestamp <= q.timestamp - 30.0 && (e.position - q.position).norm() <= 3.0);
            let positive = o.predicted.is_some() && o.score >= threshold;
            let mut hit = false;
            if positive {
                let d = (gt.get(o.predicted.unwrap()).unwrap().position - q.position).norm();
                if d <= 3.0 {
                    tp += 1.0;
                    hit = true;
                } else if d > 20.0 {
                    fp += 1.0;
                }
            }
            if revisit && !hit {
                fn_ += 1.0;
            }
        }
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 }
    }

    #[test]
    fn sweep_matches_brute_force() {
        let gt = line_world();
        let mut rng = ChaCha8Rng::seed_from_u64(111);
        for _ in 0..20 {
            let outcomes: Vec<QueryOutcome> = (0..10)
                .map(|i| {
                    let c = if rng.random_bool(0.6) { i } else { rng.random_range(0..10) };
                    QueryOutcome { query_id: 100 + i, ranked: vec![c], predicted: Some(c), score: rng.random_range(0..5) as f64 }
                })
                .collect();
            let r = evaluate(&outcomes, &gt, &MetricParams::default()).unwrap();
            let mut best: f64 = 0.0;
            for o in &outcomes {
                let f = brute_f1(&outcomes, &gt, o.score);
                best = best.max(f);
                let at = r.pr_curve.iter().find(|p| p.threshold == o.score).unwrap();
                assert!((at.f1 - f).abs() < 1e-12);
                assert!(r.f1_max >= f1_at(&outcomes, &gt, &MetricParams::default(), o.score).unwrap());
            }
            assert!((r.f1_max - best).abs() < 1e-12);
        }
    }

    #[test]
    fn recall_at_n() {
        let gt = line_world();
        let outcomes = vec![
            QueryOutcome { query_id: 100, ranked: vec![3, 0], predicted: Some(3), score: 1.0 },
            QueryOutcome { query_id: 101, ranked: vec![1], predicted: Some(1), score: 1.0 },
        ];
        let r = evaluate(&outcomes, &gt, &MetricParams::default()).unwrap();
        assert_eq!(r.recall_at_1, 0.5);
        assert_eq!(r.recall_at_5, 1.0);
    }
}
