//! Embedding database, top-k retrieval with a temporal exclusion window,
//! geometric re-ranking, and place-recognition metrics.

mod consistency;
pub mod metrics;

use std::collections::HashMap;

use nalgebra::DVector;
use serde::Serialize;

pub use consistency::{consistency_score, pair_consistency, ConsistencyParams, ConsistencyResult, DEFAULT_D_T};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::graphnet::SceneGraph;

pub const DEFAULT_TOP_K: usize = 20;
/// Entries newer than this many seconds before the query are not retrievable.
pub const DEFAULT_EXCLUSION_S: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexRecord {
    pub id: u64,
    pub timestamp: f64,
    pub embedding: DVector<f64>,
    pub graph: SceneGraph,
    pub world_pose: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Candidate {
    pub id: u64,
    pub distance: f64,
}

/// In-memory exhaustive index. Mutation needs `&mut self`, so queries always
/// see a consistent snapshot.
#[derive(Debug, Clone, Default)]
pub struct Database {
    records: Vec<IndexRecord>,
    by_id: HashMap<u64, usize>,
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, record: IndexRecord) -> Result<()> {
        if self.by_id.contains_key(&record.id) {
            return Err(Error::Conflict(record.id));
        }
        if let Some(last) = self.records.last() {
            if record.timestamp < last.timestamp {
                return Err(Error::InvalidInput(format!(
                    "record {} at t={} is older than the newest entry (t={})",
                    record.id, record.timestamp, last.timestamp
                )));
            }
        }
        if let Some(first) = self.records.first() {
            if first.embedding.len() != record.embedding.len() {
                return Err(Error::Mismatch { expected: first.embedding.len(), found: record.embedding.len() });
            }
        }
        self.by_id.insert(record.id, self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn get(&self, id: u64) -> Option<&IndexRecord> {
        self.by_id.get(&id).map(|&i| &self.records[i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[IndexRecord] {
        &self.records
    }

    /// Up to `k` records with `timestamp ≤ query_time − exclusion`, nearest
    /// first by L2 embedding distance, ties by ascending id.
    pub fn query_topk(&self, embedding: &DVector<f64>, query_time: f64, k: usize, exclusion: f64) -> Vec<Candidate> {
        let cutoff = query_time - exclusion;
        let mut hits: Vec<Candidate> = self
            .records
            .iter()
            .filter(|r| r.timestamp <= cutoff && r.embedding.len() == embedding.len())
            .map(|r| Candidate { id: r.id, distance: (&r.embedding - embedding).norm() })
            .collect();
        hits.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
        hits.truncate(k);
        hits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RevisitDecision {
    pub query_id: u64,
    pub candidate_id: Option<u64>,
    pub consistency: f64,
    pub embedding_distance: f64,
    pub is_revisit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredCandidate {
    pub id: u64,
    pub distance: f64,
    pub consistency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankParams {
    pub k: usize,
    pub exclusion: f64,
    pub epsilon_c: f64,
    pub consistency: ConsistencyParams,
}

impl Default for RerankParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            exclusion: DEFAULT_EXCLUSION_S,
            epsilon_c: DEFAULT_EPSILON_C,
            consistency: ConsistencyParams::default(),
        }
    }
}

/// Consistency threshold tuned on a held-out synthetic world.
pub const DEFAULT_EPSILON_C: f64 = 10.0;

/// Query as seen by the retrieval stage.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub id: u64,
    pub timestamp: f64,
    pub embedding: &'a DVector<f64>,
    pub graph: &'a SceneGraph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutcome {
    pub decision: RevisitDecision,
    /// Candidates in embedding order, each with its consistency score.
    pub candidates: Vec<ScoredCandidate>,
}

impl RerankOutcome {
    /// Candidate ids ordered by consistency (desc), then embedding distance.
    pub fn reranked_ids(&self) -> Vec<u64> {
        let mut c = self.candidates.clone();
        c.sort_by(rerank_order);
        c.iter().map(|c| c.id).collect()
    }
}

fn rerank_order(a: &ScoredCandidate, b: &ScoredCandidate) -> std::cmp::Ordering {
    b.consistency
        .total_cmp(&a.consistency)
        .then(a.distance.total_cmp(&b.distance))
        .then(a.id.cmp(&b.id))
}

/// Scores the top-k embedding neighbours by geometric consistency and keeps
/// the most consistent one. The query is a revisit when its score exceeds
/// `epsilon_c`.
pub fn rerank_classify(db: &Database, query: &Query<'_>, params: &RerankParams) -> RerankOutcome {
    let top = db.query_topk(query.embedding, query.timestamp, params.k, params.exclusion);
    let candidates: Vec<ScoredCandidate> = top
        .iter()
        .map(|c| {
            let record = db.get(c.id).expect("candidate comes from the index");
            let score = consistency_score(query.graph, &record.graph, &params.consistency).score;
            ScoredCandidate { id: c.id, distance: c.distance, consistency: score }
        })
        .collect();
    let best = candidates.iter().min_by(|a, b| rerank_order(a, b));
    let decision = match best {
        Some(b) => RevisitDecision {
            query_id: query.id,
            candidate_id: Some(b.id),
            consistency: b.consistency,
            embedding_distance: b.distance,
            is_revisit: b.consistency > params.epsilon_c,
        },
        None => RevisitDecision {
            query_id: query.id,
            candidate_id: None,
            consistency: 0.0,
            embedding_distance: f64::INFINITY,
            is_revisit: false,
        },
    };
    RerankOutcome { decision, candidates }
}

/// Per-query results of replaying a sequence, in both classification modes.
#[derive(Debug, Clone, Default)]
pub struct Replay {
    /// Top-1 by embedding distance, scored by negated distance.
    pub embedding: Vec<metrics::QueryOutcome>,
    /// Most consistent candidate, scored by its consistency.
    pub consistency: Vec<metrics::QueryOutcome>,
    pub decisions: Vec<RerankOutcome>,
}

/// Replays records in order: each one is queried against everything
/// inserted before it, then inserted. Records must be in time order.
pub fn replay(records: &[IndexRecord], params: &RerankParams) -> Result<(Database, Replay)> {
    let mut db = Database::new();
    let mut out = Replay::default();
    for rec in records {
        let q = Query { id: rec.id, timestamp: rec.timestamp, embedding: &rec.embedding, graph: &rec.graph };
        let r = rerank_classify(&db, &q, params);
        let ranked: Vec<u64> = r.candidates.iter().map(|c| c.id).collect();
        out.embedding.push(metrics::QueryOutcome {
            query_id: rec.id,
            predicted: ranked.first().copied(),
            score: r.candidates.first().map_or(f64::NEG_INFINITY, |c| -c.distance),
            ranked,
        });
        out.consistency.push(metrics::QueryOutcome {
            query_id: rec.id,
            ranked: r.reranked_ids(),
            predicted: r.decision.candidate_id,
            score: r.decision.consistency,
        });
        out.decisions.push(r);
        db.insert(rec.clone())?;
    }
    Ok((db, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use crate::graphnet::build_graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dummy_graph() -> SceneGraph {
        build_graph(vec![Point3::zeros()], vec![1], &[vec![1.0]], 1.0).unwrap()
    }

    fn record(id: u64, t: f64, emb: DVector<f64>) -> IndexRecord {
        IndexRecord { id, timestamp: t, embedding: emb, graph: dummy_graph(), world_pose: Pose::identity() }
    }

    #[test]
    fn insert_and_get() {
        let mut db = Database::new();
        db.insert(record(7, 0.0, DVector::zeros(4))).unwrap();
        assert_eq!(db.get(7).unwrap().id, 7);
        assert!(matches!(db.insert(record(7, 1.0, DVector::zeros(4))), Err(Error::Conflict(7))));
        for i in 0..999 {
            db.insert(record(100 + i, 1.0 + i as f64, DVector::zeros(4))).unwrap();
        }
        assert_eq!(db.len(), 1000);
    }

    #[test]
    fn out_of_order_timestamps_rejected() {
        let mut db = Database::new();
        db.insert(record(1, 10.0, DVector::zeros(2))).unwrap();
        assert!(db.insert(record(2, 5.0, DVector::zeros(2))).is_err());
    }

    #[test]
    fn empty_and_fully_excluded() {
        let db = Database::new();
        assert!(db.query_topk(&DVector::zeros(3), 100.0, 20, 30.0).is_empty());
        let mut db = Database::new();
        for i in 0..5 {
            db.insert(record(i, 80.0 + i as f64, DVector::zeros(3))).unwrap();
        }
        assert!(db.query_topk(&DVector::zeros(3), 100.0, 20, 30.0).is_empty());
    }

    #[test]
    fn exclusion_boundary_is_inclusive() {
        let mut db = Database::new();
        db.insert(record(1, 70.0, DVector::zeros(2))).unwrap();
        db.insert(record(2, 70.5, DVector::zeros(2))).unwrap();
        let hits = db.query_topk(&DVector::zeros(2), 100.0, 20, 30.0);
        assert_eq!(hits.iter().map(|c| c.id).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn topk_matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let mut db = Database::new();
        for i in 0..50 {
            db.insert(record(i, i as f64, DVector::from_fn(8, |_, _| rng.random::<f64>()))).unwrap();
        }
        let q = DVector::from_fn(8, |_, _| rng.random::<f64>());
        let got = db.query_topk(&q, 1000.0, 20, 30.0);
        let mut all: Vec<(f64, u64)> = db.records().iter().map(|r| ((&r.embedding - &q).norm(), r.id)).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want: Vec<u64> = all.iter().take(20).map(|x| x.1).collect();
        assert_eq!(got.iter().map(|c| c.id).collect::<Vec<_>>(), want);
    }

    #[test]
    fn ties_break_by_id() {
        let mut db = Database::new();
        for id in [5, 3, 9] {
            db.insert(record(id, 0.0, DVector::from_element(2, 1.0))).unwrap();
        }
        let hits = db.query_topk(&DVector::zeros(2), 100.0, 2, 30.0);
        assert_eq!(hits.iter().map(|c| c.id).collect::<Vec<_>>(), vec![3, 5]);
    }

    #[test]
    fn rerank_on_empty_index() {
        let db = Database::new();
        let g = dummy_graph();
        let emb = DVector::zeros(2);
        let out = rerank_classify(&db, &Query { id: 1, timestamp: 0.0, embedding: &emb, graph: &g }, &RerankParams::default());
        assert_eq!(out.decision.candidate_id, None);
        assert!(!out.decision.is_revisit);
    }
}
