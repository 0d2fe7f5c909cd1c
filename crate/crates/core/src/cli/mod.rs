//! Batch command-line frontend. Each command reads its inputs, processes
//! submaps on a bounded worker pool, and writes outputs in id order.

pub mod config;
pub mod container;
pub mod formats;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::descriptors::{backend_by_name, DescriptorBackend};
use crate::error::{Error, Result};
use crate::geometry::{relative, Point3};
use crate::graphnet::NetWeights;
use crate::pipeline::{extract, register, Extracted};
use crate::registration::{eval_registration, summarize_registrations, RegistrationReport};
use crate::retrieval::metrics::{evaluate, f1_at, GroundTruth, MetricReport};
use crate::retrieval::{replay, rerank_classify, IndexRecord, Query, RevisitDecision};
use crate::submap::{build_sequence, LabeledScan, Submap};
use crate::synth::{generate_world, NUM_CLASSES};

pub use config::Config;
use formats::LabelMap;

/// Exit status for a bad command line or missing inputs.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for failures while running a command.
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "regrace", version, about = "Submap place recognition and registration over semantic object graphs")]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides any configuration key, e.g. `--set top_k=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse a scan sequence (velodyne/, labels/, poses.txt, times.txt) into submaps.
    Build { sequence: PathBuf },
    /// Cluster, describe and embed every submap.
    Extract { submaps: PathBuf },
    /// Build an index from extracted features.
    Index { features: PathBuf },
    /// Re-rank and classify each query against an index.
    Query { index: PathBuf, queries: PathBuf },
    /// Register submap pairs; without a pairs file, every pair within `register_radius`.
    Register {
        submaps: PathBuf,
        /// Text file with one `query_id candidate_id` pair per line.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Replay submaps in time order and report place-recognition metrics.
    EvalPr { submaps: PathBuf },
    /// Register all revisit pairs within `register_radius` and report accuracy.
    EvalReg { submaps: PathBuf },
    /// Generate a synthetic world.
    Synth {
        /// Also write the world as a scan sequence readable by `build`.
        #[arg(long)]
        scans: bool,
    },
    /// Print the effective configuration.
    Config,
}

impl Command {
    fn inputs(&self) -> Vec<&Path> {
        match self {
            Self::Build { sequence } => vec![sequence],
            Self::Extract { submaps } | Self::EvalPr { submaps } | Self::EvalReg { submaps } => vec![submaps],
            Self::Index { features } => vec![features],
            Self::Query { index, queries } => vec![index, queries],
            Self::Register { submaps, pairs } => std::iter::once(submaps).chain(pairs).collect(),
            Self::Synth { .. } | Self::Config => vec![],
        }
        .into_iter()
        .map(PathBuf::as_path)
        .collect()
    }

    fn default_out(&self) -> Option<&'static str> {
        match self {
            Self::Build { .. } => Some("submaps.rgrc"),
            Self::Extract { .. } => Some("features.rgrc"),
            Self::Index { .. } => Some("index.rgrc"),
            Self::Query { .. } => Some("decisions.jsonl"),
            Self::Register { .. } => Some("transforms.jsonl"),
            Self::EvalPr { .. } => Some("eval-pr"),
            Self::EvalReg { .. } => Some("eval-reg"),
            Self::Synth { .. } => Some("synth"),
            Self::Config => None,
        }
    }
}

/// Parses arguments, runs the command, and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    if let Some(missing) = cli.command.inputs().into_iter().find(|p| !p.exists()) {
        eprintln!("error: input {} does not exist", missing.display());
        return EXIT_USAGE;
    }
    let cfg = match effective_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        pool = pool.num_threads(n.max(1));
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| run(&cli, &cfg)),
        Err(e) => Err(Error::Config(format!("cannot start worker pool: {e}"))),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

/// Defaults, then the config file, then `--seed`, then `--set` overrides.
pub fn effective_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    for kv in &cli.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

pub fn run(cli: &Cli, cfg: &Config) -> Result<()> {
    let out = cli.out.clone().or_else(|| cli.command.default_out().map(PathBuf::from));
    let out = out.as_deref().unwrap_or(Path::new("."));
    match &cli.command {
        Command::Build { sequence } => cmd_build(sequence, out, cfg),
        Command::Extract { submaps } => cmd_extract(submaps, out, cfg),
        Command::Index { features } => cmd_index(features, out),
        Command::Query { index, queries } => cmd_query(index, queries, out, cfg),
        Command::Register { submaps, pairs } => cmd_register(submaps, pairs.as_deref(), out, cfg),
        Command::EvalPr { submaps } => cmd_eval_pr(submaps, out, cfg),
        Command::EvalReg { submaps } => cmd_eval_reg(submaps, out, cfg),
        Command::Synth { scans } => cmd_synth(out, *scans, cfg),
        Command::Config => {
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

fn load_weights(cfg: &Config) -> Result<NetWeights> {
    if cfg.weights.is_empty() {
        let mut w = NetWeights::random(cfg.net_dims(), cfg.weights_seed);
        w.gem_lambda = cfg.gem_lambda;
        w.validate()?;
        Ok(w)
    } else {
        container::read_weights(Path::new(&cfg.weights))
    }
}

/// Extracts every submap on the worker pool; results keep input order.
pub fn extract_all(submaps: &[Submap], cfg: &Config) -> Result<Vec<Extracted>> {
    let backend = backend_by_name(&cfg.descriptor)?;
    let weights = load_weights(cfg)?;
    let params = cfg.extract();
    params.cluster.validate()?;
    submaps.par_iter().map(|s| extract(&s.grid, backend.as_ref() as &dyn DescriptorBackend, &weights, &params)).collect()
}

fn to_record(s: &Submap, e: Extracted) -> IndexRecord {
    IndexRecord { id: s.id, timestamp: s.timestamp, embedding: e.embedding, graph: e.graph, world_pose: s.origin }
}

/// Submaps sorted by time, then id, with unique ids.
fn time_ordered(mut submaps: Vec<Submap>) -> Result<Vec<Submap>> {
    submaps.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.id.cmp(&b.id)));
    let mut ids: Vec<u64> = submaps.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Conflict(w[0]));
    }
    Ok(submaps)
}

fn ground_truth(submaps: &[Submap]) -> GroundTruth {
    let mut gt = GroundTruth::new();
    for s in submaps {
        gt.insert(s.id, *s.origin.translation(), s.timestamp);
    }
    gt
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    create_parent(path)?;
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, &row).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads a sequence directory into labeled scans.
pub fn load_sequence(dir: &Path, label_map: LabelMap) -> Result<Vec<LabeledScan>> {
    let scans = sorted_files(&dir.join("velodyne"), "bin")?;
    let poses = formats::read_poses(&dir.join("poses.txt"))?;
    if poses.len() != scans.len() {
        return Err(Error::Mismatch { expected: scans.len(), found: poses.len() });
    }
    let times_path = dir.join("times.txt");
    let times = if times_path.exists() {
        formats::read_times(&times_path)?
    } else {
        warn!("{} missing; assuming 10 Hz scans", times_path.display());
        (0..scans.len()).map(|i| i as f64 * 0.1).collect()
    };
    if times.len() != scans.len() {
        return Err(Error::Mismatch { expected: scans.len(), found: times.len() });
    }
    scans
        .par_iter()
        .zip(poses.par_iter().zip(times.par_iter()))
        .map(|(path, (pose, &t))| {
            let scan = formats::read_scan(path)?;
            let stem = path.file_stem().expect("file has a name");
            let label_path = dir.join("labels").join(stem).with_extension("label");
            let words = formats::read_labels(&label_path, scan.points.len())?;
            let classes: Vec<u16> = words.iter().map(|&w| label_map.apply(formats::class_of(w), NUM_CLASSES)).collect();
            LabeledScan::from_labels(scan.points.points, &classes, NUM_CLASSES, t, *pose)
        })
        .collect()
}

fn cmd_build(sequence: &Path, out: &Path, cfg: &Config) -> Result<()> {
    let label_map: LabelMap = cfg.label_map.parse()?;
    let scans = load_sequence(sequence, label_map)?;
    let submaps = build_sequence(&scans, cfg.max_span, cfg.voxel_size)?;
    create_parent(out)?;
    container::write_submaps(out, &submaps)?;
    info!("{} scans -> {} submaps", scans.len(), submaps.len());
    println!("wrote {} submaps to {}", submaps.len(), out.display());
    Ok(())
}

fn cmd_extract(input: &Path, out: &Path, cfg: &Config) -> Result<()> {
    let submaps = container::read_submaps(input)?;
    let extracted = extract_all(&submaps, cfg)?;
    let records: Vec<IndexRecord> = submaps.iter().zip(extracted).map(|(s, e)| to_record(s, e)).collect();
    create_parent(out)?;
    container::write_features(out, &records)?;
    println!("wrote features of {} submaps to {}", records.len(), out.display());
    Ok(())
}

fn cmd_index(input: &Path, out: &Path) -> Result<()> {
    let mut records = container::read_features(input)?;
    records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.id.cmp(&b.id)));
    let mut db = crate::retrieval::Database::new();
    for r in records {
        db.insert(r)?;
    }
    create_parent(out)?;
    container::write_index(out, &db)?;
    println!("indexed {} records into {}", db.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct DecisionRow<'a> {
    #[serde(flatten)]
    decision: &'a RevisitDecision,
    /// Candidate ids in embedding order.
    candidates: Vec<u64>,
}

fn cmd_query(index: &Path, queries: &Path, out: &Path, cfg: &Config) -> Result<()> {
    let db = container::read_index(index)?;
    let mut queries = container::read_features(queries)?;
    queries.sort_by_key(|q| q.id);
    let params = cfg.rerank()?;
    let outcomes: Vec<_> = queries
        .par_iter()
        .map(|q| rerank_classify(&db, &Query { id: q.id, timestamp: q.timestamp, embedding: &q.embedding, graph: &q.graph }, &params))
        .collect();
    let rows: Vec<DecisionRow> = outcomes
        .iter()
        .filter(|o| o.decision.candidate_id.is_some())
        .map(|o| DecisionRow { decision: &o.decision, candidates: o.candidates.iter().map(|c| c.id).collect() })
        .collect();
    write_jsonl(out, &rows)?;
    println!("wrote {} decisions to {}", rows.len(), out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct TransformRow {
    query_id: u64,
    candidate_id: u64,
    /// Row-major `[R | t]` mapping candidate coordinates into the query frame.
    transform: [f64; 12],
    inliers: usize,
    rmse: f64,
    stage: String,
    degraded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    rre_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rte_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    success: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn parse_pairs(text: &str) -> Result<Vec<(u64, u64)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(n, l)| {
            let ids: Vec<u64> = l.split_whitespace().map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| Error::Format(format!("pairs line {}: bad id", n + 1)))?;
            match ids[..] {
                [q, c] => Ok((q, c)),
                _ => Err(Error::Format(format!("pairs line {}: expected two ids", n + 1))),
            }
        })
        .collect()
}

/// Index pairs `(later, earlier)` whose origins lie within `radius`, and
/// whose timestamps differ by at least `min_gap` seconds.
pub fn pairs_within(submaps: &[Submap], radius: f64, min_gap: f64) -> Vec<(usize, usize)> {
    let pos: Vec<Point3> = submaps.iter().map(|s| *s.origin.translation()).collect();
    let mut out = Vec::new();
    for q in 0..submaps.len() {
        for c in 0..submaps.len() {
            if q != c && submaps[c].timestamp <= submaps[q].timestamp - min_gap && (pos[q] - pos[c]).norm() <= radius {
                out.push((q, c));
            }
        }
    }
    out
}

fn register_pairs(submaps: &[Submap], ex: &[Extracted], pairs: &[(usize, usize)], cfg: &Config, evaluate_gt: bool) -> Result<Vec<TransformRow>> {
    let params = cfg.register()?;
    Ok(pairs
        .par_iter()
        .map(|&(q, c)| {
            let (qs, cs) = (&submaps[q], &submaps[c]);
            match register(&ex[q], &ex[c], &params) {
                Ok(est) => {
                    let eval = evaluate_gt.then(|| {
                        eval_registration(&est.transform, &relative(&qs.origin, &cs.origin), cfg.success_rre_deg, cfg.success_rte_m)
                    });
                    TransformRow {
                        query_id: qs.id,
                        candidate_id: cs.id,
                        transform: est.transform.to_row_major_3x4(),
                        inliers: est.inliers.len(),
                        rmse: est.rmse,
                        stage: format!("{:?}", est.stage).to_lowercase(),
                        degraded: est.degraded,
                        rre_deg: eval.map(|e| e.rre_deg),
                        rte_m: eval.map(|e| e.rte_m),
                        success: eval.map(|e| e.success),
                        error: None,
                    }
                }
                Err(e) => TransformRow {
                    query_id: qs.id,
                    candidate_id: cs.id,
                    transform: crate::geometry::Pose::identity().to_row_major_3x4(),
                    inliers: 0,
                    rmse: f64::NAN,
                    stage: "failed".into(),
                    degraded: true,
                    rre_deg: None,
                    rte_m: None,
                    success: evaluate_gt.then_some(false),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

fn cmd_register(input: &Path, pairs: Option<&Path>, out: &Path, cfg: &Config) -> Result<()> {
    let submaps = container::read_submaps(input)?;
    let index_of: std::collections::HashMap<u64, usize> = submaps.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    let pairs: Vec<(usize, usize)> = match pairs {
        Some(p) => parse_pairs(&fs::read_to_string(p)?)?
            .into_iter()
            .map(|(q, c)| match (index_of.get(&q), index_of.get(&c)) {
                (Some(&q), Some(&c)) => Ok((q, c)),
                _ => Err(Error::InvalidInput(format!("pair ({q}, {c}) names an unknown submap"))),
            })
            .collect::<Result<_>>()?,
        None => pairs_within(&submaps, cfg.register_radius, 0.0),
    };
    let ex = extract_all(&submaps, cfg)?;
    let rows = register_pairs(&submaps, &ex, &pairs, cfg, false)?;
    write_jsonl(out, &rows)?;
    println!("wrote {} transforms to {}", rows.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct PrRow {
    mode: &'static str,
    threshold: f64,
    precision: f64,
    recall: f64,
    f1: f64,
}

#[derive(Debug, Serialize)]
pub struct ModeSummary {
    pub queries: usize,
    pub revisits: usize,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub f1_max: f64,
    pub best_threshold: Option<f64>,
}

impl From<&MetricReport> for ModeSummary {
    fn from(r: &MetricReport) -> Self {
        Self {
            queries: r.queries,
            revisits: r.revisits,
            recall_at_1: r.recall_at_1,
            recall_at_5: r.recall_at_5,
            f1_max: r.f1_max,
            best_threshold: r.best_threshold,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct PrReport {
    pub embedding: ModeSummary,
    pub consistency: ModeSummary,
    pub epsilon_c: f64,
    /// F1 of the consistency classifier at the configured threshold.
    pub f1_at_epsilon_c: f64,
}

fn cmd_eval_pr(input: &Path, out: &Path, cfg: &Config) -> Result<()> {
    let submaps = time_ordered(container::read_submaps(input)?)?;
    let ex = extract_all(&submaps, cfg)?;
    let records: Vec<IndexRecord> = submaps.iter().zip(ex).map(|(s, e)| to_record(s, e)).collect();
    let (_, rep) = replay(&records, &cfg.rerank()?)?;
    let gt = ground_truth(&submaps);
    let mp = cfg.metrics();
    let emb = evaluate(&rep.embedding, &gt, &mp)?;
    let con = evaluate(&rep.consistency, &gt, &mp)?;
    let report = PrReport {
        embedding: ModeSummary::from(&emb),
        consistency: ModeSummary::from(&con),
        epsilon_c: cfg.epsilon_c,
        f1_at_epsilon_c: f1_at(&rep.consistency, &gt, &mp, cfg.epsilon_c.next_up())?,
    };
    fs::create_dir_all(out)?;
    let pr_rows = [("embedding", &emb), ("consistency", &con)].into_iter().flat_map(|(mode, r)| {
        r.pr_curve.iter().map(move |p| PrRow { mode, threshold: p.threshold, precision: p.precision, recall: p.recall, f1: p.f1 })
    });
    write_jsonl(&out.join("pr.jsonl"), pr_rows)?;
    let rows: Vec<DecisionRow> = rep
        .decisions
        .iter()
        .map(|o| DecisionRow { decision: &o.decision, candidates: o.candidates.iter().map(|c| c.id).collect() })
        .collect();
    write_jsonl(&out.join("decisions.jsonl"), &rows)?;
    write_json(&out.join("report.json"), &report)?;
    println!(
        "embedding: F1_max {:.3} R@1 {:.3} R@5 {:.3} | consistency: F1_max {:.3} R@1 {:.3} R@5 {:.3} | revisits {}",
        emb.f1_max, emb.recall_at_1, emb.recall_at_5, con.f1_max, con.recall_at_1, con.recall_at_5, emb.revisits
    );
    Ok(())
}

fn cmd_eval_reg(input: &Path, out: &Path, cfg: &Config) -> Result<()> {
    let submaps = time_ordered(container::read_submaps(input)?)?;
    let pairs = pairs_within(&submaps, cfg.register_radius, cfg.exclusion);
    let ex = extract_all(&submaps, cfg)?;
    let rows = register_pairs(&submaps, &ex, &pairs, cfg, true)?;
    let evals: Vec<_> = rows
        .iter()
        .map(|r| crate::registration::RegistrationEval {
            rre_deg: r.rre_deg.unwrap_or(f64::INFINITY),
            rte_m: r.rte_m.unwrap_or(f64::INFINITY),
            success: r.success.unwrap_or(false),
        })
        .collect();
    let report: RegistrationReport = summarize_registrations(&evals);
    fs::create_dir_all(out)?;
    write_jsonl(&out.join("registrations.jsonl"), &rows)?;
    write_json(&out.join("report.json"), &report)?;
    println!(
        "pairs {} success {:.3} median RRE {:.3} deg median RTE {:.3} m",
        report.pairs, report.accuracy, report.median_rre_deg, report.median_rte_m
    );
    Ok(())
}

fn cmd_synth(out: &Path, scans: bool, cfg: &Config) -> Result<()> {
    let world = generate_world(&cfg.world())?;
    let submaps: Vec<Submap> = world.submaps.into_iter().map(|w| w.submap).collect();
    fs::create_dir_all(out)?;
    container::write_submaps(&out.join("submaps.rgrc"), &submaps)?;
    if scans {
        write_sequence(&out.join("sequence"), &submaps)?;
    }
    println!("wrote {} synthetic submaps to {}", submaps.len(), out.display());
    Ok(())
}

/// One scan per submap: voxel centroids labeled with their winning class,
/// in the submap frame, with the submap origin as the scan pose.
pub fn write_sequence(dir: &Path, submaps: &[Submap]) -> Result<()> {
    fs::create_dir_all(dir.join("velodyne"))?;
    fs::create_dir_all(dir.join("labels"))?;
    submaps.par_iter().enumerate().try_for_each(|(i, s)| {
        let pts: Vec<Point3> = s.grid.cells.values().map(|c| c.centroid).collect();
        let labels: Vec<u32> = s.grid.cells.values().map(|c| c.class_id() as u32).collect();
        formats::write_scan(&dir.join("velodyne").join(format!("{i:06}.bin")), &pts, &vec![0.0; pts.len()])?;
        formats::write_labels(&dir.join("labels").join(format!("{i:06}.label")), &labels)
    })?;
    formats::write_poses(&dir.join("poses.txt"), &submaps.iter().map(|s| s.origin).collect::<Vec<_>>())?;
    formats::write_times(&dir.join("times.txt"), &submaps.iter().map(|s| s.timestamp).collect::<Vec<_>>())
}
