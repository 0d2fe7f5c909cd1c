//! Flat `key = value` configuration. Every key has a default; unknown keys
//! are rejected. Later sources override earlier ones: defaults, then the
//! config file, then command-line flags.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graphnet::{FeatureSource, NetDims};
use crate::instances::{ClusterParams, DEFAULT_EXCLUDED_CLASSES};
use crate::pipeline::{ExtractParams, RegisterParams};
use crate::registration::{IcpParams, RansacParams};
use crate::retrieval::metrics::MetricParams;
use crate::retrieval::{ConsistencyParams, RerankParams};
use crate::synth::WorldSpec;

/// Comma-separated class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassList(pub BTreeSet<u16>);

impl FromStr for ClassList {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<u16>().map_err(|_| Error::Config(format!("bad class id '{t}'"))))
            .collect::<Result<_>>()
            .map(ClassList)
    }
}

impl fmt::Display for ClassList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

macro_rules! config {
    ($( #[doc = $doc:literal] $name:ident : $ty:ty = $default:expr, )*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct Config {
            $( #[doc = $doc] pub $name: $ty, )*
        }

        impl Default for Config {
            fn default() -> Self {
                Self { $( $name: $default, )* }
            }
        }

        impl Config {
            /// `(key, documentation)` for every setting, in file order.
            pub const KEYS: &'static [(&'static str, &'static str)] = &[ $( (stringify!($name), $doc.trim_ascii()), )* ];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($name) => {
                        self.$name = value.parse().map_err(|_| {
                            Error::Config(format!("cannot parse '{value}' for {key}"))
                        })?;
                    } )*
                    other => return Err(Error::Config(format!("unknown key '{other}'"))),
                }
                Ok(())
            }

            /// Every key with its current value, preceded by its documentation.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $( out.push_str(&format!("# {}\n{} = {}\n", $doc.trim_ascii(), stringify!($name), self.$name)); )*
                out
            }
        }
    };
}

config! {
    /// Voxel edge length in meters.
    voxel_size: f64 = 0.10,
    /// Maximum trajectory length covered by one submap, meters.
    max_span: f64 = 20.0,
    /// DBSCAN neighborhood radius, meters.
    cluster_eps: f64 = 0.2,
    /// Minimum voxels in a kept instance.
    cluster_min_pts: usize = 100,
    /// Neighbors (self included) that make a voxel a core voxel.
    cluster_core_neighbors: usize = 5,
    /// Classes that never form objects.
    excluded_classes: ClassList = ClassList(DEFAULT_EXCLUDED_CLASSES.into_iter().collect()),
    /// Points sampled per object.
    sample_size: usize = 1024,
    /// Edge normalizer, meters.
    alpha: f64 = 20.0,
    /// Local descriptor backend.
    descriptor: String = "reference".into(),
    /// Network weight file; empty means seeded random weights.
    weights: String = String::new(),
    /// Seed for random network weights.
    weights_seed: u64 = 0,
    /// Hidden width of random network weights.
    net_hidden: usize = 256,
    /// Message-passing layers of random network weights.
    net_layers: usize = 3,
    /// GeM exponent of random network weights.
    gem_lambda: f64 = 3.0,
    /// Length disagreement at which a landmark pair stops counting, meters.
    d_t: f64 = 1.0,
    /// Consistency threshold above which a candidate is a revisit.
    epsilon_c: f64 = crate::retrieval::DEFAULT_EPSILON_C,
    /// Divide the consistency score by the inlier count.
    normalize_consistency: bool = false,
    /// Candidates re-ranked per query.
    top_k: usize = 20,
    /// Entries newer than this many seconds before a query are skipped.
    exclusion: f64 = 30.0,
    /// Node features used for matching: local or enriched.
    match_features: String = "local".into(),
    /// RANSAC inlier distance, meters.
    ransac_inlier_tol: f64 = 0.5,
    /// RANSAC iteration cap.
    ransac_max_iters: usize = 10_000,
    /// RANSAC confidence for the adaptive iteration budget.
    ransac_confidence: f64 = 0.999,
    /// RANSAC sampling seed.
    ransac_seed: u64 = 0,
    /// ICP association cap, meters.
    icp_max_correspondence: f64 = 1.0,
    /// ICP iteration cap.
    icp_max_iters: usize = 50,
    /// ICP convergence threshold on the update, meters or radians.
    icp_tolerance: f64 = 1e-4,
    /// True-positive radius for place recognition, meters.
    r_tp: f64 = 3.0,
    /// False-positive radius for place recognition, meters.
    r_fp: f64 = 20.0,
    /// Largest rotation error of a successful registration, degrees.
    success_rre_deg: f64 = 5.0,
    /// Largest translation error of a successful registration, meters.
    success_rte_m: f64 = 2.0,
    /// Pairs closer than this are registered by eval-reg, meters.
    register_radius: f64 = 20.0,
    /// Raw label translation: identity or semantickitti.
    label_map: String = "identity".into(),
    /// Seed of the synthetic world.
    seed: u64 = 0,
    /// Submaps in the synthetic world.
    synth_submaps: usize = 200,
    /// Fraction of synthetic submaps that revisit earlier places.
    synth_revisit_fraction: f64 = 0.2,
    /// Largest synthetic revisit offset, meters.
    synth_offset_max: f64 = 2.0,
    /// Synthetic point noise, meters.
    synth_noise: f64 = 0.02,
    /// Probability that a synthetic object is missing from a submap.
    synth_dropout: f64 = 0.1,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", n + 1)));
            };
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn features(&self) -> Result<FeatureSource> {
        self.match_features.parse()
    }

    pub fn cluster(&self) -> ClusterParams {
        ClusterParams {
            eps: self.cluster_eps,
            min_pts: self.cluster_min_pts,
            core_neighbors: self.cluster_core_neighbors,
            excluded_classes: self.excluded_classes.0.clone(),
        }
    }

    pub fn extract(&self) -> ExtractParams {
        ExtractParams { cluster: self.cluster(), sample_size: self.sample_size, alpha: self.alpha }
    }

    pub fn net_dims(&self) -> NetDims {
        NetDims { hidden: self.net_hidden, layers: self.net_layers, ..NetDims::default() }
    }

    pub fn ransac(&self) -> RansacParams {
        RansacParams {
            inlier_tol: self.ransac_inlier_tol,
            max_iters: self.ransac_max_iters,
            confidence: self.ransac_confidence,
            seed: self.ransac_seed,
        }
    }

    pub fn icp(&self) -> IcpParams {
        IcpParams { max_correspondence: self.icp_max_correspondence, max_iters: self.icp_max_iters, tolerance: self.icp_tolerance }
    }

    pub fn register(&self) -> Result<RegisterParams> {
        Ok(RegisterParams { ransac: self.ransac(), icp: self.icp(), features: self.features()? })
    }

    pub fn rerank(&self) -> Result<RerankParams> {
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(RerankParams {
            k: self.top_k,
            exclusion: self.exclusion,
            epsilon_c: self.epsilon_c,
            consistency: ConsistencyParams {
                d_t: self.d_t,
                normalize: self.normalize_consistency,
                features: self.features()?,
                ransac: self.ransac(),
            },
        })
    }

    pub fn metrics(&self) -> MetricParams {
        MetricParams { r_tp: self.r_tp, r_fp: self.r_fp, exclusion: self.exclusion }
    }

    pub fn world(&self) -> WorldSpec {
        WorldSpec {
            seed: self.seed,
            submap_count: self.synth_submaps,
            revisit_fraction: self.synth_revisit_fraction,
            offset_max: self.synth_offset_max,
            noise_sigma: self.synth_noise,
            dropout: self.synth_dropout,
            ..WorldSpec::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = Config::default();
        assert_eq!(Config::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.top_k, 20);
        assert_eq!(cfg.exclusion, 30.0);
        assert_eq!(cfg.d_t, 1.0);
    }

    #[test]
    fn every_key_is_documented_and_settable() {
        let text = Config::default().to_text();
        for (key, doc) in Config::KEYS {
            assert!(!doc.is_empty(), "{key}");
            assert!(text.contains(&format!("\n{key} = ")) || text.contains(&format!("{key} = ")));
        }
    }

    #[test]
    fn file_values_and_comments() {
        let cfg = Config::parse("# comment\n\nvoxel_size = 0.2  # trailing\nexcluded_classes = 1, 2\nnormalize_consistency = true\n").unwrap();
        assert_eq!(cfg.voxel_size, 0.2);
        assert_eq!(cfg.excluded_classes.0, [1, 2].into_iter().collect());
        assert!(cfg.normalize_consistency);
    }

    #[test]
    fn unknown_and_malformed_rejected() {
        assert!(matches!(Config::parse("nope = 1"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("voxel_size 0.1"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("top_k = many"), Err(Error::Config(_))));
    }

    #[test]
    fn later_values_override() {
        let mut cfg = Config::parse("seed = 4").unwrap();
        cfg.set("seed", "9").unwrap();
        assert_eq!(cfg.seed, 9);
    }
}
