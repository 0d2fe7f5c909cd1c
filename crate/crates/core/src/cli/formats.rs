//! Dataset text and binary formats: velodyne scans, label files, pose and
//! timestamp lists, and the raw-to-training label translation.

use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointSet, Pose};

/// Rotation deviation above which a pose is reported before projecting it.
pub const POSE_WARN_TOL: f64 = 1e-3;

/// Points and per-point intensities of one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub points: PointSet,
    pub intensities: Vec<f32>,
}

/// Little-endian `f32` quadruples `(x, y, z, intensity)`.
pub fn parse_scan(bytes: &[u8]) -> Result<Scan> {
    if bytes.len() % 16 != 0 {
        return Err(Error::Format(format!("scan size {} is not a multiple of 16 bytes", bytes.len())));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    let mut intensities = Vec::with_capacity(bytes.len() / 16);
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().expect("4-byte slice"));
        points.push(Point3::new(f(0) as f64, f(1) as f64, f(2) as f64));
        intensities.push(f(3));
    }
    Ok(Scan { points: PointSet::new(points)?, intensities })
}

pub fn read_scan(path: &Path) -> Result<Scan> {
    parse_scan(&fs::read(path)?)
}

pub fn write_scan(path: &Path, points: &[Point3], intensities: &[f32]) -> Result<()> {
    if points.len() != intensities.len() {
        return Err(Error::Mismatch { expected: points.len(), found: intensities.len() });
    }
    let mut buf = Vec::with_capacity(points.len() * 16);
    for (p, &i) in points.iter().zip(intensities) {
        for v in [p.x as f32, p.y as f32, p.z as f32, i] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Class id of a raw label word: the low 16 bits.
pub fn class_of(word: u32) -> u16 {
    (word & 0xFFFF) as u16
}

/// Raw little-endian `u32` label words; the upper 16 bits carry an instance
/// id that is kept but not used.
pub fn parse_labels(bytes: &[u8], expected: usize) -> Result<Vec<u32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!("label size {} is not a multiple of 4 bytes", bytes.len())));
    }
    let words: Vec<u32> = bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4-byte slice"))).collect();
    if words.len() != expected {
        return Err(Error::Mismatch { expected, found: words.len() });
    }
    Ok(words)
}

pub fn read_labels(path: &Path, expected: usize) -> Result<Vec<u32>> {
    parse_labels(&fs::read(path)?, expected)
}

pub fn write_labels(path: &Path, words: &[u32]) -> Result<()> {
    fs::write(path, words.iter().flat_map(|w| w.to_le_bytes()).collect::<Vec<u8>>())?;
    Ok(())
}

/// One pose per non-empty line: twelve numbers, row-major `[R | t]`.
/// Rotations off by more than [`POSE_WARN_TOL`] are reported and projected
/// onto the nearest rotation; smaller deviations are projected silently.
pub fn parse_poses(text: &str) -> Result<Vec<Pose>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::Format(format!("pose line {}: bad number '{t}'", n + 1))))
            .collect::<Result<_>>()?;
        if vals.len() != 12 {
            return Err(Error::Format(format!("pose line {}: expected 12 numbers, found {}", n + 1, vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("pose line {}: non-finite value", n + 1)));
        }
        let r = Matrix3::new(vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10]);
        let t = Vector3::new(vals[3], vals[7], vals[11]);
        let dev = (r.transpose() * r - Matrix3::identity()).abs().max().max((r.determinant() - 1.0).abs());
        if dev > POSE_WARN_TOL {
            warn!("pose line {}: rotation deviates from orthonormal by {dev:.3e}; projecting", n + 1);
        }
        out.push(match Pose::new(r, t) {
            Ok(p) => p,
            Err(_) => Pose::from_nearest_rotation(&r, t)?,
        });
    }
    Ok(out)
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    parse_poses(&fs::read_to_string(path)?)
}

pub fn format_poses(poses: &[Pose]) -> String {
    let mut out = String::new();
    for p in poses {
        let vals: Vec<String> = p.to_row_major_3x4().iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    fs::write(path, format_poses(poses))?;
    Ok(())
}

/// One timestamp in seconds per non-empty line.
pub fn parse_times(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Format(format!("times line {}: bad value", n + 1)))
        })
        .collect()
}

pub fn read_times(path: &Path) -> Result<Vec<f64>> {
    parse_times(&fs::read_to_string(path)?)
}

pub fn write_times(path: &Path, times: &[f64]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for t in times {
        writeln!(f, "{t:e}")?;
    }
    Ok(())
}

/// How raw label ids become class ids in `0..20`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMap {
    /// Raw ids are already class ids.
    Identity,
    /// The SemanticKITTI raw ids, moving classes folded into static ones.
    SemanticKitti,
}

impl std::str::FromStr for LabelMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "semantickitti" => Ok(Self::SemanticKitti),
            other => Err(Error::Config(format!("unknown label map '{other}'"))),
        }
    }
}

impl LabelMap {
    /// Ids without a mapping become 0 (unlabeled).
    pub fn apply(self, raw: u16, num_classes: usize) -> u16 {
        let c = match self {
            Self::Identity => raw,
            Self::SemanticKitti => semantickitti_class(raw),
        };
        if (c as usize) < num_classes { c } else { 0 }
    }
}

fn semantickitti_class(raw: u16) -> u16 {
    match raw {
        10 | 252 => 1,
        11 => 2,
        15 => 3,
        18 | 258 => 4,
        13 | 16 | 20 | 256 | 257 | 259 => 5,
        30 | 254 => 6,
        31 | 253 => 7,
        32 | 255 => 8,
        40 | 60 => 9,
        44 => 10,
        48 => 11,
        49 => 12,
        50 => 13,
        51 => 14,
        70 => 15,
        71 => 16,
        72 => 17,
        80 => 18,
        81 => 19,
        _ => 0,
    }
}
