//! Deterministic synthetic scenes and worlds with exact ground truth.
//!
//! Objects are surface-sampled primitives standing on a flat ground: boxes
//! (cars, trucks, buildings), ellipsoids (vegetation, people), cylinder
//! shells (trunks, poles) and vertical plane patches (fences, signs).
//! Class ids follow the SemanticKITTI learning map.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{random_unit_vector, Point3, Pose};
use crate::submap::{voxelize, Submap, DEFAULT_VOXEL_SIZE};

pub const NUM_CLASSES: usize = 20;
/// Surface samples per square meter.
pub const SURFACE_DENSITY: f64 = 200.0;
pub const ROAD_CLASS: u16 = 9;
/// car, truck, person, building, fence, vegetation, trunk, pole, sign.
pub const DEFAULT_PALETTE: [u16; 9] = [1, 4, 6, 13, 14, 15, 16, 18, 19];

const MIN_GAP: f64 = 1.0;
/// Sparse road returns per square meter.
const ROAD_DENSITY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Box { length: f64, width: f64, height: f64 },
    Ellipsoid { radii: Vector3<f64> },
    Cylinder { radius: f64, height: f64 },
    Plane { width: f64, height: f64, elevation: f64 },
}

impl Shape {
    fn random(class_id: u16, rng: &mut impl Rng) -> Self {
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        match class_id {
            1 => Shape::Box { length: u(3.8, 4.6), width: u(1.6, 1.9), height: u(1.4, 1.6) },
            4 => Shape::Box { length: u(5.5, 7.0), width: u(2.2, 2.5), height: u(2.5, 3.0) },
            13 => Shape::Box { length: u(4.0, 7.0), width: u(3.0, 5.0), height: u(3.0, 4.5) },
            6 => Shape::Ellipsoid { radii: Vector3::new(u(0.25, 0.3), u(0.2, 0.25), u(0.85, 0.95)) },
            15 => Shape::Ellipsoid { radii: Vector3::new(u(1.0, 2.0), u(1.0, 2.0), u(1.0, 1.8)) },
            16 => Shape::Cylinder { radius: u(0.15, 0.3), height: u(2.5, 4.0) },
            18 => Shape::Cylinder { radius: u(0.1, 0.15), height: u(4.0, 6.0) },
            14 => Shape::Plane { width: u(4.0, 8.0), height: u(1.0, 1.5), elevation: 0.0 },
            19 => Shape::Plane { width: u(1.2, 1.8), height: u(0.9, 1.3), elevation: 2.0 },
            _ => Shape::Box { length: u(1.0, 3.0), width: u(1.0, 3.0), height: u(1.0, 2.0) },
        }
    }

    /// Radius of the ground footprint around the object's base point.
    fn footprint(&self) -> f64 {
        match *self {
            Shape::Box { length, width, .. } => 0.5 * length.hypot(width),
            Shape::Ellipsoid { radii } => radii.x.max(radii.y),
            Shape::Cylinder { radius, .. } => radius,
            Shape::Plane { width, .. } => 0.5 * width,
        }
    }

    /// Geometric center relative to the base point.
    fn center(&self) -> Point3 {
        let z = match *self {
            Shape::Box { height, .. } | Shape::Cylinder { height, .. } => 0.5 * height,
            Shape::Ellipsoid { radii } => radii.z,
            Shape::Plane { height, elevation, .. } => elevation + 0.5 * height,
        };
        Point3::new(0.0, 0.0, z)
    }

    /// Uniform-ish surface samples in the object frame (base at the origin).
    fn sample(&self, rng: &mut impl Rng, density: f64, out: &mut Vec<Point3>) {
        let count = |area: f64| (area * density).round() as usize;
        match *self {
            Shape::Box { length, width, height } => {
                let (hl, hw) = (0.5 * length, 0.5 * width);
                for _ in 0..count(length * width) {
                    out.push(Point3::new(rng.random_range(-hl..hl), rng.random_range(-hw..hw), height));
                }
                for side in [-1.0, 1.0] {
                    for _ in 0..count(length * height) {
                        out.push(Point3::new(rng.random_range(-hl..hl), side * hw, rng.random_range(0.0..height)));
                    }
                    for _ in 0..count(width * height) {
                        out.push(Point3::new(side * hl, rng.random_range(-hw..hw), rng.random_range(0.0..height)));
                    }
                }
            }
            Shape::Ellipsoid { radii } => {
                // Knud Thomsen's approximation of the surface area.
                let p = 1.6075;
                let (a, b, c) = (radii.x.powf(p), radii.y.powf(p), radii.z.powf(p));
                let area = 4.0 * PI * ((a * b + a * c + b * c) / 3.0).powf(1.0 / p);
                for _ in 0..count(area) {
                    let d = random_unit_vector(rng);
                    out.push(Point3::new(d.x * radii.x, d.y * radii.y, d.z * radii.z + radii.z));
                }
            }
            Shape::Cylinder { radius, height } => {
                for _ in 0..count(2.0 * PI * radius * height) {
                    let t = rng.random_range(0.0..2.0 * PI);
                    out.push(Point3::new(radius * t.cos(), radius * t.sin(), rng.random_range(0.0..height)));
                }
            }
            Shape::Plane { width, height, elevation } => {
                let hw = 0.5 * width;
                for _ in 0..count(width * height) {
                    out.push(Point3::new(rng.random_range(-hw..hw), 0.0, elevation + rng.random_range(0.0..height)));
                }
            }
        }
    }
}

/// One object placed in a world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthObject {
    pub class_id: u16,
    pub shape: Shape,
    /// Ground contact point.
    pub base: Point3,
    pub yaw: f64,
}

impl SynthObject {
    fn placement(&self) -> Pose {
        Pose::from_axis_angle(&Vector3::z(), self.yaw, self.base)
    }

    /// Geometric center in the world frame.
    pub fn center(&self) -> Point3 {
        self.placement().transform_point(&self.shape.center())
    }

    pub fn footprint(&self) -> f64 {
        self.shape.footprint()
    }

    /// Fresh surface samples in the world frame.
    pub fn sample(&self, rng: &mut impl Rng, density: f64) -> Vec<Point3> {
        let mut local = Vec::new();
        self.shape.sample(rng, density, &mut local);
        let place = self.placement();
        local.iter().map(|p| place.transform_point(p)).collect()
    }
}

fn clear_of(others: &[SynthObject], base: &Point3, footprint: f64) -> bool {
    others.iter().all(|o| (o.base.xy() - base.xy()).norm() >= o.footprint() + footprint + MIN_GAP)
}

/// Labelled point cloud being assembled for one observation.
#[derive(Default)]
struct Cloud {
    points: Vec<Point3>,
    labels: Vec<u16>,
}

impl Cloud {
    fn push_object(&mut self, obj: &SynthObject, to_local: &Pose, noise: Option<&Normal<f64>>, rng: &mut ChaCha8Rng) {
        for p in obj.sample(rng, SURFACE_DENSITY) {
            let mut q = to_local.transform_point(&p);
            if let Some(n) = noise {
                q += Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
            }
            self.points.push(q);
            self.labels.push(obj.class_id);
        }
    }

    fn push_road(&mut self, center: &Point3, radius: f64, to_local: &Pose, rng: &mut ChaCha8Rng) {
        let n = (PI * radius * radius * ROAD_DENSITY).round() as usize;
        for _ in 0..n {
            let r = radius * rng.random::<f64>().sqrt();
            let t = rng.random_range(0.0..2.0 * PI);
            let p = center + Vector3::new(r * t.cos(), r * t.sin(), -center.z);
            self.points.push(to_local.transform_point(&p));
            self.labels.push(ROAD_CLASS);
        }
    }

    fn into_submap(self, id: u64, origin: Pose, timestamp: f64) -> Result<Submap> {
        let mut probs = vec![0.0; self.points.len() * NUM_CLASSES];
        for (i, &l) in self.labels.iter().enumerate() {
            probs[i * NUM_CLASSES + l as usize] = 1.0;
        }
        let grid = voxelize(&self.points, &probs, NUM_CLASSES, DEFAULT_VOXEL_SIZE)?;
        Ok(Submap { id, origin, timestamp, grid })
    }
}

fn noise_dist(sigma: f64) -> Result<Option<Normal<f64>>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(None);
    }
    Normal::new(0.0, sigma).map(Some).map_err(|e| Error::InvalidInput(e.to_string()))
}

fn check_dropout(dropout: f64) -> Result<()> {
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::InvalidInput(format!("dropout must be in [0, 1), got {dropout}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub objects: usize,
    pub palette: Vec<u16>,
    pub noise_sigma: f64,
    /// Probability that an object is missing from the second submap.
    pub dropout: f64,
    pub max_rotation_deg: f64,
    pub max_translation: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            objects: 20,
            palette: DEFAULT_PALETTE.to_vec(),
            noise_sigma: 0.02,
            dropout: 0.3,
            max_rotation_deg: 180.0,
            max_translation: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenePair {
    pub a: Submap,
    pub b: Submap,
    /// Maps frame-B coordinates into frame A.
    pub gt: Pose,
    /// `(index in objects, index among survivors in B)` for every object
    /// present in both submaps.
    pub correspondences: Vec<(usize, usize)>,
    /// Objects in frame A.
    pub objects: Vec<SynthObject>,
}

fn place_objects(rng: &mut ChaCha8Rng, count: usize, palette: &[u16]) -> Vec<SynthObject> {
    let mut radius = (6.0 * (count as f64).sqrt()).max(15.0);
    let mut out: Vec<SynthObject> = Vec::with_capacity(count);
    let mut failures = 0;
    while out.len() < count {
        let class_id = palette[rng.random_range(0..palette.len())];
        let shape = Shape::random(class_id, rng);
        let r = radius * rng.random::<f64>().sqrt();
        let t = rng.random_range(0.0..2.0 * PI);
        let base = Point3::new(r * t.cos(), r * t.sin(), 0.0);
        if clear_of(&out, &base, shape.footprint()) {
            out.push(SynthObject { class_id, shape, base, yaw: rng.random_range(0.0..2.0 * PI) });
        } else {
            failures += 1;
            if failures % 200 == 0 {
                radius *= 1.2;
            }
        }
    }
    out
}

/// Two observations of one scene. B sees the scene through `gt⁻¹`, with
/// fresh surface samples, Gaussian point noise and object dropout.
pub fn generate_pair(spec: &SceneSpec) -> Result<ScenePair> {
    check_dropout(spec.dropout)?;
    let noise = noise_dist(spec.noise_sigma)?;
    if spec.palette.is_empty() || spec.palette.iter().any(|&c| c as usize >= NUM_CLASSES) {
        return Err(Error::InvalidInput("palette must hold class ids below 20".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let objects = place_objects(&mut rng, spec.objects, &spec.palette);
    let gt = Pose::random(&mut rng, spec.max_rotation_deg, spec.max_translation);
    let keep: Vec<bool> = objects.iter().map(|_| !rng.random_bool(spec.dropout)).collect();

    let extent = objects.iter().map(|o| o.base.norm() + o.footprint()).fold(0.0, f64::max);
    let mut a = Cloud::default();
    let mut b = Cloud::default();
    let to_b = gt.inverse();
    let mut correspondences = Vec::new();
    for (i, obj) in objects.iter().enumerate() {
        a.push_object(obj, &Pose::identity(), None, &mut rng);
        if keep[i] {
            correspondences.push((i, correspondences.len()));
            b.push_object(obj, &to_b, noise.as_ref(), &mut rng);
        }
    }
    a.push_road(&Point3::zeros(), extent, &Pose::identity(), &mut rng);
    b.push_road(&Point3::zeros(), extent, &to_b, &mut rng);
    Ok(ScenePair {
        a: a.into_submap(0, Pose::identity(), 0.0)?,
        b: b.into_submap(1, gt, 0.0)?,
        gt,
        correspondences,
        objects,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub seed: u64,
    pub submap_count: usize,
    /// Distance between consecutive submaps, meters.
    pub step: f64,
    /// Seconds between consecutive submaps.
    pub time_step: f64,
    pub revisit_fraction: f64,
    pub offset_min: f64,
    pub offset_max: f64,
    pub noise_sigma: f64,
    pub dropout: f64,
    /// Objects farther than this from a submap origin are not observed.
    pub sensor_range: f64,
    pub objects_per_step: usize,
    pub palette: Vec<u16>,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            submap_count: 200,
            step: 10.0,
            time_step: 10.0,
            revisit_fraction: 0.2,
            offset_min: 0.0,
            offset_max: 2.0,
            noise_sigma: 0.02,
            dropout: 0.1,
            sensor_range: 20.0,
            objects_per_step: 5,
            palette: DEFAULT_PALETTE.to_vec(),
        }
    }
}

impl WorldSpec {
    /// Same world without sensor noise or dropout.
    pub fn noiseless(&self) -> Self {
        Self { noise_sigma: 0.0, dropout: 0.0, ..self.clone() }
    }

    pub fn revisit_count(&self) -> usize {
        (self.revisit_fraction * self.submap_count as f64).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct WorldSubmap {
    pub submap: Submap,
    /// Id of the earlier submap this one re-observes.
    pub partner: Option<u64>,
    pub reversed: bool,
}

impl WorldSubmap {
    pub fn pose(&self) -> &Pose {
        &self.submap.origin
    }

    pub fn position(&self) -> Point3 {
        *self.submap.origin.translation()
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub submaps: Vec<WorldSubmap>,
    pub objects: Vec<SynthObject>,
}

struct Visit {
    pose: Pose,
    partner: Option<u64>,
    reversed: bool,
}

/// Wiggly path that always advances along +x, so it never crosses itself.
fn trajectory(count: usize, step: f64, phase: f64) -> Vec<Pose> {
    let mut pos = Point3::zeros();
    (0..count)
        .map(|i| {
            let t = i as f64;
            let heading = 0.45 * (0.15 * t + phase).sin() + 0.2 * (0.05 * t + 1.0 + phase).sin();
            let pose = Pose::from_axis_angle(&Vector3::z(), heading, pos);
            pos += step * Vector3::new(heading.cos(), heading.sin(), 0.0);
            pose
        })
        .collect()
}

fn populate(rng: &mut ChaCha8Rng, path: &[Pose], spec: &WorldSpec) -> Vec<SynthObject> {
    let mut objects: Vec<SynthObject> = Vec::new();
    for pose in path {
        let start = objects.len().saturating_sub(8 * spec.objects_per_step);
        let mut placed = 0;
        let mut attempts = 0;
        while placed < spec.objects_per_step && attempts < 500 {
            attempts += 1;
            let class_id = spec.palette[rng.random_range(0..spec.palette.len())];
            let shape = Shape::random(class_id, rng);
            let along = rng.random_range(-0.5 * spec.step..0.5 * spec.step);
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let lateral = side * (4.0 + shape.footprint() + rng.random_range(0.0..12.0));
            let base = pose.transform_point(&Point3::new(along, lateral, 0.0));
            if clear_of(&objects[start..], &base, shape.footprint()) {
                objects.push(SynthObject { class_id, shape, base, yaw: rng.random_range(0.0..2.0 * PI) });
                placed += 1;
            }
        }
    }
    objects
}

fn plan_revisits(rng: &mut ChaCha8Rng, path: &[Pose], spec: &WorldSpec) -> Result<Vec<Visit>> {
    let revisits = spec.revisit_count();
    let originals = path.len();
    let mut visits: Vec<Visit> = path.iter().map(|&pose| Visit { pose, partner: None, reversed: false }).collect();
    if revisits == 0 {
        return Ok(visits);
    }
    // Partners must be retrievable: old enough to clear a 30 s window even
    // for the first revisit.
    let lag = (30.0 / spec.time_step).ceil() as usize;
    let forward = revisits.div_ceil(2);
    let backward = revisits - forward;
    let gap = 5;
    let usable = originals.saturating_sub(lag);
    if forward + backward + gap > usable {
        return Err(Error::InvalidInput(format!(
            "{revisits} revisits do not fit in a path of {originals} submaps"
        )));
    }
    let slack = usable - forward - backward - gap;
    let first = rng.random_range(0..=slack);
    let second = first + forward + gap + rng.random_range(0..=slack - first);

    let forward_partners = first..first + forward;
    let backward_partners = (second..second + backward).rev();
    let partners = forward_partners.map(|p| (p, false)).chain(backward_partners.map(|p| (p, true)));
    for (p, reversed) in partners {
        let base = &path[p];
        let r = rng.random_range(spec.offset_min..=spec.offset_max);
        let t = rng.random_range(0.0..2.0 * PI);
        let jitter = rng.random_range(-5.0f64..5.0).to_radians();
        let turn = if reversed { PI } else { 0.0 } + jitter;
        let rotation = Rotation3::from_axis_angle(&Vector3::z_axis(), turn).into_inner() * base.rotation();
        let translation = base.translation() + Vector3::new(r * t.cos(), r * t.sin(), 0.0);
        visits.push(Visit { pose: Pose::from_nearest_rotation(&rotation, translation)?, partner: Some(p as u64), reversed });
    }
    Ok(visits)
}

/// A drive through a static world of objects. The first submaps follow a
/// fresh path; the last `revisit_fraction` of them re-drive two stretches of
/// it, one in the original direction and one reversed, each submap offset
/// by up to `offset_max` from the one it re-observes.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    if !(0.0..=1.0).contains(&spec.revisit_fraction) {
        return Err(Error::InvalidInput(format!("revisit fraction must be in [0, 1], got {}", spec.revisit_fraction)));
    }
    if spec.offset_min < 0.0 || spec.offset_max < spec.offset_min {
        return Err(Error::InvalidInput("revisit offset range must satisfy 0 <= min <= max".into()));
    }
    if spec.palette.is_empty() || spec.palette.iter().any(|&c| c as usize >= NUM_CLASSES) {
        return Err(Error::InvalidInput("palette must hold class ids below 20".into()));
    }
    check_dropout(spec.dropout)?;
    let noise = noise_dist(spec.noise_sigma)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let originals = spec.submap_count - spec.revisit_count().min(spec.submap_count);
    let path = trajectory(originals, spec.step, rng.random_range(0.0..2.0 * PI));
    let objects = populate(&mut rng, &path, spec);
    let visits = plan_revisits(&mut rng, &path, spec)?;

    let submaps = visits
        .par_iter()
        .enumerate()
        .map(|(i, visit)| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64 + 1);
            let to_local = visit.pose.inverse();
            let here = visit.pose.translation();
            let mut cloud = Cloud::default();
            for obj in &objects {
                let seen = (obj.base.xy() - here.xy()).norm() <= spec.sensor_range;
                // Draw the dropout coin for every object so streams stay aligned.
                let dropped = rng.random_bool(spec.dropout);
                if seen && !dropped {
                    cloud.push_object(obj, &to_local, noise.as_ref(), &mut rng);
                }
            }
            cloud.push_road(here, spec.sensor_range, &to_local, &mut rng);
            let submap = cloud.into_submap(i as u64, visit.pose, i as f64 * spec.time_step)?;
            Ok(WorldSubmap { submap, partner: visit.partner, reversed: visit.reversed })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(World { submaps, objects })
}
