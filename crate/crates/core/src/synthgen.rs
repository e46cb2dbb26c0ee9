//! Deterministic synthetic scene pairs with known ground truth.
//!
//! Objects are surface-sampled primitives (box, sphere, sphere cluster) standing on a
//! floor. Every object of a pair lives in one world frame; the source side renders
//! the shared and source-only objects, the target side renders the shared and
//! target-only objects after mapping them through the planted transform.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bundle::{
    read_bundle, write_bundle, CameraIntrinsics, CameraPose, DepthFrame, GeometricDescriptorSet, ObjectMask,
    SceneBundle, SemanticFeature,
};
use crate::error::{Result, ZeroRegError};
use crate::registration::RigidTransform;

pub const VOCABULARY: [&str; 12] = [
    "chair", "table", "sofa", "lamp", "bed", "desk", "shelf", "cabinet", "plant", "monitor", "bin", "stool",
];

/// Depth values are stored as multiples of this (meters).
pub const DEPTH_QUANTUM: f64 = 1e-4;
/// Depth noise is a Gaussian truncated at this many sigmas.
pub const NOISE_TRUNCATION: f64 = 1.2;

const PROTOTYPE_SEED: u64 = 0x5eed_cafe;
const ROOM_HALF_EXTENT: f64 = 1.2;
const CAMERA_DISTANCE: f64 = 3.5;
const CAMERA_HEIGHT: f64 = 1.6;
const VIEW_SPACING_DEG: f64 = 20.0;
const TARGET_AZIMUTH_OFFSET_DEG: f64 = 35.0;
const MIN_MASK_PIXELS: usize = 8;
const OUTLIER_MASK_SIZE: usize = 10;
const NEAR_PLANE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub object_count: usize,
    /// Instances of the first category; all other objects get distinct categories.
    pub duplicates_per_category: usize,
    pub points_per_object: usize,
    pub view_count: usize,
    pub overlap_ratio: f64,
    pub semantic_noise_sigma: f64,
    pub descriptor_noise_sigma: f64,
    pub depth_noise_sigma: f64,
    pub outlier_mask_count: usize,
    pub seed: u64,
    pub semantic_dim: usize,
    pub descriptor_dim: usize,
    /// Distinct local textures per scene; every surface point draws its descriptor
    /// from these. 0 gives every point its own descriptor.
    pub descriptor_codebook: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            object_count: 5,
            duplicates_per_category: 2,
            points_per_object: 600,
            view_count: 3,
            overlap_ratio: 1.0,
            semantic_noise_sigma: 0.05,
            descriptor_noise_sigma: 0.05,
            depth_noise_sigma: 0.005,
            outlier_mask_count: 1,
            seed: 0,
            semantic_dim: 16,
            descriptor_dim: 32,
            descriptor_codebook: 64,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(ZeroRegError::validation(format!("spec.{field}"), msg));
        if self.object_count == 0 {
            return bad("object_count", "must be >= 1");
        }
        if self.view_count == 0 {
            return bad("view_count", "must be >= 1");
        }
        if self.points_per_object == 0 {
            return bad("points_per_object", "must be >= 1");
        }
        if self.duplicates_per_category == 0 || self.duplicates_per_category > self.object_count {
            return bad("duplicates_per_category", "must lie in [1, object_count]");
        }
        if self.object_count - self.duplicates_per_category + 1 > VOCABULARY.len() {
            return bad("object_count", "more distinct categories than the vocabulary holds");
        }
        if !(self.overlap_ratio > 0.0 && self.overlap_ratio <= 1.0) {
            return bad("overlap_ratio", "must lie in (0, 1]");
        }
        for (name, s) in [
            ("semantic_noise_sigma", self.semantic_noise_sigma),
            ("descriptor_noise_sigma", self.descriptor_noise_sigma),
            ("depth_noise_sigma", self.depth_noise_sigma),
        ] {
            if !(s.is_finite() && s >= 0.0) {
                return bad(name, "must be finite and >= 0");
            }
        }
        if self.semantic_dim == 0 || self.descriptor_dim == 0 {
            return bad("semantic_dim", "feature dimensions must be >= 1");
        }
        Ok(())
    }
}

/// Which generator object a mask shows; `None` for outlier masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskObject {
    pub view_id: u32,
    pub mask_id: u32,
    pub object: Option<usize>,
}

/// Ground truth of a generated pair. Object indices number the objects of the
/// whole pair; keypoint indices refer to each bundle's geometric sets concatenated
/// in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub transform: RigidTransform,
    pub object_pairs: Vec<(usize, usize)>,
    pub point_pairs: Vec<(usize, usize)>,
    /// Surface samples of the shared objects, source frame.
    pub overlap_points: Vec<Point3<f64>>,
    pub object_labels: Vec<String>,
    pub source_masks: Vec<MaskObject>,
    pub target_masks: Vec<MaskObject>,
}

impl GroundTruth {
    pub fn source_object(&self, view_id: u32, mask_id: u32) -> Option<usize> {
        lookup(&self.source_masks, view_id, mask_id)
    }

    pub fn target_object(&self, view_id: u32, mask_id: u32) -> Option<usize> {
        lookup(&self.target_masks, view_id, mask_id)
    }
}

fn lookup(table: &[MaskObject], view_id: u32, mask_id: u32) -> Option<usize> {
    table
        .iter()
        .find(|m| m.view_id == view_id && m.mask_id == mask_id)
        .and_then(|m| m.object)
}

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 140.0,
        fy: 140.0,
        cx: 79.5,
        cy: 59.5,
        width: 160,
        height: 120,
    }
}

// ---------------------------------------------------------------------------
// Rendering

struct Raster {
    depth: Vec<f64>,
    winner: Vec<Option<usize>>,
}

/// Z-buffer of `points`; with `normals`, back-facing points are culled first.
fn rasterize(
    points: &[Point3<f64>],
    normals: Option<&[Vector3<f64>]>,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
) -> Raster {
    let mut raster = Raster {
        depth: vec![f64::INFINITY; intr.width * intr.height],
        winner: vec![None; intr.width * intr.height],
    };
    for (i, p) in points.iter().enumerate() {
        if let Some(n) = normals {
            if n[i].dot(&(p.coords - pose.translation)) >= 0.0 {
                continue;
            }
        }
        let cam = pose.world_to_camera(p);
        if cam.z <= NEAR_PLANE {
            continue;
        }
        let (u, v, z) = intr.project(&cam);
        if let Some((col, row)) = intr.pixel_index(u, v) {
            let idx = row * intr.width + col;
            if z < raster.depth[idx] {
                raster.depth[idx] = z;
                raster.winner[idx] = Some(i);
            }
        }
    }
    raster
}

fn quantize(z: f64) -> f32 {
    ((z / DEPTH_QUANTUM).round() * DEPTH_QUANTUM) as f32
}

/// Pinhole z-buffer render: each pixel keeps the nearest point's depth (quantized),
/// unhit pixels are 0.
pub fn render_depth(points: &[Point3<f64>], intrinsics: &CameraIntrinsics, pose: &CameraPose) -> Result<DepthFrame> {
    let raster = rasterize(points, None, intrinsics, pose);
    if raster.winner.iter().all(Option::is_none) {
        return Err(ZeroRegError::EmptyRender);
    }
    Ok(DepthFrame {
        view_id: 0,
        intrinsics: *intrinsics,
        pose: *pose,
        depth: raster
            .depth
            .iter()
            .map(|z| if z.is_finite() { quantize(*z) } else { 0.0 })
            .collect(),
    })
}

/// Camera at `eye` looking at `target`, image y pointing away from world +z.
pub fn look_at(eye: Point3<f64>, target: Point3<f64>) -> CameraPose {
    let forward = (target - eye).normalize();
    let right = forward.cross(&Vector3::z()).normalize();
    let down = forward.cross(&right);
    CameraPose {
        rotation: Matrix3::from_columns(&[right, down, forward]),
        translation: eye.coords,
    }
}

// ---------------------------------------------------------------------------
// Shapes

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Primitive {
    Box,
    Sphere,
    Cluster,
}

struct ShapeModel {
    points: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    /// Horizontal bounding radius.
    radius: f64,
    /// Lift placing the shape on the floor.
    lift: f64,
}

fn fibonacci_sphere(n: usize, radius: f64, center: Vector3<f64>) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let theta = golden * i as f64;
            let normal = Vector3::new(r * theta.cos(), r * theta.sin(), y);
            (center + normal * radius, normal)
        })
        .unzip()
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn build_shape(kind: Primitive, n: usize, rng: &mut ChaCha8Rng) -> ShapeModel {
    let (points, normals, radius, lift) = match kind {
        Primitive::Sphere => {
            let r = rng.random_range(0.15..0.3);
            let (p, nrm) = fibonacci_sphere(n, r, Vector3::zeros());
            (p, nrm, r, r)
        }
        Primitive::Box => {
            let h = Vector3::new(
                rng.random_range(0.15..0.3),
                rng.random_range(0.15..0.3),
                rng.random_range(0.15..0.3),
            );
            let areas = [h.y * h.z, h.y * h.z, h.x * h.z, h.x * h.z, h.x * h.y, h.x * h.y];
            let total: f64 = areas.iter().sum();
            let mut p = Vec::with_capacity(n);
            let mut nrm = Vec::with_capacity(n);
            for _ in 0..n {
                let mut pick = rng.random_range(0.0..total);
                let mut face = 0;
                while face < 5 && pick >= areas[face] {
                    pick -= areas[face];
                    face += 1;
                }
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut q = Vector3::new(
                    rng.random_range(-h.x..h.x),
                    rng.random_range(-h.y..h.y),
                    rng.random_range(-h.z..h.z),
                );
                q[axis] = sign * h[axis];
                let mut normal = Vector3::zeros();
                normal[axis] = sign;
                p.push(q);
                nrm.push(normal);
            }
            (p, nrm, h.x.hypot(h.y), h.z)
        }
        Primitive::Cluster => {
            let count = rng.random_range(3..=5usize);
            let spheres: Vec<(Vector3<f64>, f64)> = (0..count)
                .map(|_| {
                    let r = rng.random_range(0.08..0.14);
                    let c = Vector3::new(
                        rng.random_range(-0.15..0.15),
                        rng.random_range(-0.15..0.15),
                        rng.random_range(0.0..0.25),
                    );
                    (c, r)
                })
                .collect();
            let weight: f64 = spheres.iter().map(|(_, r)| r * r).sum();
            let mut p = Vec::with_capacity(n);
            let mut nrm = Vec::with_capacity(n);
            for (i, (c, r)) in spheres.iter().enumerate() {
                let share = if i + 1 == count {
                    n - p.len()
                } else {
                    ((r * r / weight) * n as f64).round() as usize
                };
                let share = share.min(n - p.len());
                let (sp, sn) = fibonacci_sphere(share, *r, *c);
                p.extend(sp);
                nrm.extend(sn);
            }
            let radius = spheres.iter().map(|(c, r)| c.x.hypot(c.y) + r).fold(0.0, f64::max);
            let lift = spheres.iter().map(|(c, r)| r - c.z).fold(f64::MIN, f64::max);
            (p, nrm, radius, lift)
        }
    };
    ShapeModel {
        points,
        normals,
        radius,
        lift,
    }
}

struct PlacedObject {
    category: usize,
    shape: usize,
    rotation: Matrix3<f64>,
    offset: Vector3<f64>,
}

impl PlacedObject {
    fn world(&self, shape: &ShapeModel) -> (Vec<Point3<f64>>, Vec<Vector3<f64>>) {
        let points = shape
            .points
            .iter()
            .map(|p| Point3::from(self.rotation * p + self.offset))
            .collect();
        let normals = shape.normals.iter().map(|n| self.rotation * n).collect();
        (points, normals)
    }
}

/// Category prototypes: seeded unit vectors, one per vocabulary word.
pub fn category_prototypes(dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROTOTYPE_SEED);
    VOCABULARY.iter().map(|_| unit_vector(&mut rng, dim)).collect()
}

fn noisy_unit(base: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut v: Vec<f64> = base
        .iter()
        .map(|b| b + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-9 {
        v = base.to_vec();
        norm = 1.0;
    }
    v.iter().map(|x| (x / norm) as f32).collect()
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let n: f64 = rng.sample(StandardNormal);
        if n.abs() <= NOISE_TRUNCATION {
            return n;
        }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let quat = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    *quat.to_rotation_matrix().matrix()
}

// ---------------------------------------------------------------------------
// Generation

/// Keypoint identity: (object, local point index).
type PointKey = (usize, usize);

struct SideOutput {
    bundle: SceneBundle,
    masks: Vec<MaskObject>,
    keys: Vec<PointKey>,
}

struct Side<'a> {
    name: &'static str,
    objects: &'a [usize],
    transform: RigidTransform,
    azimuth: f64,
    stream: u64,
}

struct World<'a> {
    spec: &'a SceneSpec,
    placed: Vec<PlacedObject>,
    shapes: Vec<ShapeModel>,
    prototypes: Vec<Vec<f64>>,
    /// Noise-free descriptor per object and local point.
    descriptors: Vec<Vec<Vec<f64>>>,
    /// Category index per object, then the categories no object uses.
    unused_categories: Vec<usize>,
}

impl World<'_> {
    fn render_side(&self, side: &Side) -> Result<SideOutput> {
        let spec = self.spec;
        let intr = default_intrinsics();
        let mut sem_rng = rng_for(spec.seed, 10 + side.stream);
        let mut desc_rng = rng_for(spec.seed, 20 + side.stream);
        let mut depth_rng = rng_for(spec.seed, 30 + side.stream);
        let mut outlier_rng = rng_for(spec.seed, 40 + side.stream);
        let mut order_rng = rng_for(spec.seed, 50 + side.stream);

        // Scene content in the side's world frame.
        let mut points = Vec::new();
        let mut normals = Vec::new();
        let mut keys = Vec::new();
        let mut center = Vector3::zeros();
        for &o in side.objects {
            let (p, n) = self.placed[o].world(&self.shapes[self.placed[o].shape]);
            keys.extend((0..p.len()).map(|l| (o, l)));
            points.extend(p.iter().map(|q| side.transform.apply(q)));
            normals.extend(n.iter().map(|v| side.transform.rotation * v));
            center += self.placed[o].offset;
        }
        center /= side.objects.len() as f64;
        let aim = Point3::new(center.x, center.y, 0.3);

        let mut bundle = SceneBundle {
            bundle_id: format!("synth-{}-{}", spec.seed, side.name),
            provenance: Default::default(),
            frames: Vec::new(),
            masks: Vec::new(),
            semantic_features: Vec::new(),
            geometric: Vec::new(),
        };
        let mut masks_gt = Vec::new();
        let mut observed = Vec::new();
        for view in 0..spec.view_count {
            let view_id = view as u32;
            let az =
                (side.azimuth + (view as f64 - (spec.view_count as f64 - 1.0) / 2.0) * VIEW_SPACING_DEG).to_radians();
            let eye = Point3::new(
                center.x + CAMERA_DISTANCE * az.cos(),
                center.y + CAMERA_DISTANCE * az.sin(),
                CAMERA_HEIGHT,
            );
            let local = look_at(eye, aim);
            let pose = CameraPose {
                rotation: side.transform.rotation * local.rotation,
                translation: side.transform.rotation * local.translation + side.transform.translation,
            };
            let raster = rasterize(&points, Some(&normals), &intr, &pose);
            let depth: Vec<f32> = raster
                .depth
                .iter()
                .map(|z| {
                    if z.is_finite() {
                        quantize(z + spec.depth_noise_sigma * truncated_normal(&mut depth_rng))
                    } else {
                        0.0
                    }
                })
                .collect();

            // Detector output order carries no identity information.
            let mut order = side.objects.to_vec();
            order.shuffle(&mut order_rng);
            let mut mask_id = 0u32;
            for &o in &order {
                let mask: Vec<bool> = raster
                    .winner
                    .iter()
                    .map(|w| w.is_some_and(|i| keys[i].0 == o))
                    .collect();
                if mask.iter().filter(|m| **m).count() < MIN_MASK_PIXELS {
                    continue;
                }
                let category = self.placed[o].category;
                bundle.masks.push(ObjectMask {
                    view_id,
                    mask_id,
                    category_label: VOCABULARY[category].to_string(),
                    width: intr.width,
                    height: intr.height,
                    mask,
                });
                bundle.semantic_features.push(SemanticFeature {
                    vector: noisy_unit(&self.prototypes[category], spec.semantic_noise_sigma, &mut sem_rng),
                    mask_ref: (view_id, mask_id),
                });
                masks_gt.push(MaskObject {
                    view_id,
                    mask_id,
                    object: Some(o),
                });
                mask_id += 1;
            }

            let mut pixels = Vec::new();
            let mut descriptors = Vec::new();
            for w in raster.winner.iter().flatten() {
                let cam = pose.world_to_camera(&points[*w]);
                let (u, v, _) = intr.project(&cam);
                let (o, l) = keys[*w];
                pixels.push([u as f32, v as f32]);
                let base = &self.descriptors[o][l];
                descriptors.extend(noisy_unit(base, spec.descriptor_noise_sigma, &mut desc_rng));
                observed.push(keys[*w]);
            }
            bundle.geometric.push(GeometricDescriptorSet {
                view_id,
                pixels,
                descriptors,
                dim: spec.descriptor_dim,
            });
            bundle.frames.push(DepthFrame {
                view_id,
                intrinsics: intr,
                pose,
                depth,
            });
        }

        // Single-view distractor masks with labels no object carries.
        for _ in 0..spec.outlier_mask_count {
            let view_id = outlier_rng.random_range(0..spec.view_count) as u32;
            let category = *self
                .unused_categories
                .choose(&mut outlier_rng)
                .ok_or_else(|| ZeroRegError::Generation("no unused category left for outlier masks".into()))?;
            let col0 = outlier_rng.random_range(0..intr.width - OUTLIER_MASK_SIZE);
            let row0 = outlier_rng.random_range(0..intr.height - OUTLIER_MASK_SIZE);
            let mask = (0..intr.width * intr.height)
                .map(|i| {
                    let (c, r) = (i % intr.width, i / intr.width);
                    (col0..col0 + OUTLIER_MASK_SIZE).contains(&c) && (row0..row0 + OUTLIER_MASK_SIZE).contains(&r)
                })
                .collect();
            let mask_id = bundle.masks.iter().filter(|m| m.view_id == view_id).count() as u32;
            bundle.masks.push(ObjectMask {
                view_id,
                mask_id,
                category_label: VOCABULARY[category].to_string(),
                width: intr.width,
                height: intr.height,
                mask,
            });
            bundle.semantic_features.push(SemanticFeature {
                vector: noisy_unit(&self.prototypes[category], spec.semantic_noise_sigma, &mut sem_rng),
                mask_ref: (view_id, mask_id),
            });
            masks_gt.push(MaskObject {
                view_id,
                mask_id,
                object: None,
            });
        }

        if !masks_gt.iter().any(|m| m.object.is_some()) {
            return Err(ZeroRegError::Generation(format!(
                "no object is visible from the {} views",
                side.name
            )));
        }
        Ok(SideOutput {
            bundle,
            masks: masks_gt,
            keys: observed,
        })
    }
}

fn place_objects(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<(Vec<PlacedObject>, Vec<ShapeModel>, Vec<usize>)> {
    let mut categories: Vec<usize> = (0..VOCABULARY.len()).collect();
    categories.shuffle(rng);
    let distinct = spec.object_count - spec.duplicates_per_category + 1;
    let unused = categories[distinct..].to_vec();

    let mut shapes = Vec::new();
    let mut placed: Vec<PlacedObject> = Vec::new();
    for o in 0..spec.object_count {
        // Duplicates reuse the first object's shape and descriptor bases.
        let (category, shape) = if o < spec.duplicates_per_category {
            if o == 0 {
                let kind = [Primitive::Box, Primitive::Sphere, Primitive::Cluster][rng.random_range(0..3)];
                shapes.push(build_shape(kind, spec.points_per_object, rng));
            }
            (categories[0], 0)
        } else {
            let kind = [Primitive::Box, Primitive::Sphere, Primitive::Cluster][rng.random_range(0..3)];
            shapes.push(build_shape(kind, spec.points_per_object, rng));
            (categories[o - spec.duplicates_per_category + 1], shapes.len() - 1)
        };
        let radius = shapes[shape].radius;
        let mut spot = None;
        for _ in 0..2000 {
            let xy = Vector3::new(
                rng.random_range(-ROOM_HALF_EXTENT..ROOM_HALF_EXTENT),
                rng.random_range(-ROOM_HALF_EXTENT..ROOM_HALF_EXTENT),
                0.0,
            );
            let clear = placed.iter().all(|p| {
                let d = (p.offset.xy() - xy.xy()).norm();
                d >= shapes[p.shape].radius + radius + 0.1
            });
            if clear {
                spot = Some(xy);
                break;
            }
        }
        let xy = spot.ok_or_else(|| ZeroRegError::Generation(format!("cannot place object {o} without overlap")))?;
        let yaw = rng.random_range(0.0..std::f64::consts::TAU);
        placed.push(PlacedObject {
            category,
            shape,
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            offset: Vector3::new(xy.x, xy.y, shapes[shape].lift),
        });
    }
    Ok((placed, shapes, unused))
}

/// Noise-free descriptors of every object's surface points. Each instance, duplicates
/// included, arranges its own texture: points draw atoms from a per-scene codebook.
fn surface_descriptors(spec: &SceneSpec, shapes: &[ShapeModel], placed: &[PlacedObject]) -> Vec<Vec<Vec<f64>>> {
    let mut rng = rng_for(spec.seed, 5);
    let codebook: Vec<Vec<f64>> = (0..spec.descriptor_codebook)
        .map(|_| unit_vector(&mut rng, spec.descriptor_dim))
        .collect();
    placed
        .iter()
        .map(|p| {
            (0..shapes[p.shape].points.len())
                .map(|_| match codebook.len() {
                    0 => unit_vector(&mut rng, spec.descriptor_dim),
                    k => codebook[rng.random_range(0..k)].clone(),
                })
                .collect()
        })
        .collect()
}

/// Generates a source/target bundle pair with ground truth. Deterministic per `spec`.
pub fn generate_pair(spec: &SceneSpec) -> Result<(SceneBundle, SceneBundle, GroundTruth)> {
    spec.validate()?;
    let mut geo_rng = rng_for(spec.seed, 0);
    let (placed, shapes, unused) = place_objects(spec, &mut geo_rng)?;

    let n = spec.object_count;
    let shared = ((spec.overlap_ratio * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut geo_rng);
    let (shared_ids, rest) = order.split_at(shared);
    let (src_only, tgt_only) = rest.split_at(rest.len() / 2);
    let mut source_objects: Vec<usize> = shared_ids.iter().chain(src_only).copied().collect();
    let mut target_objects: Vec<usize> = shared_ids.iter().chain(tgt_only).copied().collect();
    source_objects.sort_unstable();
    target_objects.sort_unstable();

    let transform = RigidTransform::new(
        random_rotation(&mut geo_rng),
        Vector3::new(
            geo_rng.random_range(-1.0..1.0),
            geo_rng.random_range(-1.0..1.0),
            geo_rng.random_range(-1.0..1.0),
        ),
    );
    let base_azimuth = geo_rng.random_range(0.0..360.0);

    let world = World {
        spec,
        descriptors: surface_descriptors(spec, &shapes, &placed),
        placed,
        shapes,
        prototypes: category_prototypes(spec.semantic_dim),
        unused_categories: unused,
    };
    let source = world.render_side(&Side {
        name: "source",
        objects: &source_objects,
        transform: RigidTransform::identity(),
        azimuth: base_azimuth,
        stream: 0,
    })?;
    let target = world.render_side(&Side {
        name: "target",
        objects: &target_objects,
        transform,
        azimuth: base_azimuth + TARGET_AZIMUTH_OFFSET_DEG,
        stream: 1,
    })?;

    let mut shared_sorted = shared_ids.to_vec();
    shared_sorted.sort_unstable();
    let mut point_pairs = Vec::new();
    let mut by_key: std::collections::HashMap<PointKey, Vec<usize>> = std::collections::HashMap::new();
    for (j, key) in target.keys.iter().enumerate() {
        by_key.entry(*key).or_default().push(j);
    }
    for (i, key) in source.keys.iter().enumerate() {
        if let Some(js) = by_key.get(key) {
            point_pairs.extend(js.iter().map(|&j| (i, j)));
        }
    }
    let overlap_points = shared_sorted
        .iter()
        .flat_map(|&o| world.placed[o].world(&world.shapes[world.placed[o].shape]).0)
        .collect();
    let gt = GroundTruth {
        transform,
        object_pairs: shared_sorted.iter().map(|&o| (o, o)).collect(),
        point_pairs,
        overlap_points,
        object_labels: world
            .placed
            .iter()
            .map(|p| VOCABULARY[p.category].to_string())
            .collect(),
        source_masks: source.masks,
        target_masks: target.masks,
    };
    Ok((source.bundle, target.bundle, gt))
}

// ---------------------------------------------------------------------------
// Suites

/// One seeded spec per pair: 3–8 objects, 1–3 duplicates, overlap 0.4–1.0.
pub fn default_suite(pairs: usize, seed: u64) -> Vec<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .map(|i| {
            let object_count = rng.random_range(3..=8usize);
            SceneSpec {
                object_count,
                duplicates_per_category: rng.random_range(1..=3usize.min(object_count)),
                overlap_ratio: rng.random_range(0.4..=1.0),
                seed: seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                ..SceneSpec::default()
            }
        })
        .collect()
}

/// Every scene holds three same-category instances among 4–6 objects.
pub fn duplicate_heavy_suite(pairs: usize, seed: u64) -> Vec<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd0b1e);
    (0..pairs)
        .map(|i| SceneSpec {
            object_count: rng.random_range(4..=6usize),
            duplicates_per_category: 3,
            overlap_ratio: rng.random_range(0.6..=1.0),
            seed: seed.wrapping_mul(1_000_003).wrapping_add(i as u64) ^ 0xd0b1e,
            ..SceneSpec::default()
        })
        .collect()
}

pub const GROUND_TRUTH_FILE: &str = "gt.json";

/// Writes `source/`, `target/` and `gt.json` under `directory`.
pub fn write_pair(directory: &Path, source: &SceneBundle, target: &SceneBundle, gt: &GroundTruth) -> Result<()> {
    write_bundle(source, &directory.join("source"))?;
    write_bundle(target, &directory.join("target"))?;
    let path = directory.join(GROUND_TRUTH_FILE);
    let json = serde_json::to_string_pretty(gt).map_err(|e| ZeroRegError::format(&path, e.to_string()))?;
    fs::write(&path, json).map_err(|source| ZeroRegError::Write { path, source })
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let text = fs::read_to_string(path).map_err(|e| ZeroRegError::format(path, e.to_string()))?;
    let gt: GroundTruth = serde_json::from_str(&text).map_err(|e| ZeroRegError::format(path, e.to_string()))?;
    gt.transform.validate()?;
    Ok(gt)
}

pub fn read_pair(directory: &Path) -> Result<(SceneBundle, SceneBundle, GroundTruth)> {
    let source = read_bundle(&directory.join("source"))?;
    let target = read_bundle(&directory.join("target"))?;
    let gt = read_ground_truth(&directory.join(GROUND_TRUTH_FILE))?;
    Ok((source, target, gt))
}
