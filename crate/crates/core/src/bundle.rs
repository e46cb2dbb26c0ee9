//! Scene bundles: the on-disk interchange format for one side of a registration pair.
//!
//! A bundle directory holds a `manifest.json` plus raw tensor payloads. Tensors are
//! row-major little-endian `f32`, or `u8` for boolean masks; their shapes live only in
//! the manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZeroRegError};

pub const MANIFEST_FILE: &str = "manifest.json";

const ORTHONORMAL_TOL: f64 = 1e-6;
const UNIT_NORM_TOL: f32 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite();
        if !(ok(self.fx) && self.fx > 0.0) {
            return Err(ZeroRegError::validation("intrinsics.fx", "must be finite and > 0"));
        }
        if !(ok(self.fy) && self.fy > 0.0) {
            return Err(ZeroRegError::validation("intrinsics.fy", "must be finite and > 0"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(ZeroRegError::validation("intrinsics.width", "image must be non-empty"));
        }
        if !(ok(self.cx) && self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(ZeroRegError::validation("intrinsics.cx", "must lie in [0, width)"));
        }
        if !(ok(self.cy) && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(ZeroRegError::validation("intrinsics.cy", "must lie in [0, height)"));
        }
        Ok(())
    }

    /// Pixel coordinates and depth of a camera-frame point.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy, p.z)
    }

    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }

    /// Nearest pixel index for a sub-pixel coordinate, if inside the image.
    pub fn pixel_index(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let (col, row) = (u.round(), v.round());
        if col >= 0.0 && row >= 0.0 && (col as usize) < self.width && (row as usize) < self.height {
            Some((col as usize, row as usize))
        } else {
            None
        }
    }
}

/// Camera-to-world rigid pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for CameraPose {
    fn default() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }
}

impl CameraPose {
    pub fn validate(&self) -> Result<()> {
        if !self
            .rotation
            .iter()
            .chain(self.translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(ZeroRegError::validation("pose", "non-finite entry"));
        }
        let gram = self.rotation.transpose() * self.rotation;
        if (gram - Matrix3::identity()).abs().max() > ORTHONORMAL_TOL {
            return Err(ZeroRegError::validation("pose.rotation", "not orthonormal"));
        }
        if (self.rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(ZeroRegError::validation("pose.rotation", "determinant is not +1"));
        }
        Ok(())
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p + self.translation)
    }

    pub fn world_to_camera(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p.coords - self.translation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub view_id: u32,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    /// Row-major `height × width` depths in meters; 0.0 marks an invalid pixel.
    pub depth: Vec<f32>,
}

impl DepthFrame {
    pub fn depth_at(&self, col: usize, row: usize) -> f32 {
        self.depth[row * self.intrinsics.width + col]
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.pose.validate()?;
        let expected = self.intrinsics.width * self.intrinsics.height;
        if self.depth.len() != expected {
            return Err(ZeroRegError::validation(
                format!("frames[{}].depth", self.view_id),
                format!("{} values for a {expected}-pixel image", self.depth.len()),
            ));
        }
        if let Some(bad) = self.depth.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(ZeroRegError::validation(
                format!("frames[{}].depth", self.view_id),
                format!("depth {bad} is not finite and non-negative"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    pub view_id: u32,
    pub mask_id: u32,
    pub category_label: String,
    pub width: usize,
    pub height: usize,
    /// Row-major `height × width`.
    pub mask: Vec<bool>,
}

impl ObjectMask {
    pub fn contains(&self, col: usize, row: usize) -> bool {
        self.mask[row * self.width + col]
    }

    pub fn pixel_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// `(col, row)` of every set pixel, in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| (i % self.width, i / self.width))
    }

    pub fn label(&self) -> &str {
        self.category_label.trim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticFeature {
    pub vector: Vec<f32>,
    /// `(view_id, mask_id)` of the mask this feature describes.
    pub mask_ref: (u32, u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricDescriptorSet {
    pub view_id: u32,
    /// Sub-pixel `(u, v)` keypoint locations.
    pub pixels: Vec<[f32; 2]>,
    /// Row-major `L × dim`, unit-norm rows.
    pub descriptors: Vec<f32>,
    pub dim: usize,
}

impl GeometricDescriptorSet {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub bundle_id: String,
    pub frames: Vec<DepthFrame>,
    pub masks: Vec<ObjectMask>,
    pub semantic_features: Vec<SemanticFeature>,
    pub geometric: Vec<GeometricDescriptorSet>,
    /// Free-form producer notes (model ids, prompt templates); not interpreted.
    pub provenance: BTreeMap<String, String>,
}

impl SceneBundle {
    pub fn frame(&self, view_id: u32) -> Option<&DepthFrame> {
        self.frames.iter().find(|f| f.view_id == view_id)
    }

    pub fn semantic_dim(&self) -> usize {
        self.semantic_features.first().map_or(0, |f| f.vector.len())
    }

    pub fn geometric_dim(&self) -> usize {
        self.geometric.first().map_or(0, |g| g.dim)
    }

    pub fn feature_for(&self, view_id: u32, mask_id: u32) -> Option<&SemanticFeature> {
        self.semantic_features.iter().find(|f| f.mask_ref == (view_id, mask_id))
    }

    /// Checks every invariant of the contained types and all cross references.
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(ZeroRegError::validation("frames", "bundle has no frames"));
        }
        let mut views = BTreeMap::new();
        for frame in &self.frames {
            frame.validate()?;
            if views.insert(frame.view_id, frame).is_some() {
                return Err(ZeroRegError::validation(
                    "frames.view_id",
                    format!("duplicate view {}", frame.view_id),
                ));
            }
        }

        let mut mask_ids = BTreeSet::new();
        for mask in &self.masks {
            let field = format!("masks[{}:{}]", mask.view_id, mask.mask_id);
            let frame = views
                .get(&mask.view_id)
                .ok_or_else(|| ZeroRegError::validation(&field, format!("unknown view {}", mask.view_id)))?;
            if mask.width != frame.intrinsics.width
                || mask.height != frame.intrinsics.height
                || mask.mask.len() != mask.width * mask.height
            {
                return Err(ZeroRegError::validation(field, "mask shape differs from its frame"));
            }
            if mask.pixel_count() == 0 {
                return Err(ZeroRegError::validation(field, "mask has no set pixels"));
            }
            if mask.label().is_empty() {
                return Err(ZeroRegError::validation(
                    format!("{field}.category_label"),
                    "empty category label",
                ));
            }
            if !mask_ids.insert((mask.view_id, mask.mask_id)) {
                return Err(ZeroRegError::validation(field, "duplicate mask id within view"));
            }
        }

        let dim = self.semantic_dim();
        for (i, feature) in self.semantic_features.iter().enumerate() {
            let field = format!("semantic_features[{i}]");
            if !mask_ids.contains(&feature.mask_ref) {
                return Err(ZeroRegError::validation(
                    field,
                    format!("mask_ref {:?} does not resolve", feature.mask_ref),
                ));
            }
            if feature.vector.len() != dim {
                return Err(ZeroRegError::validation(field, "inconsistent semantic dimension"));
            }
            if !feature.vector.iter().all(|v| v.is_finite()) {
                return Err(ZeroRegError::validation(field, "non-finite entry"));
            }
            if norm_f32(&feature.vector) <= 0.0 {
                return Err(ZeroRegError::validation(field, "zero-norm semantic vector"));
            }
        }

        let gdim = self.geometric_dim();
        for set in &self.geometric {
            let field = format!("geometric_sets[{}]", set.view_id);
            let frame = views
                .get(&set.view_id)
                .ok_or_else(|| ZeroRegError::validation(&field, format!("unknown view {}", set.view_id)))?;
            if set.dim != gdim || set.dim == 0 {
                return Err(ZeroRegError::validation(field, "inconsistent descriptor dimension"));
            }
            if set.descriptors.len() != set.pixels.len() * set.dim {
                return Err(ZeroRegError::validation(
                    field,
                    "descriptor count differs from pixel count",
                ));
            }
            let intr = &frame.intrinsics;
            for (i, [u, v]) in set.pixels.iter().enumerate() {
                let inside = u.is_finite() && v.is_finite() && intr.pixel_index(f64::from(*u), f64::from(*v)).is_some();
                if !inside {
                    return Err(ZeroRegError::validation(
                        format!("{field}.pixels[{i}]"),
                        format!("({u}, {v}) outside the image"),
                    ));
                }
            }
            for i in 0..set.len() {
                let d = set.descriptor(i);
                if !d.iter().all(|x| x.is_finite()) || (norm_f32(d) - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(ZeroRegError::validation(
                        format!("{field}.descriptors[{i}]"),
                        "descriptor is not unit-norm",
                    ));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn norm_f32(v: &[f32]) -> f32 {
    v.iter().map(|x| x * x).sum::<f32>().sqrt()
}

// ---------------------------------------------------------------------------
// Manifest schema

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum DType {
    F32,
    U8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    file: String,
    dtype: DType,
    shape: Vec<usize>,
}

impl TensorEntry {
    fn new(name: String, dtype: DType, shape: Vec<usize>) -> Self {
        let ext = match dtype {
            DType::F32 => "f32",
            DType::U8 => "u8",
        };
        Self {
            file: format!("{name}.{ext}"),
            name,
            dtype,
            shape,
        }
    }

    fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseEntry {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameEntry {
    view_id: u32,
    intrinsics: CameraIntrinsics,
    pose: PoseEntry,
    depth: TensorEntry,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskEntry {
    view_id: u32,
    mask_id: u32,
    category_label: String,
    mask: TensorEntry,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SemanticEntry {
    mask_refs: Vec<(u32, u32)>,
    vectors: Option<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometricEntry {
    view_id: u32,
    pixels: TensorEntry,
    descriptors: TensorEntry,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    bundle_id: String,
    semantic_dim: usize,
    geometric_dim: usize,
    frames: Vec<FrameEntry>,
    masks: Vec<MaskEntry>,
    semantic_features: SemanticEntry,
    geometric_sets: Vec<GeometricEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    provenance: BTreeMap<String, String>,
}

fn pose_to_entry(pose: &CameraPose) -> PoseEntry {
    let r = &pose.rotation;
    PoseEntry {
        rotation: [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ],
        translation: [pose.translation.x, pose.translation.y, pose.translation.z],
    }
}

fn pose_from_entry(entry: &PoseEntry) -> CameraPose {
    let r = &entry.rotation;
    CameraPose {
        rotation: Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        ),
        translation: Vector3::from(entry.translation),
    }
}

// ---------------------------------------------------------------------------
// Writing

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| ZeroRegError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn f32_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

/// Writes `bundle` into `directory`, creating it if needed.
pub fn write_bundle(bundle: &SceneBundle, directory: &Path) -> Result<()> {
    fs::create_dir_all(directory).map_err(|source| ZeroRegError::Write {
        path: directory.to_path_buf(),
        source,
    })?;
    let mut payloads: Vec<(TensorEntry, Vec<u8>)> = Vec::new();

    let mut frames = Vec::with_capacity(bundle.frames.len());
    for frame in &bundle.frames {
        let depth = TensorEntry::new(
            format!("depth_v{}", frame.view_id),
            DType::F32,
            vec![frame.intrinsics.height, frame.intrinsics.width],
        );
        payloads.push((depth.clone(), f32_bytes(frame.depth.iter().copied())));
        frames.push(FrameEntry {
            view_id: frame.view_id,
            intrinsics: frame.intrinsics,
            pose: pose_to_entry(&frame.pose),
            depth,
        });
    }

    let mut masks = Vec::with_capacity(bundle.masks.len());
    for mask in &bundle.masks {
        let tensor = TensorEntry::new(
            format!("mask_v{}_m{}", mask.view_id, mask.mask_id),
            DType::U8,
            vec![mask.height, mask.width],
        );
        payloads.push((tensor.clone(), mask.mask.iter().map(|b| u8::from(*b)).collect()));
        masks.push(MaskEntry {
            view_id: mask.view_id,
            mask_id: mask.mask_id,
            category_label: mask.category_label.clone(),
            mask: tensor,
        });
    }

    let semantic_dim = bundle.semantic_dim();
    let vectors = if bundle.semantic_features.is_empty() {
        None
    } else {
        let tensor = TensorEntry::new(
            "semantic".to_string(),
            DType::F32,
            vec![bundle.semantic_features.len(), semantic_dim],
        );
        let bytes = f32_bytes(bundle.semantic_features.iter().flat_map(|f| f.vector.iter().copied()));
        payloads.push((tensor.clone(), bytes));
        Some(tensor)
    };
    let semantic_features = SemanticEntry {
        mask_refs: bundle.semantic_features.iter().map(|f| f.mask_ref).collect(),
        vectors,
    };

    let mut geometric_sets = Vec::with_capacity(bundle.geometric.len());
    for set in &bundle.geometric {
        let pixels = TensorEntry::new(format!("keypoints_v{}", set.view_id), DType::F32, vec![set.len(), 2]);
        let descriptors = TensorEntry::new(
            format!("descriptors_v{}", set.view_id),
            DType::F32,
            vec![set.len(), set.dim],
        );
        payloads.push((pixels.clone(), f32_bytes(set.pixels.iter().flatten().copied())));
        payloads.push((descriptors.clone(), f32_bytes(set.descriptors.iter().copied())));
        geometric_sets.push(GeometricEntry {
            view_id: set.view_id,
            pixels,
            descriptors,
        });
    }

    let manifest = Manifest {
        bundle_id: bundle.bundle_id.clone(),
        semantic_dim,
        geometric_dim: bundle.geometric_dim(),
        frames,
        masks,
        semantic_features,
        geometric_sets,
        provenance: bundle.provenance.clone(),
    };

    for (entry, bytes) in &payloads {
        write_file(&directory.join(&entry.file), bytes)?;
    }
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_file(&directory.join(MANIFEST_FILE), &json)
}

// ---------------------------------------------------------------------------
// Reading

struct TensorReader<'a> {
    directory: &'a Path,
}

impl TensorReader<'_> {
    fn raw(&self, entry: &TensorEntry, dtype: DType, rank: usize) -> Result<(PathBuf, Vec<u8>)> {
        let path = self.directory.join(&entry.file);
        if entry.dtype != dtype {
            return Err(ZeroRegError::format(
                &path,
                format!(
                    "tensor `{}` has dtype {:?}, expected {dtype:?}",
                    entry.name, entry.dtype
                ),
            ));
        }
        if entry.shape.len() != rank {
            return Err(ZeroRegError::format(
                &path,
                format!(
                    "tensor `{}` has rank {}, expected {rank}",
                    entry.name,
                    entry.shape.len()
                ),
            ));
        }
        if entry.file.contains(['/', '\\']) || entry.file == ".." {
            return Err(ZeroRegError::format(
                &path,
                "tensor file must be a sibling of the manifest",
            ));
        }
        let bytes = fs::read(&path).map_err(|e| ZeroRegError::format(&path, format!("cannot read tensor: {e}")))?;
        let width = match dtype {
            DType::F32 => 4,
            DType::U8 => 1,
        };
        if bytes.len() != entry.numel() * width {
            return Err(ZeroRegError::format(
                &path,
                format!(
                    "tensor `{}` declares shape {:?} ({} elements) but file holds {} bytes",
                    entry.name,
                    entry.shape,
                    entry.numel(),
                    bytes.len()
                ),
            ));
        }
        Ok((path, bytes))
    }

    fn f32s(&self, entry: &TensorEntry, rank: usize) -> Result<Vec<f32>> {
        let (_, bytes) = self.raw(entry, DType::F32, rank)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn bools(&self, entry: &TensorEntry, rank: usize) -> Result<Vec<bool>> {
        let (path, bytes) = self.raw(entry, DType::U8, rank)?;
        bytes
            .into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(ZeroRegError::format(&path, format!("mask byte {other} is not 0/1"))),
            })
            .collect()
    }
}

/// Reads and fully validates a bundle directory.
pub fn read_bundle(directory: &Path) -> Result<SceneBundle> {
    let manifest_path = directory.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| ZeroRegError::format(&manifest_path, format!("cannot read manifest: {e}")))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| ZeroRegError::format(&manifest_path, format!("invalid manifest: {e}")))?;
    let reader = TensorReader { directory };

    let mut frames = Vec::with_capacity(manifest.frames.len());
    for entry in &manifest.frames {
        let (h, w) = (entry.intrinsics.height, entry.intrinsics.width);
        if entry.depth.shape != [h, w] {
            return Err(ZeroRegError::format(
                directory.join(&entry.depth.file),
                format!("depth shape {:?} does not match {h}x{w} intrinsics", entry.depth.shape),
            ));
        }
        frames.push(DepthFrame {
            view_id: entry.view_id,
            intrinsics: entry.intrinsics,
            pose: pose_from_entry(&entry.pose),
            depth: reader.f32s(&entry.depth, 2)?,
        });
    }

    let mut masks = Vec::with_capacity(manifest.masks.len());
    for entry in &manifest.masks {
        let mask = reader.bools(&entry.mask, 2)?;
        masks.push(ObjectMask {
            view_id: entry.view_id,
            mask_id: entry.mask_id,
            category_label: entry.category_label.clone(),
            height: entry.mask.shape[0],
            width: entry.mask.shape[1],
            mask,
        });
    }

    let refs = &manifest.semantic_features.mask_refs;
    let semantic_features = match &manifest.semantic_features.vectors {
        None if refs.is_empty() => Vec::new(),
        None => {
            return Err(ZeroRegError::format(
                &manifest_path,
                "semantic refs without a vector tensor",
            ))
        }
        Some(tensor) => {
            if tensor.shape != [refs.len(), manifest.semantic_dim] {
                return Err(ZeroRegError::format(
                    directory.join(&tensor.file),
                    format!(
                        "semantic tensor shape {:?} does not match {} refs of dim {}",
                        tensor.shape,
                        refs.len(),
                        manifest.semantic_dim
                    ),
                ));
            }
            let values = reader.f32s(tensor, 2)?;
            let dim = manifest.semantic_dim.max(1);
            refs.iter()
                .zip(values.chunks(dim))
                .map(|(r, v)| SemanticFeature {
                    vector: if manifest.semantic_dim == 0 {
                        Vec::new()
                    } else {
                        v.to_vec()
                    },
                    mask_ref: *r,
                })
                .collect()
        }
    };

    let mut geometric = Vec::with_capacity(manifest.geometric_sets.len());
    for entry in &manifest.geometric_sets {
        let count = entry.pixels.shape.first().copied().unwrap_or(0);
        if entry.pixels.shape != [count, 2] || entry.descriptors.shape != [count, manifest.geometric_dim] {
            return Err(ZeroRegError::format(
                directory.join(&entry.descriptors.file),
                format!(
                    "geometric set for view {} has shapes {:?}/{:?}, expected [L,2]/[L,{}]",
                    entry.view_id, entry.pixels.shape, entry.descriptors.shape, manifest.geometric_dim
                ),
            ));
        }
        let flat = reader.f32s(&entry.pixels, 2)?;
        geometric.push(GeometricDescriptorSet {
            view_id: entry.view_id,
            pixels: flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
            descriptors: reader.f32s(&entry.descriptors, 2)?,
            dim: manifest.geometric_dim,
        });
    }

    let bundle = SceneBundle {
        bundle_id: manifest.bundle_id,
        frames,
        masks,
        semantic_features,
        geometric,
        provenance: manifest.provenance,
    };
    if bundle.semantic_dim() != manifest.semantic_dim && !bundle.semantic_features.is_empty() {
        return Err(ZeroRegError::format(
            &manifest_path,
            "semantic_dim disagrees with tensor",
        ));
    }
    bundle.validate()?;
    Ok(bundle)
}
