//! Lifting 2D masks and features into 3D.
//!
//! Masks are back-projected through their depth frames, grouped across views by 3D
//! overlap, and objects seen in fewer than two views are discarded. Each surviving
//! group becomes one [`ObjectRegion`] carrying the averaged semantic feature of its
//! members. Keypoint descriptors are back-projected too, and observations of the same
//! surface point from different views are merged.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::{DVector, Point3};
use serde::{Deserialize, Serialize};

use crate::bundle::{DepthFrame, SceneBundle};
use crate::error::{Result, ZeroRegError};
use crate::spatial::VoxelGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    /// Minimum fraction of the smaller mask's points lying near the other mask.
    pub overlap_threshold: f64,
    /// Neighborhood radius used by the overlap test (meters).
    pub voxel_size: f64,
    /// Observations from different views closer than this are merged (meters).
    pub merge_radius: f64,
    /// Keep objects observed in a single view.
    pub single_view_mode: bool,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            overlap_threshold: 0.3,
            voxel_size: 0.05,
            merge_radius: 0.02,
            single_view_mode: false,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return Err(ZeroRegError::Config("overlap_threshold must be in (0, 1]".into()));
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(ZeroRegError::Config("voxel_size must be > 0".into()));
        }
        if !(self.merge_radius > 0.0 && self.merge_radius.is_finite()) {
            return Err(ZeroRegError::Config("merge_radius must be > 0".into()));
        }
        Ok(())
    }
}

/// Result of back-projecting a list of pixels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BackProjection {
    pub points: Vec<Point3<f64>>,
    /// Input index of each entry in `points`.
    pub kept: Vec<usize>,
    /// Input indices skipped for invalid depth or out-of-image coordinates.
    pub dropped: Vec<usize>,
}

/// Back-projects `(u, v)` pixel coordinates to world points. Depth is read at the
/// nearest pixel; pixels with zero depth are skipped and reported in `dropped`.
pub fn back_project(frame: &DepthFrame, pixels: &[(f64, f64)]) -> BackProjection {
    let intr = &frame.intrinsics;
    let mut out = BackProjection::default();
    for (i, &(u, v)) in pixels.iter().enumerate() {
        let depth = intr
            .pixel_index(u, v)
            .map(|(col, row)| frame.depth_at(col, row))
            .filter(|d| *d > 0.0);
        match depth {
            Some(z) => {
                let cam = intr.unproject(u, v, f64::from(z));
                out.points.push(frame.pose.camera_to_world(&cam));
                out.kept.push(i);
            }
            None => out.dropped.push(i),
        }
    }
    out
}

/// Arithmetic mean of equal-length vectors, renormalized to unit length.
pub fn average_features(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| ZeroRegError::EmptyInput("no feature vectors to average".into()))?;
    let dim = first.len();
    let mut sum = DVector::<f64>::zeros(dim);
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(ZeroRegError::Shape(format!(
                "feature {i} has dimension {}, expected {dim}",
                v.len()
            )));
        }
        let v = DVector::from_column_slice(v);
        if !(v.norm() > 0.0) {
            return Err(ZeroRegError::ZeroVector(format!("feature {i}")));
        }
        sum += v;
    }
    let mean = sum / vectors.len() as f64;
    let norm = mean.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(ZeroRegError::ZeroVector("mean of features".into()));
    }
    Ok((mean / norm).iter().copied().collect())
}

/// Masks, identified by `(view_id, mask_id)`, that observe one physical object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MaskGroup {
    pub category_label: String,
    pub members: Vec<(u32, u32)>,
}

impl MaskGroup {
    pub fn view_count(&self) -> usize {
        self.members.iter().map(|m| m.0).collect::<BTreeSet<_>>().len()
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

/// Fraction of the smaller point set lying within `radius` of the larger one.
pub fn overlap_ratio(a: &[Point3<f64>], b: &[Point3<f64>], radius: f64) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if small.is_empty() {
        return 0.0;
    }
    let grid = VoxelGrid::from_points(radius, large.iter().copied());
    let hits = small.iter().filter(|p| grid.has_neighbor(p, radius)).count();
    hits as f64 / small.len() as f64
}

fn mask_points(bundle: &SceneBundle) -> Vec<Vec<Point3<f64>>> {
    bundle
        .masks
        .iter()
        .map(|mask| match bundle.frame(mask.view_id) {
            Some(frame) => {
                let pixels: Vec<_> = mask.pixels().map(|(c, r)| (c as f64, r as f64)).collect();
                back_project(frame, &pixels).points
            }
            None => Vec::new(),
        })
        .collect()
}

/// Groups same-label masks from different views whose back-projections overlap by at
/// least `config.overlap_threshold`. Groups spanning fewer than two views are dropped
/// unless single-view mode is on.
pub fn consistent_object_tracks(bundle: &SceneBundle, config: &ProjectionConfig) -> Vec<MaskGroup> {
    let clouds = mask_points(bundle);
    let masks = &bundle.masks;
    let mut uf = UnionFind::new(masks.len());
    for a in 0..masks.len() {
        for b in a + 1..masks.len() {
            if masks[a].view_id == masks[b].view_id || masks[a].label() != masks[b].label() {
                continue;
            }
            if clouds[a].is_empty() || clouds[b].is_empty() {
                continue;
            }
            if overlap_ratio(&clouds[a], &clouds[b], config.voxel_size) >= config.overlap_threshold {
                uf.union(a, b);
            }
        }
    }

    let mut groups: Vec<(usize, MaskGroup)> = Vec::new();
    for i in 0..masks.len() {
        if clouds[i].is_empty() {
            continue;
        }
        let root = uf.find(i);
        let member = (masks[i].view_id, masks[i].mask_id);
        match groups.iter_mut().find(|(r, _)| *r == root) {
            Some((_, g)) => g.members.push(member),
            None => groups.push((
                root,
                MaskGroup {
                    category_label: masks[i].label().to_string(),
                    members: vec![member],
                },
            )),
        }
    }
    groups
        .into_iter()
        .map(|(_, g)| g)
        .filter(|g| config.single_view_mode || g.view_count() >= 2)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRegion {
    pub point_indices: Vec<usize>,
    pub category_label: String,
    /// Unified unit-norm semantic feature.
    pub semantic: Vec<f64>,
    pub source_masks: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedPointCloud {
    pub objects: Vec<ObjectRegion>,
    pub all_points: Vec<Point3<f64>>,
}

impl MaskedPointCloud {
    pub fn object_points(&self, object: usize) -> Vec<Point3<f64>> {
        self.objects[object]
            .point_indices
            .iter()
            .map(|&i| self.all_points[i])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointDescriptorCloud {
    pub points: Vec<Point3<f64>>,
    /// Row-major `L × dim`, unit-norm rows.
    pub descriptors: Vec<f64>,
    pub dim: usize,
    pub object_index: Vec<Option<usize>>,
}

impl PointDescriptorCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f64] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }

    /// Indices of descriptor points owned by `object`.
    pub fn indices_of(&self, object: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.object_index[i] == Some(object))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ProjectionDiagnostics {
    pub dropped_pixels: usize,
    pub merged_points: usize,
    pub merged_descriptors: usize,
    pub discarded_masks: usize,
    pub groups: Vec<MaskGroup>,
}

impl ProjectionDiagnostics {
    /// Plain-text report: counters followed by the mask group table.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dropped_pixels {}", self.dropped_pixels);
        let _ = writeln!(out, "merged_points {}", self.merged_points);
        let _ = writeln!(out, "merged_descriptors {}", self.merged_descriptors);
        let _ = writeln!(out, "discarded_masks {}", self.discarded_masks);
        let _ = writeln!(out, "group\tlabel\tviews\tmasks");
        for (i, g) in self.groups.iter().enumerate() {
            let members: Vec<String> = g.members.iter().map(|(v, m)| format!("{v}:{m}")).collect();
            let _ = writeln!(
                out,
                "{i}\t{}\t{}\t{}",
                g.category_label,
                g.view_count(),
                members.join(",")
            );
        }
        out
    }
}

/// Accumulates observations, merging each into the nearest cluster within `radius`
/// that has no observation from the same view yet.
struct CrossViewMerger {
    radius: f64,
    grid: VoxelGrid,
    sums: Vec<nalgebra::Vector3<f64>>,
    views: Vec<Vec<u32>>,
    merged: usize,
}

impl CrossViewMerger {
    fn new(radius: f64) -> Self {
        Self {
            radius,
            grid: VoxelGrid::new(radius),
            sums: Vec::new(),
            views: Vec::new(),
            merged: 0,
        }
    }

    /// Returns the cluster index the observation landed in and whether it was new.
    fn add(&mut self, p: Point3<f64>, view: u32) -> (usize, bool) {
        let target = self
            .grid
            .within(&p, self.radius)
            .into_iter()
            .map(|(i, _)| i)
            .find(|&i| !self.views[i].contains(&view));
        match target {
            Some(i) => {
                self.sums[i] += p.coords;
                self.views[i].push(view);
                self.merged += 1;
                (i, false)
            }
            None => {
                let i = self.grid.insert(p);
                self.sums.push(p.coords);
                self.views.push(vec![view]);
                (i, true)
            }
        }
    }

    fn centers(&self) -> Vec<Point3<f64>> {
        self.sums
            .iter()
            .zip(&self.views)
            .map(|(s, v)| Point3::from(s / v.len() as f64))
            .collect()
    }
}

/// Builds the masked point cloud and the keypoint descriptor cloud of one bundle.
pub fn build_masked_cloud(
    bundle: &SceneBundle,
    config: &ProjectionConfig,
) -> Result<(MaskedPointCloud, PointDescriptorCloud, ProjectionDiagnostics)> {
    config.validate()?;
    let groups = consistent_object_tracks(bundle, config);
    let grouped: usize = groups.iter().map(|g| g.members.len()).sum();
    let mut diagnostics = ProjectionDiagnostics {
        discarded_masks: bundle.masks.len() - grouped,
        ..Default::default()
    };
    if groups.is_empty() {
        return Err(ZeroRegError::EmptyScene);
    }

    // Per-view pixel ownership; earlier groups claim contested pixels.
    let mut ownership: Vec<Vec<Option<usize>>> = bundle
        .frames
        .iter()
        .map(|f| vec![None; f.intrinsics.width * f.intrinsics.height])
        .collect();
    for (g, group) in groups.iter().enumerate() {
        for &(view, mask_id) in &group.members {
            let frame_idx = bundle.frames.iter().position(|f| f.view_id == view);
            let mask = bundle.masks.iter().find(|m| m.view_id == view && m.mask_id == mask_id);
            if let (Some(fi), Some(mask)) = (frame_idx, mask) {
                for (slot, set) in ownership[fi].iter_mut().zip(&mask.mask) {
                    if *set && slot.is_none() {
                        *slot = Some(g);
                    }
                }
            }
        }
    }

    // Full cloud from every valid depth pixel, duplicates across views merged.
    let mut merger = CrossViewMerger::new(config.merge_radius);
    let mut point_owner: Vec<Option<usize>> = Vec::new();
    for (fi, frame) in bundle.frames.iter().enumerate() {
        let w = frame.intrinsics.width;
        for (idx, &d) in frame.depth.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            let (u, v) = ((idx % w) as f64, (idx / w) as f64);
            let p = frame
                .pose
                .camera_to_world(&frame.intrinsics.unproject(u, v, f64::from(d)));
            let (cluster, new) = merger.add(p, frame.view_id);
            let owner = ownership[fi][idx];
            if new {
                point_owner.push(owner);
            } else if point_owner[cluster].is_none() {
                point_owner[cluster] = owner;
            }
        }
    }
    diagnostics.merged_points = merger.merged;
    let all_points = merger.centers();
    if all_points.is_empty() {
        return Err(ZeroRegError::EmptyInput("bundle has no valid depth".into()));
    }

    let mut objects = Vec::new();
    let mut region_of_group = vec![None; groups.len()];
    for (g, group) in groups.iter().enumerate() {
        let point_indices: Vec<usize> = (0..all_points.len()).filter(|&i| point_owner[i] == Some(g)).collect();
        if point_indices.is_empty() {
            continue;
        }
        let features: Vec<Vec<f64>> = group
            .members
            .iter()
            .filter_map(|&(v, m)| bundle.feature_for(v, m))
            .map(|f| f.vector.iter().map(|x| f64::from(*x)).collect())
            .collect();
        if features.is_empty() {
            return Err(ZeroRegError::EmptyInput(format!(
                "no semantic feature for any mask of group {g} ({})",
                group.category_label
            )));
        }
        region_of_group[g] = Some(objects.len());
        objects.push(ObjectRegion {
            point_indices,
            category_label: group.category_label.clone(),
            semantic: average_features(&features)?,
            source_masks: group.members.clone(),
        });
    }
    if objects.is_empty() {
        return Err(ZeroRegError::EmptyScene);
    }

    // Keypoint descriptors.
    let dim = bundle.geometric_dim();
    let mut merger = CrossViewMerger::new(config.merge_radius);
    let mut desc_sums: Vec<Vec<f64>> = Vec::new();
    let mut desc_owner: Vec<Option<usize>> = Vec::new();
    for set in &bundle.geometric {
        let Some(fi) = bundle.frames.iter().position(|f| f.view_id == set.view_id) else {
            continue;
        };
        let frame = &bundle.frames[fi];
        let pixels: Vec<(f64, f64)> = set.pixels.iter().map(|[u, v]| (f64::from(*u), f64::from(*v))).collect();
        let projected = back_project(frame, &pixels);
        diagnostics.dropped_pixels += projected.dropped.len();
        for (p, &src) in projected.points.iter().zip(&projected.kept) {
            let (u, v) = pixels[src];
            let owner = frame
                .intrinsics
                .pixel_index(u, v)
                .and_then(|(c, r)| ownership[fi][r * frame.intrinsics.width + c])
                .and_then(|g| region_of_group[g]);
            let descriptor = set.descriptor(src).iter().map(|x| f64::from(*x));
            let (cluster, new) = merger.add(*p, set.view_id);
            if new {
                desc_sums.push(descriptor.collect());
                desc_owner.push(owner);
            } else {
                for (acc, x) in desc_sums[cluster].iter_mut().zip(descriptor) {
                    *acc += x;
                }
                if desc_owner[cluster].is_none() {
                    desc_owner[cluster] = owner;
                }
            }
        }
    }
    diagnostics.merged_descriptors = merger.merged;
    let mut descriptors = Vec::with_capacity(desc_sums.len() * dim);
    for sum in &desc_sums {
        let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            descriptors.extend(sum.iter().map(|x| x / norm));
        } else {
            // Opposing observations cancelled out; keep a neutral descriptor.
            descriptors.extend(sum.iter().map(|_| 0.0));
        }
    }

    diagnostics.groups = groups;
    Ok((
        MaskedPointCloud { objects, all_points },
        PointDescriptorCloud {
            points: merger.centers(),
            descriptors,
            dim,
            object_index: desc_owner,
        },
        diagnostics,
    ))
}
