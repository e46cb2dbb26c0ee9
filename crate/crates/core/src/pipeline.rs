//! End-to-end registration of a bundle pair, plus suite evaluation.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::SceneBundle;
use crate::error::{Result, ZeroRegError};
use crate::metrics::{PairEvaluation, SuiteSummary};
use crate::object_matching::{
    filter_by_category, hard_constrain, match_by_similarity, solve_qap, ObjectCorrespondences, QapConfig,
};
use crate::point_matching::{match_points, PointCorrespondences, PointMatchConfig};
use crate::projection::{build_masked_cloud, MaskedPointCloud, ProjectionConfig, ProjectionDiagnostics};
use crate::registration::{ransac_register, RansacConfig, RigidTransform};
use crate::scene_graph::{build_scene_graph, cross_similarity};
use crate::synthgen::{generate_pair, read_pair, GroundTruth, SceneSpec};

/// RANSAC settings; the seed comes from [`PipelineConfig::seed`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacParams {
    pub max_iterations: usize,
    pub inlier_threshold: f64,
    pub confidence: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        let d = RansacConfig::default();
        Self {
            max_iterations: d.max_iterations,
            inlier_threshold: d.inlier_threshold,
            confidence: d.confidence,
        }
    }
}

/// Stage switches. Every ablation is one flag away from the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    /// Match objects first and points only inside matched objects.
    pub use_object_level: bool,
    /// Graph matching over the scene graphs; otherwise argmax of semantic similarity.
    pub use_scene_graph: bool,
    /// With `false`, every semantic vector is replaced by a constant.
    pub use_semantics: bool,
    /// Drop object pairs whose category labels differ.
    pub use_category_filter: bool,
    /// Keep objects seen in a single view.
    pub single_view_mode: bool,
    pub directed_affinity: bool,
    /// Forbid label-mismatched pairs inside the graph matching itself.
    pub category_hard_constraint: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            use_object_level: true,
            use_scene_graph: true,
            use_semantics: true,
            use_category_filter: true,
            single_view_mode: false,
            directed_affinity: false,
            category_hard_constraint: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionParams {
    pub overlap_threshold: f64,
    pub voxel_size: f64,
    pub merge_radius: f64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        let d = ProjectionConfig::default();
        Self {
            overlap_threshold: d.overlap_threshold,
            voxel_size: d.voxel_size,
            merge_radius: d.merge_radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k_neighbors: usize,
    pub sinkhorn_iterations: usize,
    pub sinkhorn_temperature: f64,
    pub gamma: f64,
    pub ransac: RansacParams,
    pub projection: ProjectionParams,
    pub qap: QapConfig,
    pub toggles: Toggles,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let pm = PointMatchConfig::default();
        Self {
            k_neighbors: 3,
            sinkhorn_iterations: pm.sinkhorn_iterations,
            sinkhorn_temperature: pm.sinkhorn_temperature,
            gamma: pm.gamma,
            ransac: RansacParams::default(),
            projection: ProjectionParams::default(),
            qap: QapConfig::default(),
            toggles: Toggles::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ZeroRegError::Config(msg.to_string()));
        if self.k_neighbors == 0 {
            return bad("k_neighbors must be >= 1");
        }
        if self.sinkhorn_iterations == 0 {
            return bad("sinkhorn_iterations must be >= 1");
        }
        if !(self.sinkhorn_temperature.is_finite() && self.sinkhorn_temperature > 0.0) {
            return bad("sinkhorn_temperature must be > 0");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.ransac.max_iterations == 0 {
            return bad("ransac.max_iterations must be >= 1");
        }
        if !(self.ransac.inlier_threshold.is_finite() && self.ransac.inlier_threshold > 0.0) {
            return bad("ransac.inlier_threshold must be > 0");
        }
        if !(self.ransac.confidence > 0.0 && self.ransac.confidence < 1.0) {
            return bad("ransac.confidence must lie in (0, 1)");
        }
        if self.qap.max_iters == 0 {
            return bad("qap.max_iters must be >= 1");
        }
        self.projection_config().validate()
    }

    pub fn projection_config(&self) -> ProjectionConfig {
        ProjectionConfig {
            overlap_threshold: self.projection.overlap_threshold,
            voxel_size: self.projection.voxel_size,
            merge_radius: self.projection.merge_radius,
            single_view_mode: self.toggles.single_view_mode,
        }
    }

    pub fn point_match_config(&self) -> PointMatchConfig {
        PointMatchConfig {
            sinkhorn_iterations: self.sinkhorn_iterations,
            sinkhorn_temperature: self.sinkhorn_temperature,
            gamma: self.gamma,
            global_fallback: true,
        }
    }

    pub fn ransac_config(&self) -> RansacConfig {
        RansacConfig {
            max_iterations: self.ransac.max_iterations,
            inlier_threshold: self.ransac.inlier_threshold,
            confidence: self.ransac.confidence,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectPairReport {
    pub source_object: usize,
    pub target_object: usize,
    pub source_label: String,
    pub target_label: String,
    /// `(view_id, mask_id)` of the masks behind each object.
    pub source_masks: Vec<(u32, u32)>,
    pub target_masks: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub source_objects: usize,
    pub target_objects: usize,
    pub source_projection: ProjectionDiagnostics,
    pub target_projection: ProjectionDiagnostics,
    /// Object pairs before the category filter.
    pub raw_object_pairs: usize,
    pub object_pairs: usize,
    pub correspondences: usize,
    pub inliers: usize,
    pub ransac_iterations: usize,
    /// True when points were matched globally because no object pair produced matches.
    pub global_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegistrationReport {
    pub transform: RigidTransform,
    pub object_pairs: Vec<ObjectPairReport>,
    pub point_pairs: PointCorrespondences,
    /// Indices into `point_pairs` consistent with `transform`.
    pub inliers: Vec<usize>,
    /// Milliseconds per stage, in execution order.
    pub stage_timings: Vec<(String, f64)>,
    pub diagnostics: Diagnostics,
}

fn stage<T>(name: &'static str, timings: &mut Vec<(String, f64)>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| ZeroRegError::Stage {
        stage: name,
        source: Box::new(e),
    });
    timings.push((name.to_string(), start.elapsed().as_secs_f64() * 1e3));
    out
}

fn semantics_matrix(cloud: &MaskedPointCloud) -> DMatrix<f64> {
    let d = cloud.objects[0].semantic.len();
    DMatrix::from_fn(cloud.objects.len(), d, |j, c| cloud.objects[j].semantic[c])
}

/// Registers `source` onto `target`: the returned transform maps source-frame points
/// into the target frame. Errors are wrapped in [`ZeroRegError::Stage`].
pub fn register_pair(
    source: &SceneBundle,
    target: &SceneBundle,
    config: &PipelineConfig,
) -> Result<RegistrationReport> {
    let mut timings = Vec::new();
    let toggles = config.toggles;
    stage("validate", &mut timings, || {
        config.validate()?;
        source.validate()?;
        target.validate()?;
        if source.geometric_dim() != target.geometric_dim() {
            return Err(ZeroRegError::Shape(format!(
                "descriptor dimensions differ: {} vs {}",
                source.geometric_dim(),
                target.geometric_dim()
            )));
        }
        Ok(())
    })?;

    let proj = config.projection_config();
    let ((cloud_p, desc_p, diag_p), (cloud_q, desc_q, diag_q)) = stage("projection", &mut timings, || {
        Ok((build_masked_cloud(source, &proj)?, build_masked_cloud(target, &proj)?))
    })?;
    let mut diagnostics = Diagnostics {
        source_objects: cloud_p.objects.len(),
        target_objects: cloud_q.objects.len(),
        source_projection: diag_p,
        target_projection: diag_q,
        ..Default::default()
    };

    let mut objects = ObjectCorrespondences { pairs: Vec::new() };
    if toggles.use_object_level {
        let labels_p: Vec<&str> = cloud_p.objects.iter().map(|o| o.category_label.as_str()).collect();
        let labels_q: Vec<&str> = cloud_q.objects.iter().map(|o| o.category_label.as_str()).collect();
        let dim = cloud_p.objects[0].semantic.len();
        let constant = vec![1.0; dim];
        let over = (!toggles.use_semantics).then_some(constant.as_slice());

        let (graph_p, graph_q) = stage("scene_graph", &mut timings, || {
            Ok((
                build_scene_graph(&cloud_p, config.k_neighbors, toggles.directed_affinity, over)?,
                build_scene_graph(&cloud_q, config.k_neighbors, toggles.directed_affinity, over)?,
            ))
        })?;

        let raw = stage("object_matching", &mut timings, || {
            let (sp, sq) = if toggles.use_semantics {
                (semantics_matrix(&cloud_p), semantics_matrix(&cloud_q))
            } else {
                (graph_p.node_semantics.clone(), graph_q.node_semantics.clone())
            };
            let mut c = cross_similarity(&sp, &sq)?;
            if toggles.category_hard_constraint {
                c = hard_constrain(&c, &labels_p, &labels_q);
            }
            if toggles.use_scene_graph {
                Ok(solve_qap(&graph_p.affinity, &graph_q.affinity, &c, &config.qap)?.pairs)
            } else {
                Ok(match_by_similarity(&c).pairs)
            }
        })?;
        diagnostics.raw_object_pairs = raw.len();
        objects = if toggles.use_category_filter {
            filter_by_category(&raw, &labels_p, &labels_q)
        } else {
            ObjectCorrespondences { pairs: raw }
        };
    }
    diagnostics.object_pairs = objects.len();

    let pm = config.point_match_config();
    let mut corr = stage("point_matching", &mut timings, || {
        match_points(&objects, &desc_p, &desc_q, &pm)
    })?;
    if !objects.is_empty() && corr.len() < 3 {
        // Matched objects produced too little to register; fall back to global matching.
        let none = ObjectCorrespondences { pairs: Vec::new() };
        corr = stage("point_matching_fallback", &mut timings, || {
            match_points(&none, &desc_p, &desc_q, &pm)
        })?;
        diagnostics.global_fallback = true;
    } else if objects.is_empty() {
        diagnostics.global_fallback = true;
    }
    diagnostics.correspondences = corr.len();

    let ransac = stage("registration", &mut timings, || {
        ransac_register(&corr.point_pairs(), &config.ransac_config())
    })?;
    diagnostics.inliers = ransac.inlier_indices.len();
    diagnostics.ransac_iterations = ransac.iterations_run;

    let object_pairs = objects
        .pairs
        .iter()
        .map(|&(j, k)| ObjectPairReport {
            source_object: j,
            target_object: k,
            source_label: cloud_p.objects[j].category_label.clone(),
            target_label: cloud_q.objects[k].category_label.clone(),
            source_masks: cloud_p.objects[j].source_masks.clone(),
            target_masks: cloud_q.objects[k].source_masks.clone(),
        })
        .collect();
    log::debug!(
        "registered {} -> {}: {} object pairs, {} correspondences, {} inliers",
        source.bundle_id,
        target.bundle_id,
        diagnostics.object_pairs,
        diagnostics.correspondences,
        diagnostics.inliers
    );
    Ok(RegistrationReport {
        transform: ransac.transform,
        object_pairs,
        point_pairs: corr,
        inliers: ransac.inlier_indices,
        stage_timings: timings,
        diagnostics,
    })
}

/// Most frequent ground-truth object among `masks`, lowest id on ties.
fn majority_object(masks: &[(u32, u32)], lookup: impl Fn(u32, u32) -> Option<usize>) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &(v, m) in masks {
        if let Some(o) = lookup(v, m) {
            *counts.entry(o).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(o, _)| o)
}

/// Number of reported object pairs that pair the same ground-truth object.
pub fn correct_object_pairs(report: &RegistrationReport, gt: &GroundTruth) -> usize {
    report
        .object_pairs
        .iter()
        .filter(|p| {
            let a = majority_object(&p.source_masks, |v, m| gt.source_object(v, m));
            let b = majority_object(&p.target_masks, |v, m| gt.target_object(v, m));
            a.is_some() && a == b && gt.object_pairs.contains(&(a.unwrap_or(0), b.unwrap_or(0)))
        })
        .count()
}

// ---------------------------------------------------------------------------
// Suites

/// Where one suite pair comes from.
#[derive(Debug, Clone)]
pub enum SuitePair {
    /// Generated on the fly.
    Spec(SceneSpec),
    /// A directory holding `source/`, `target/` and `gt.json`.
    Directory(PathBuf),
    Loaded {
        name: String,
        source: Box<SceneBundle>,
        target: Box<SceneBundle>,
        gt: Box<GroundTruth>,
    },
}

impl SuitePair {
    pub fn name(&self) -> String {
        match self {
            Self::Spec(s) => format!("seed-{}", s.seed),
            Self::Directory(p) => p
                .file_name()
                .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()),
            Self::Loaded { name, .. } => name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureReport {
    pub stage: String,
    pub message: String,
}

impl FailureReport {
    fn from_error(err: &ZeroRegError) -> Self {
        let stage = match err {
            ZeroRegError::Stage { stage, .. } => (*stage).to_string(),
            _ => "load".to_string(),
        };
        Self {
            stage,
            message: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRecord {
    pub name: String,
    pub evaluation: Option<PairEvaluation>,
    pub failure: Option<FailureReport>,
    pub object_pairs: usize,
    pub correct_object_pairs: usize,
    pub correspondences: usize,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub summary: SuiteSummary,
    pub pairs: Vec<PairRecord>,
}

impl SuiteReport {
    /// One line per pair; failed pairs leave the metric columns empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "pair,registered,rmse,inlier_ratio,rotation_error_deg,translation_error_m,object_pairs,correct_object_pairs,correspondences,runtime_ms,failed_stage\n",
        );
        for r in &self.pairs {
            let metrics = match &r.evaluation {
                Some(e) => format!(
                    "{},{},{},{},{}",
                    e.registered, e.rmse, e.inlier_ratio, e.rotation_error, e.translation_error
                ),
                None => "false,,,,".to_string(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{:.3},{}\n",
                r.name,
                metrics,
                r.object_pairs,
                r.correct_object_pairs,
                r.correspondences,
                r.runtime_ms,
                r.failure.as_ref().map_or("", |f| f.stage.as_str())
            ));
        }
        out
    }
}

fn load(pair: &SuitePair) -> Result<(SceneBundle, SceneBundle, GroundTruth)> {
    match pair {
        SuitePair::Spec(spec) => generate_pair(spec),
        SuitePair::Directory(dir) => read_pair(dir),
        SuitePair::Loaded { source, target, gt, .. } => Ok(((**source).clone(), (**target).clone(), (**gt).clone())),
    }
}

fn evaluate_one(pair: &SuitePair, config: &PipelineConfig) -> PairRecord {
    let start = Instant::now();
    let mut record = PairRecord {
        name: pair.name(),
        evaluation: None,
        failure: None,
        object_pairs: 0,
        correct_object_pairs: 0,
        correspondences: 0,
        runtime_ms: 0.0,
    };
    let outcome = load(pair).and_then(|(source, target, gt)| {
        let report = register_pair(&source, &target, config)?;
        let eval = PairEvaluation::new(
            &report.transform,
            &gt.transform,
            &gt.overlap_points,
            &report.point_pairs,
        )
        .map_err(|e| ZeroRegError::Stage {
            stage: "metrics",
            source: Box::new(e),
        })?;
        Ok((report, gt, eval))
    });
    match outcome {
        Ok((report, gt, eval)) => {
            record.object_pairs = report.object_pairs.len();
            record.correct_object_pairs = correct_object_pairs(&report, &gt);
            record.correspondences = report.point_pairs.len();
            record.evaluation = Some(eval);
        }
        Err(e) => {
            log::warn!("pair {} failed: {e}", record.name);
            record.failure = Some(FailureReport::from_error(&e));
        }
    }
    record.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    record
}

/// Registers and scores every pair on `jobs` threads. Failed pairs are kept in the
/// recall denominator. Results do not depend on `jobs`.
pub fn evaluate_suite(pairs: &[SuitePair], config: &PipelineConfig, jobs: usize) -> Result<SuiteReport> {
    if pairs.is_empty() {
        return Err(ZeroRegError::EmptyInput("suite has no pairs".into()));
    }
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ZeroRegError::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    let records: Vec<PairRecord> = pool.install(|| pairs.par_iter().map(|p| evaluate_one(p, config)).collect());
    let evals: Vec<PairEvaluation> = records.iter().filter_map(|r| r.evaluation).collect();
    let failures = records.iter().filter(|r| r.failure.is_some()).count();
    Ok(SuiteReport {
        summary: SuiteSummary::from_evaluations(&evals, failures),
        pairs: records,
    })
}
