//! Rigid transform estimation: closed-form least-squares fit and RANSAC.

use nalgebra::{Matrix3, Point3, Vector3, SVD};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, ZeroRegError};

/// Proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self
            .rotation
            .iter()
            .chain(self.translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(ZeroRegError::validation("transform", "non-finite entry"));
        }
        if (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max()
            > 1e-6
            || (self.rotation.determinant() - 1.0).abs() > 1e-6
        {
            return Err(ZeroRegError::validation("transform.rotation", "not a proper rotation"));
        }
        Ok(())
    }

    /// Row-major `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let (r, t) = (&self.rotation, &self.translation);
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x, //
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y, //
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Self {
        Self {
            rotation: Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
            translation: Vector3::new(v[3], v[7], v[11]),
        }
    }

    /// Single text line of the 12 row-major `[R | t]` values.
    pub fn to_line(&self) -> String {
        self.to_row_major()
            .iter()
            .map(|v| format!("{v:.17e}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let values: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| ZeroRegError::validation("transform", format!("bad number: {e}")))?;
        let arr: [f64; 12] = values
            .try_into()
            .map_err(|v: Vec<f64>| ZeroRegError::validation("transform", format!("{} values, expected 12", v.len())))?;
        Ok(Self::from_row_major(&arr))
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let v = <[f64; 12]>::deserialize(deserializer)?;
        Ok(Self::from_row_major(&v))
    }
}

pub fn apply_transform(transform: &RigidTransform, points: &[Point3<f64>]) -> Vec<Point3<f64>> {
    points.iter().map(|p| transform.apply(p)).collect()
}

/// Least-squares rigid fit minimizing `Σ‖R·p + t − q‖²` (Kabsch with reflection fix).
pub fn fit_rigid(pairs: &[(Point3<f64>, Point3<f64>)]) -> Result<RigidTransform> {
    if pairs.len() < 3 {
        return Err(ZeroRegError::InsufficientData {
            needed: 3,
            got: pairs.len(),
        });
    }
    let n = pairs.len() as f64;
    let src_mean = pairs.iter().fold(Vector3::zeros(), |a, (p, _)| a + p.coords) / n;
    let dst_mean = pairs.iter().fold(Vector3::zeros(), |a, (_, q)| a + q.coords) / n;

    let mut cross = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for (p, q) in pairs {
        let ps = p.coords - src_mean;
        cross += ps * (q.coords - dst_mean).transpose();
        scatter += ps * ps.transpose();
    }

    let spread = scatter.symmetric_eigenvalues();
    let mut spread: Vec<f64> = spread.iter().copied().collect();
    spread.sort_by(|a, b| b.total_cmp(a));
    if !(spread[1] > 1e-12 * spread[0].max(f64::MIN_POSITIVE)) {
        return Err(ZeroRegError::DegenerateConfig(
            "source points are collinear or coincident".into(),
        ));
    }

    let svd = SVD::new(cross, true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let v = v_t.transpose();
    let mut correction = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        correction[(2, 2)] = -1.0;
    }
    let rotation = v * correction * u.transpose();
    let translation = dst_mean - rotation * src_mean;
    Ok(RigidTransform { rotation, translation })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Residual below which a pair counts as an inlier (meters).
    pub inlier_threshold: f64,
    /// Stop once the best model's inlier ratio implies this success probability.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50_000,
            inlier_threshold: 0.05,
            confidence: 0.999,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub transform: RigidTransform,
    pub inlier_indices: Vec<usize>,
    pub iterations_run: usize,
}

const SAMPLE_SIZE: usize = 3;

fn inliers(transform: &RigidTransform, pairs: &[(Point3<f64>, Point3<f64>)], threshold: f64) -> Vec<usize> {
    pairs
        .iter()
        .enumerate()
        .filter(|(_, (p, q))| (transform.apply(p) - q).norm() < threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Iterations needed to draw an all-inlier sample with the requested confidence.
fn required_iterations(inlier_ratio: f64, confidence: f64) -> f64 {
    let good = inlier_ratio.powi(SAMPLE_SIZE as i32);
    if good >= 1.0 {
        return 1.0;
    }
    if good <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 - confidence).ln() / (1.0 - good).ln()
}

/// Sampler for one iteration: a ChaCha stream keyed by the iteration index, so any
/// iteration can be replayed independently of the others.
fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

/// RANSAC over minimal 3-pair samples with a final refit on the consensus set.
pub fn ransac_register(pairs: &[(Point3<f64>, Point3<f64>)], config: &RansacConfig) -> Result<RansacResult> {
    if pairs.len() < SAMPLE_SIZE {
        return Err(ZeroRegError::InsufficientData {
            needed: SAMPLE_SIZE,
            got: pairs.len(),
        });
    }
    if !(config.inlier_threshold > 0.0) || !(0.0..1.0).contains(&config.confidence) {
        return Err(ZeroRegError::Config("invalid RANSAC threshold or confidence".into()));
    }
    let total = pairs.len() as f64;
    let mut best: Option<(usize, RigidTransform)> = None;
    let mut iterations_run = 0;
    for it in 0..config.max_iterations.max(1) {
        iterations_run = it + 1;
        let mut rng = iteration_rng(config.seed, it);
        let sample: Vec<_> = index::sample(&mut rng, pairs.len(), SAMPLE_SIZE)
            .into_iter()
            .map(|i| pairs[i])
            .collect();
        let Ok(model) = fit_rigid(&sample) else {
            continue;
        };
        let count = pairs
            .iter()
            .filter(|(p, q)| (model.apply(p) - q).norm() < config.inlier_threshold)
            .count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, model));
        }
        let best_count = best.as_ref().map_or(0, |b| b.0);
        if iterations_run as f64 >= required_iterations(best_count as f64 / total, config.confidence) {
            break;
        }
    }

    let (count, model) = best.ok_or(ZeroRegError::NoConsensus)?;
    if count == 0 {
        return Err(ZeroRegError::NoConsensus);
    }
    let mut transform = model;
    let mut inlier_indices = inliers(&model, pairs, config.inlier_threshold);
    if inlier_indices.len() >= SAMPLE_SIZE {
        let consensus: Vec<_> = inlier_indices.iter().map(|&i| pairs[i]).collect();
        if let Ok(refit) = fit_rigid(&consensus) {
            let refit_inliers = inliers(&refit, pairs, config.inlier_threshold);
            if refit_inliers.len() >= inlier_indices.len() {
                transform = refit;
                inlier_indices = refit_inliers;
            }
        }
    }
    Ok(RansacResult {
        transform,
        inlier_indices,
        iterations_run,
    })
}
