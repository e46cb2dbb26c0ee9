//! Point-level matching inside matched object regions: descriptor similarity, slack
//! augmentation, log-domain Sinkhorn, and mutual-argmax extraction.

use nalgebra::{DMatrix, Point3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZeroRegError};
use crate::object_matching::ObjectCorrespondences;
use crate::projection::PointDescriptorCloud;

/// Value of the slack row and column.
pub const SLACK: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointMatchConfig {
    pub sinkhorn_iterations: usize,
    pub sinkhorn_temperature: f64,
    pub gamma: f64,
    /// Match all descriptor points at once when no object pair survives.
    pub global_fallback: bool,
}

impl Default for PointMatchConfig {
    fn default() -> Self {
        Self {
            sinkhorn_iterations: 20,
            sinkhorn_temperature: 0.1,
            gamma: 0.05,
            global_fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(pub DMatrix<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedScores {
    pub scores: DMatrix<f64>,
    pub z: f64,
}

impl AugmentedScores {
    /// Interior block without the slack row and column.
    pub fn strip(&self) -> DMatrix<f64> {
        strip_slack(&self.scores)
    }
}

pub fn strip_slack(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.view((0, 0), (m.nrows() - 1, m.ncols() - 1)).into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointMatch {
    pub source: usize,
    pub target: usize,
    pub confidence: f64,
    /// Index of the object pair the match came from; `None` for global matching.
    pub region: Option<usize>,
    pub source_point: Point3<f64>,
    pub target_point: Point3<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PointCorrespondences {
    pub pairs: Vec<PointMatch>,
}

impl PointCorrespondences {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn point_pairs(&self) -> Vec<(Point3<f64>, Point3<f64>)> {
        self.pairs.iter().map(|m| (m.source_point, m.target_point)).collect()
    }
}

/// Inner products between descriptor rows: `Gp · Gqᵀ`.
pub fn similarity_matrix(gp: &DMatrix<f64>, gq: &DMatrix<f64>) -> Result<SimilarityMatrix> {
    if gp.ncols() != gq.ncols() {
        return Err(ZeroRegError::Shape(format!(
            "descriptor dimensions differ: {} vs {}",
            gp.ncols(),
            gq.ncols()
        )));
    }
    if gp.nrows() == 0 || gq.nrows() == 0 {
        return Err(ZeroRegError::EmptyInput("similarity of an empty descriptor set".into()));
    }
    Ok(SimilarityMatrix(gp * gq.transpose()))
}

/// Appends a slack row and column filled with [`SLACK`].
pub fn augment_slack(s: &SimilarityMatrix) -> AugmentedScores {
    let (n, m) = s.0.shape();
    let mut scores = DMatrix::from_element(n + 1, m + 1, SLACK);
    scores.view_mut((0, 0), (n, m)).copy_from(&s.0);
    AugmentedScores { scores, z: SLACK }
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn on slack-augmented scores.
///
/// Interior scores are divided by `temperature`; slack entries enter as-is. Each
/// iteration normalizes every non-slack row and then every non-slack column to unit
/// mass. The slack row and column are never normalized and absorb unmatched mass.
pub fn sinkhorn_normalize(scores: &AugmentedScores, iterations: usize, temperature: f64) -> Result<DMatrix<f64>> {
    if iterations == 0 {
        return Err(ZeroRegError::Config("sinkhorn iterations must be >= 1".into()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(ZeroRegError::Config("sinkhorn temperature must be > 0".into()));
    }
    let s = &scores.scores;
    if s.iter().any(|v| !v.is_finite()) {
        return Err(ZeroRegError::Numerical("sinkhorn input".into()));
    }
    let (rows, cols) = s.shape();
    let (n, m) = (rows - 1, cols - 1);
    let logits = DMatrix::from_fn(rows, cols, |i, j| {
        if i < n && j < m {
            s[(i, j)] / temperature
        } else {
            s[(i, j)]
        }
    });
    let mut row_pot = vec![0.0; rows];
    let mut col_pot = vec![0.0; cols];
    for _ in 0..iterations {
        for (i, pot) in row_pot.iter_mut().enumerate().take(n) {
            *pot = -logsumexp((0..cols).map(|j| logits[(i, j)] + col_pot[j]));
        }
        for (j, pot) in col_pot.iter_mut().enumerate().take(m) {
            *pot = -logsumexp((0..rows).map(|i| logits[(i, j)] + row_pot[i]));
        }
    }
    let transport = DMatrix::from_fn(rows, cols, |i, j| (logits[(i, j)] + row_pot[i] + col_pot[j]).exp());
    if transport.iter().any(|v| !v.is_finite()) {
        return Err(ZeroRegError::Numerical("sinkhorn transport".into()));
    }
    Ok(transport)
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Mutual-argmax pairs of the interior of a slack-augmented transport matrix with
/// mass at least `gamma`. Argmaxes range over the slack entries too, so a point whose
/// mass mostly sits in the slack yields no pair. Returns `(row, col, mass)`.
pub fn extract_correspondences(transport: &DMatrix<f64>, gamma: f64) -> Vec<(usize, usize, f64)> {
    let (rows, cols) = transport.shape();
    let (n, m) = (rows - 1, cols - 1);
    let col_best: Vec<usize> = (0..m).map(|j| argmax(transport.column(j).iter().copied())).collect();
    let mut out = Vec::new();
    for i in 0..n {
        let j = argmax(transport.row(i).iter().copied());
        if j < m && col_best[j] == i && transport[(i, j)] >= gamma {
            out.push((i, j, transport[(i, j)]));
        }
    }
    out
}

fn gather(cloud: &PointDescriptorCloud, indices: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(indices.len(), cloud.dim, |r, c| cloud.descriptor(indices[r])[c])
}

/// Full similarity → slack → Sinkhorn → extraction chain on one pair of index sets.
fn match_region(
    source: &PointDescriptorCloud,
    target: &PointDescriptorCloud,
    src_idx: &[usize],
    tgt_idx: &[usize],
    region: Option<usize>,
    config: &PointMatchConfig,
) -> Result<Vec<PointMatch>> {
    let s = similarity_matrix(&gather(source, src_idx), &gather(target, tgt_idx))?;
    let transport = sinkhorn_normalize(
        &augment_slack(&s),
        config.sinkhorn_iterations,
        config.sinkhorn_temperature,
    )?;
    Ok(extract_correspondences(&transport, config.gamma)
        .into_iter()
        .map(|(i, j, confidence)| PointMatch {
            source: src_idx[i],
            target: tgt_idx[j],
            confidence,
            region,
            source_point: source.points[src_idx[i]],
            target_point: target.points[tgt_idx[j]],
        })
        .collect())
}

/// Matches descriptor points independently inside every matched object pair and
/// concatenates the results. With no object pairs and `global_fallback` set, all
/// descriptor points are matched in one global region instead.
pub fn match_points(
    regions: &ObjectCorrespondences,
    source: &PointDescriptorCloud,
    target: &PointDescriptorCloud,
    config: &PointMatchConfig,
) -> Result<PointCorrespondences> {
    if source.is_empty() || target.is_empty() {
        return Err(ZeroRegError::EmptyInput("descriptor cloud has no points".into()));
    }
    if source.dim != target.dim {
        return Err(ZeroRegError::Shape(format!(
            "descriptor dimensions differ: {} vs {}",
            source.dim, target.dim
        )));
    }
    let mut pairs = Vec::new();
    if regions.is_empty() {
        if config.global_fallback {
            let all_src: Vec<usize> = (0..source.len()).collect();
            let all_tgt: Vec<usize> = (0..target.len()).collect();
            pairs = match_region(source, target, &all_src, &all_tgt, None, config)?;
        }
        return Ok(PointCorrespondences { pairs });
    }
    for (region, &(j, k)) in regions.pairs.iter().enumerate() {
        let src_idx = source.indices_of(j);
        let tgt_idx = target.indices_of(k);
        if src_idx.is_empty() || tgt_idx.is_empty() {
            continue;
        }
        pairs.extend(match_region(source, target, &src_idx, &tgt_idx, Some(region), config)?);
    }
    Ok(PointCorrespondences { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn similarity_examples() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let b = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert_eq!(similarity_matrix(&a, &a).unwrap().0[(0, 0)], 1.0);
        assert_eq!(similarity_matrix(&a, &b).unwrap().0[(0, 0)], 0.0);
        assert!(matches!(
            similarity_matrix(&a, &DMatrix::zeros(1, 3)),
            Err(ZeroRegError::Shape(_))
        ));
    }

    #[test]
    fn similarity_matches_dot_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gp = DMatrix::from_fn(4, 8, |_, _| rng.random_range(-1.0..1.0));
        let gq = DMatrix::from_fn(3, 8, |_, _| rng.random_range(-1.0..1.0));
        let s = similarity_matrix(&gp, &gq).unwrap().0;
        for i in 0..4 {
            for j in 0..3 {
                let mut dot = 0.0;
                for t in 0..8 {
                    dot += gp[(i, t)] * gq[(j, t)];
                }
                assert!((s[(i, j)] - dot).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn slack_augmentation() {
        let s = SimilarityMatrix(DMatrix::from_element(1, 1, 0.5));
        let aug = augment_slack(&s);
        assert_eq!(aug.scores, DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 1.0, 1.0]));
        assert_eq!(aug.z, 1.0);

        let s = SimilarityMatrix(DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        let aug = augment_slack(&s);
        assert_eq!(aug.scores.shape(), (3, 4));
        assert_eq!(aug.strip(), s.0);
        assert!(aug.scores.row(2).iter().all(|v| *v == 1.0));
        assert!(aug.scores.column(3).iter().all(|v| *v == 1.0));
    }

    #[test]
    fn equal_logits_reach_the_symmetric_fixed_point() {
        let aug = augment_slack(&SimilarityMatrix(DMatrix::from_element(1, 1, 1.0)));
        let p = sinkhorn_normalize(&aug, 20, 1.0).unwrap();
        // Closed form: with x = row scale = column scale, e·x² + e·x − 1 = 0 and the
        // interior mass is e·x².
        let e = std::f64::consts::E;
        let x = (-e + (e * e + 4.0 * e).sqrt()) / (2.0 * e);
        assert!((p[(0, 0)] - e * x * x).abs() < 1e-6, "{}", p[(0, 0)]);
        assert!((p[(0, 0)] + p[(0, 1)] - 1.0).abs() < 1e-6);
        assert!((p[(0, 0)] + p[(1, 0)] - 1.0).abs() < 1e-9);
    }

    /// Plain (non-log) Sinkhorn with the same slack convention, iterated to convergence.
    fn reference_sinkhorn(logits: &DMatrix<f64>, iterations: usize) -> DMatrix<f64> {
        let (rows, cols) = logits.shape();
        let k = logits.map(f64::exp);
        let mut r = vec![1.0; rows];
        let mut c = vec![1.0; cols];
        for _ in 0..iterations {
            for i in 0..rows - 1 {
                r[i] = 1.0 / (0..cols).map(|j| k[(i, j)] * c[j]).sum::<f64>();
            }
            for j in 0..cols - 1 {
                c[j] = 1.0 / (0..rows).map(|i| k[(i, j)] * r[i]).sum::<f64>();
            }
        }
        DMatrix::from_fn(rows, cols, |i, j| k[(i, j)] * r[i] * c[j])
    }

    #[test]
    fn strong_diagonal_concentrates_mass() {
        let interior = DMatrix::from_fn(4, 4, |i, j| if i == j { 10.0 } else { -10.0 });
        let aug = augment_slack(&SimilarityMatrix(interior));
        let p = sinkhorn_normalize(&aug, 20, 1.0).unwrap();
        let reference = reference_sinkhorn(&aug.scores, 5000);
        for i in 0..4 {
            assert!(p[(i, i)] > 0.9, "diagonal {i}: {}", p[(i, i)]);
            assert!(reference[(i, i)] > 0.9);
        }
    }

    #[test]
    fn row_sums_after_twenty_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let interior = DMatrix::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0));
        let p = sinkhorn_normalize(&augment_slack(&SimilarityMatrix(interior)), 20, 1.0).unwrap();
        for i in 0..8 {
            assert!((p.row(i).sum() - 1.0).abs() < 1e-6);
            assert!((p.column(i).sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_scores_are_rejected() {
        let aug = augment_slack(&SimilarityMatrix(DMatrix::from_element(2, 2, f64::NAN)));
        assert!(matches!(
            sinkhorn_normalize(&aug, 20, 0.1),
            Err(ZeroRegError::Numerical(_))
        ));
        let ok = augment_slack(&SimilarityMatrix(DMatrix::zeros(2, 2)));
        assert!(sinkhorn_normalize(&ok, 0, 0.1).is_err());
        assert!(sinkhorn_normalize(&ok, 5, 0.0).is_err());
    }

    #[test]
    fn extraction_examples() {
        let p = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.8, 0.05, 0.05, 0.1, //
                0.05, 0.7, 0.1, 0.15, //
                0.05, 0.1, 0.75, 0.1, //
                0.1, 0.15, 0.1, 3.0,
            ],
        );
        let pairs = extract_correspondences(&p, 0.05);
        assert_eq!(
            pairs.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>(),
            vec![(0, 0), (1, 1), (2, 2)]
        );

        // Row 0 puts its mass in the slack column.
        let p = DMatrix::from_row_slice(3, 3, &[0.2, 0.1, 0.7, 0.1, 0.8, 0.1, 0.5, 0.5, 1.0]);
        let pairs = extract_correspondences(&p, 0.05);
        assert_eq!(pairs.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>(), vec![(1, 1)]);

        let p = DMatrix::from_row_slice(3, 3, &[0.04, 0.0, 0.96, 0.0, 0.03, 0.97, 0.96, 0.97, 1.0]);
        assert!(extract_correspondences(&p, 0.05).is_empty());
    }

    fn random_transport(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let interior = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        sinkhorn_normalize(&augment_slack(&SimilarityMatrix(interior)), 20, 0.1).unwrap()
    }

    proptest! {
        #[test]
        fn extraction_invariants(n in 1usize..8, m in 1usize..8, seed in any::<u64>(), g1 in 0.0..0.5f64, g2 in 0.0..0.5f64) {
            let p = random_transport(n, m, seed);
            for v in p.iter() {
                prop_assert!(*v > 0.0 && v.is_finite());
            }
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            let a = extract_correspondences(&p, lo);
            let b = extract_correspondences(&p, hi);
            prop_assert!(b.len() <= a.len());
            let mut rows: Vec<_> = a.iter().map(|x| x.0).collect();
            let mut cols: Vec<_> = a.iter().map(|x| x.1).collect();
            rows.dedup();
            cols.sort_unstable();
            cols.dedup();
            prop_assert_eq!(rows.len(), a.len());
            prop_assert_eq!(cols.len(), a.len());
            for (_, _, conf) in &a {
                prop_assert!((0.0..=1.0).contains(conf));
            }
        }

        #[test]
        fn target_permutation_permutes_pairs(n in 1usize..7, m in 2usize..7, seed in any::<u64>(), shift in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let interior = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
            let perm: Vec<usize> = (0..m).map(|j| (j + shift) % m).collect();
            // Column j of the permuted matrix is column perm[j] of the original.
            let permuted = DMatrix::from_fn(n, m, |i, j| interior[(i, perm[j])]);
            let run = |s: DMatrix<f64>| {
                let p = sinkhorn_normalize(&augment_slack(&SimilarityMatrix(s)), 20, 0.1).unwrap();
                extract_correspondences(&p, 0.05)
            };
            let base: Vec<(usize, usize)> = run(interior).iter().map(|x| (x.0, x.1)).collect();
            let moved: Vec<(usize, usize)> = run(permuted).iter().map(|x| (x.0, perm[x.1])).collect();
            prop_assert_eq!(base, moved);
        }
    }

    fn cloud(
        points: usize,
        dim: usize,
        owner: impl Fn(usize) -> Option<usize>,
        desc: impl Fn(usize) -> Vec<f64>,
    ) -> PointDescriptorCloud {
        PointDescriptorCloud {
            points: (0..points).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect(),
            descriptors: (0..points).flat_map(&desc).collect(),
            dim,
            object_index: (0..points).map(owner).collect(),
        }
    }

    fn one_hot(i: usize, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i % dim] = 1.0;
        v
    }

    #[test]
    fn regions_recover_planted_identity() {
        // Three regions of four points; descriptor i is one-hot within its region, so
        // only region-local matching can recover identity.
        let src = cloud(12, 4, |i| Some(i / 4), |i| one_hot(i, 4));
        let tgt = cloud(12, 4, |i| Some(2 - i / 4), |i| one_hot(i, 4));
        let regions = ObjectCorrespondences {
            pairs: vec![(0, 2), (1, 1), (2, 0)],
        };
        let corr = match_points(&regions, &src, &tgt, &PointMatchConfig::default()).unwrap();
        let mut got: Vec<(usize, usize)> = corr.pairs.iter().map(|m| (m.source, m.target)).collect();
        got.sort_unstable();
        let expected: Vec<(usize, usize)> = (0..12).map(|i| (i, i)).collect();
        assert_eq!(got, expected);
        for m in &corr.pairs {
            let (j, k) = regions.pairs[m.region.unwrap()];
            assert_eq!(src.object_index[m.source], Some(j));
            assert_eq!(tgt.object_index[m.target], Some(k));
        }
    }

    #[test]
    fn fallback_equals_global_run() {
        let src = cloud(6, 6, |_| None, |i| one_hot(i, 6));
        let tgt = cloud(6, 6, |_| None, |i| one_hot(5 - i, 6));
        let cfg = PointMatchConfig::default();
        let fallback = match_points(&ObjectCorrespondences { pairs: vec![] }, &src, &tgt, &cfg).unwrap();
        let all: Vec<usize> = (0..6).collect();
        let global = match_region(&src, &tgt, &all, &all, None, &cfg).unwrap();
        assert_eq!(fallback.pairs, global);
        assert_eq!(fallback.len(), 6);

        let off = PointMatchConfig {
            global_fallback: false,
            ..cfg
        };
        assert!(match_points(&ObjectCorrespondences { pairs: vec![] }, &src, &tgt, &off)
            .unwrap()
            .is_empty());
        let empty = cloud(0, 6, |_| None, |i| one_hot(i, 6));
        assert!(matches!(
            match_points(&ObjectCorrespondences { pairs: vec![] }, &empty, &tgt, &cfg),
            Err(ZeroRegError::EmptyInput(_))
        ));
    }
}
