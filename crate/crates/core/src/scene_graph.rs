//! Object scene graphs: centroid nodes joined by kNN edges weighted with semantic similarity.

use nalgebra::{DMatrix, Point3};

use crate::error::{Result, ZeroRegError};
use crate::projection::MaskedPointCloud;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraphRep {
    pub centroids: Vec<Point3<f64>>,
    pub affinity: DMatrix<f64>,
    /// `n × d`, one semantic vector per row.
    pub node_semantics: DMatrix<f64>,
    pub node_labels: Vec<String>,
    /// Neighbor count actually used (after clamping to `n - 1`).
    pub k: usize,
}

impl SceneGraphRep {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }
}

pub fn centroid(points: &[Point3<f64>]) -> Result<Point3<f64>> {
    if points.is_empty() {
        return Err(ZeroRegError::EmptyInput("centroid of an empty point set".into()));
    }
    let sum = points.iter().fold(nalgebra::Vector3::zeros(), |acc, p| acc + p.coords);
    Ok(Point3::from(sum / points.len() as f64))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

fn check_rows(m: &DMatrix<f64>, side: &str) -> Result<()> {
    for i in 0..m.nrows() {
        let norm = m.row(i).norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(ZeroRegError::ZeroVector(format!("{side} node {i}")));
        }
    }
    Ok(())
}

/// The `k` nearest other nodes of `j`; ties at equal distance go to the lower index.
pub fn nearest_neighbors(centroids: &[Point3<f64>], j: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = centroids
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != j)
        .map(|(i, c)| ((c - centroids[j]).norm_squared(), i))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Semantic-weighted kNN affinity. Edge weights are `1 + cos(s_j, s_k)`; the matrix is
/// symmetrized by elementwise max unless `directed` is set. `k` is clamped to `n - 1`.
pub fn build_affinity(
    centroids: &[Point3<f64>],
    semantics: &DMatrix<f64>,
    k: usize,
    directed: bool,
) -> Result<DMatrix<f64>> {
    let n = centroids.len();
    if semantics.nrows() != n {
        return Err(ZeroRegError::Shape(format!(
            "{n} centroids but {} semantic rows",
            semantics.nrows()
        )));
    }
    if k == 0 {
        return Err(ZeroRegError::Config("k must be at least 1".into()));
    }
    check_rows(semantics, "graph")?;
    let k = k.min(n.saturating_sub(1));
    let mut w = DMatrix::zeros(n, n);
    for j in 0..n {
        let sj = row(semantics, j);
        for nb in nearest_neighbors(centroids, j, k) {
            w[(j, nb)] = 1.0 + cosine(&sj, &row(semantics, nb));
        }
    }
    if !directed {
        for j in 0..n {
            for i in j + 1..n {
                let m = w[(j, i)].max(w[(i, j)]);
                w[(j, i)] = m;
                w[(i, j)] = m;
            }
        }
    }
    for j in 0..n {
        w[(j, j)] = 0.0;
    }
    Ok(w)
}

/// `C[j, k] = 1 + cos(p_j, q_k)` between the rows of two semantic matrices.
pub fn cross_similarity(semantics_p: &DMatrix<f64>, semantics_q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if semantics_p.ncols() != semantics_q.ncols() {
        return Err(ZeroRegError::Shape(format!(
            "semantic dimensions differ: {} vs {}",
            semantics_p.ncols(),
            semantics_q.ncols()
        )));
    }
    check_rows(semantics_p, "source")?;
    check_rows(semantics_q, "target")?;
    let (n, m) = (semantics_p.nrows(), semantics_q.nrows());
    Ok(DMatrix::from_fn(n, m, |j, k| {
        1.0 + cosine(&row(semantics_p, j), &row(semantics_q, k))
    }))
}

/// Builds the scene graph of a masked cloud. `semantics_override` replaces every
/// node's semantic vector (used to ablate semantics).
pub fn build_scene_graph(
    cloud: &MaskedPointCloud,
    k: usize,
    directed: bool,
    semantics_override: Option<&[f64]>,
) -> Result<SceneGraphRep> {
    let n = cloud.objects.len();
    if n == 0 {
        return Err(ZeroRegError::EmptyInput("scene graph with no objects".into()));
    }
    let centroids = (0..n)
        .map(|j| centroid(&cloud.object_points(j)))
        .collect::<Result<Vec<_>>>()?;
    let d = semantics_override.map_or(cloud.objects[0].semantic.len(), <[f64]>::len);
    let node_semantics = DMatrix::from_fn(n, d, |j, c| match semantics_override {
        Some(v) => v[c],
        None => cloud.objects[j].semantic[c],
    });
    let affinity = build_affinity(&centroids, &node_semantics, k, directed)?;
    Ok(SceneGraphRep {
        centroids,
        affinity,
        node_semantics,
        node_labels: cloud.objects.iter().map(|o| o.category_label.clone()).collect(),
        k: k.min(n - 1),
    })
}
