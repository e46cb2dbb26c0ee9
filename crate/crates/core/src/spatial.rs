//! Uniform-grid spatial hash for fixed-radius neighbor queries.

use std::collections::HashMap;

use nalgebra::Point3;

type Cell = (i64, i64, i64);

#[derive(Debug, Clone)]
pub struct VoxelGrid {
    cell: f64,
    buckets: HashMap<Cell, Vec<usize>>,
    points: Vec<Point3<f64>>,
}

impl VoxelGrid {
    pub fn new(cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        Self {
            cell,
            buckets: HashMap::new(),
            points: Vec::new(),
        }
    }

    pub fn from_points(cell: f64, points: impl IntoIterator<Item = Point3<f64>>) -> Self {
        let mut grid = Self::new(cell);
        for p in points {
            grid.insert(p);
        }
        grid
    }

    fn key(&self, p: &Point3<f64>) -> Cell {
        (
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        )
    }

    /// Inserts a point and returns its index.
    pub fn insert(&mut self, p: Point3<f64>) -> usize {
        let idx = self.points.len();
        self.buckets.entry(self.key(&p)).or_default().push(idx);
        self.points.push(p);
        idx
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, idx: usize) -> &Point3<f64> {
        &self.points[idx]
    }

    /// Indices of stored points within `radius` of `p` (radius must not exceed the cell size),
    /// sorted by distance then index.
    pub fn within(&self, p: &Point3<f64>, radius: f64) -> Vec<(usize, f64)> {
        debug_assert!(radius <= self.cell * (1.0 + 1e-12));
        let (cx, cy, cz) = self.key(p);
        let r2 = radius * radius;
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.buckets.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &i in bucket {
                            let d2 = (self.points[i] - p).norm_squared();
                            if d2 <= r2 {
                                out.push((i, d2));
                            }
                        }
                    }
                }
            }
        }
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    pub fn has_neighbor(&self, p: &Point3<f64>, radius: f64) -> bool {
        let (cx, cy, cz) = self.key(p);
        let r2 = radius * radius;
        (-1..=1).any(|dx| {
            (-1..=1).any(|dy| {
                (-1..=1).any(|dz| {
                    self.buckets
                        .get(&(cx + dx, cy + dy, cz + dz))
                        .is_some_and(|b| b.iter().any(|&i| (self.points[i] - p).norm_squared() <= r2))
                })
            })
        })
    }
}
