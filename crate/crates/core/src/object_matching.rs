//! Object-level graph matching.
//!
//! The objective is `‖Wp − X Wq Xᵀ‖²_F − Σ C∘X` over binary `X` matching every node of
//! the smaller graph to a distinct node of the larger one. Small instances are solved
//! exactly by branch-and-bound enumeration; larger ones by conditional gradient on the
//! continuous relaxation followed by assignment rounding.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZeroRegError};
use crate::lap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QapConfig {
    /// Largest `min(n, m)` solved by exhaustive enumeration.
    pub exact_limit: usize,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl Default for QapConfig {
    fn default() -> Self {
        Self {
            exact_limit: 8,
            max_iters: 100,
            tolerance: 1e-8,
        }
    }
}

/// Binary assignment between `rows` source nodes and `cols` target nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Matched `(source, target)` pairs sorted by source index.
    pub pairs: Vec<(usize, usize)>,
    pub objective: f64,
}

impl AssignmentMatrix {
    pub fn entries(&self) -> DMatrix<f64> {
        pairs_to_matrix(self.rows, self.cols, &self.pairs)
    }

    /// Checks the one-to-one constraints, including that the smaller side is fully matched.
    pub fn is_feasible(&self) -> bool {
        let mut row_used = vec![false; self.rows];
        let mut col_used = vec![false; self.cols];
        for &(r, c) in &self.pairs {
            if r >= self.rows || c >= self.cols || row_used[r] || col_used[c] {
                return false;
            }
            row_used[r] = true;
            col_used[c] = true;
        }
        self.pairs.len() == self.rows.min(self.cols)
    }
}

fn pairs_to_matrix(rows: usize, cols: usize, pairs: &[(usize, usize)]) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(rows, cols);
    for &(r, c) in pairs {
        x[(r, c)] = 1.0;
    }
    x
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ObjectCorrespondences {
    pub pairs: Vec<(usize, usize)>,
}

impl ObjectCorrespondences {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn check_shapes(x_shape: (usize, usize), wp: &DMatrix<f64>, wq: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<()> {
    let (n, m) = c.shape();
    if wp.shape() != (n, n) || wq.shape() != (m, m) || x_shape != (n, m) {
        return Err(ZeroRegError::Shape(format!(
            "Wp {:?}, Wq {:?}, C {:?}, X {:?} are inconsistent",
            wp.shape(),
            wq.shape(),
            c.shape(),
            x_shape
        )));
    }
    Ok(())
}

/// `‖Wp − X Wq Xᵀ‖²_F − Σ_jk C_jk X_jk`. Accepts fractional `X` as well as binary.
pub fn qap_objective(x: &DMatrix<f64>, wp: &DMatrix<f64>, wq: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<f64> {
    check_shapes(x.shape(), wp, wq, c)?;
    Ok(objective_unchecked(x, wp, wq, c))
}

fn objective_unchecked(x: &DMatrix<f64>, wp: &DMatrix<f64>, wq: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    let residual = wp - x * wq * x.transpose();
    residual.norm_squared() - c.component_mul(x).sum()
}

/// Objective of a binary assignment given as pairs.
pub fn assignment_objective(
    pairs: &[(usize, usize)],
    wp: &DMatrix<f64>,
    wq: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<f64> {
    let x = pairs_to_matrix(c.nrows(), c.ncols(), pairs);
    qap_objective(&x, wp, wq, c)
}

/// Branch-and-bound state. The "small" side is enumerated node by node and each node
/// is given a distinct partner on the "large" side.
struct Enumerator<'a> {
    small_w: &'a DMatrix<f64>,
    large_w: &'a DMatrix<f64>,
    /// `score[(i, l)]` is the similarity reward for pairing small `i` with large `l`.
    score: DMatrix<f64>,
    /// Source is the small side (`n <= m`): all structural increments are non-negative.
    source_small: bool,
    base: f64,
    remaining_reward: Vec<f64>,
    partner: Vec<usize>,
    used: Vec<bool>,
    best: Option<(f64, Vec<(usize, usize)>)>,
}

impl Enumerator<'_> {
    /// Objective change from assigning small node `i` to large node `l`, given the
    /// partners of small nodes `0..i`.
    fn increment(&self, i: usize, l: usize) -> f64 {
        let (sw, lw) = (self.small_w, self.large_w);
        let mut delta = -self.score[(i, l)];
        let pair_term = |s: f64, t: f64| {
            if self.source_small {
                (s - t) * (s - t)
            } else {
                // Large side is the source: its entry already counts in `base`.
                (t - s) * (t - s) - t * t
            }
        };
        delta += pair_term(sw[(i, i)], lw[(l, l)]);
        for h in 0..i {
            let lh = self.partner[h];
            delta += pair_term(sw[(i, h)], lw[(l, lh)]);
            delta += pair_term(sw[(h, i)], lw[(lh, l)]);
        }
        delta
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = self
            .partner
            .iter()
            .enumerate()
            .map(|(i, &l)| if self.source_small { (i, l) } else { (l, i) })
            .collect();
        pairs.sort_unstable();
        pairs
    }

    fn search(&mut self, i: usize, partial: f64) {
        let small = self.small_w.nrows();
        if i == small {
            let total = self.base + partial;
            let better = match &self.best {
                None => true,
                Some((best, best_pairs)) => {
                    let eps = 1e-12 * best.abs().max(1.0);
                    total < best - eps || (total <= best + eps && self.pairs() < *best_pairs)
                }
            };
            if better {
                self.best = Some((total, self.pairs()));
            }
            return;
        }
        if self.source_small {
            if let Some((best, _)) = &self.best {
                let bound = self.base + partial - self.remaining_reward[i];
                if bound > best + 1e-12 * best.abs().max(1.0) {
                    return;
                }
            }
        }
        for l in 0..self.large_w.nrows() {
            if self.used[l] {
                continue;
            }
            let delta = self.increment(i, l);
            self.used[l] = true;
            self.partner.push(l);
            self.search(i + 1, partial + delta);
            self.partner.pop();
            self.used[l] = false;
        }
    }
}

/// Global minimizer by enumeration of all injective matchings of the smaller side.
/// Ties go to the lexicographically smallest sorted pair list.
pub fn solve_qap_exact(
    wp: &DMatrix<f64>,
    wq: &DMatrix<f64>,
    c: &DMatrix<f64>,
    exact_limit: usize,
) -> Result<AssignmentMatrix> {
    check_shapes(c.shape(), wp, wq, c)?;
    let (n, m) = c.shape();
    let size = n.min(m);
    if size > exact_limit {
        return Err(ZeroRegError::SizeLimit {
            size,
            limit: exact_limit,
        });
    }
    if size == 0 {
        return Ok(AssignmentMatrix {
            rows: n,
            cols: m,
            pairs: Vec::new(),
            objective: qap_objective(&DMatrix::zeros(n, m), wp, wq, c)?,
        });
    }
    let source_small = n <= m;
    let (small_w, large_w, score, base) = if source_small {
        (wp, wq, c.clone(), 0.0)
    } else {
        (wq, wp, c.transpose(), wp.norm_squared())
    };
    // Upper bound on the reward still collectable by small nodes i.. .
    let mut remaining_reward = vec![0.0; size + 1];
    for i in (0..size).rev() {
        let best = score.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        remaining_reward[i] = remaining_reward[i + 1] + best;
    }
    let mut search = Enumerator {
        small_w,
        large_w,
        score,
        source_small,
        base,
        remaining_reward,
        partner: Vec::with_capacity(size),
        used: vec![false; large_w.nrows()],
        best: None,
    };
    search.search(0, 0.0);
    let (_, pairs) = search.best.expect("at least one feasible assignment");
    let objective = assignment_objective(&pairs, wp, wq, c)?;
    Ok(AssignmentMatrix {
        rows: n,
        cols: m,
        pairs,
        objective,
    })
}

/// Gradient of the relaxed objective at `x`.
fn gradient(x: &DMatrix<f64>, wp: &DMatrix<f64>, wq: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let residual = wp - x * wq * x.transpose();
    let g = &residual * x * wq.transpose() + residual.transpose() * x * wq;
    g * -2.0 - c
}

/// Solves the graph-matching problem: exactly when `min(n, m) <= exact_limit`,
/// otherwise by conditional gradient with step `2 / (t + 2)` and assignment rounding,
/// followed by a pairwise-exchange polish of the rounded assignment.
pub fn solve_qap(
    wp: &DMatrix<f64>,
    wq: &DMatrix<f64>,
    c: &DMatrix<f64>,
    config: &QapConfig,
) -> Result<AssignmentMatrix> {
    check_shapes(c.shape(), wp, wq, c)?;
    let (n, m) = c.shape();
    if n.min(m) <= config.exact_limit {
        return solve_qap_exact(wp, wq, c, config.exact_limit);
    }
    let mut x = DMatrix::from_element(n, m, 1.0 / n.max(m) as f64);
    let mut value = objective_unchecked(&x, wp, wq, c);
    // Linear-subproblem vertices are feasible assignments; keep the best one seen.
    let mut best_vertex: Option<(f64, Vec<(usize, usize)>)> = None;
    for t in 0..config.max_iters {
        let grad = gradient(&x, wp, wq, c);
        let pairs = lap::solve(&grad);
        let vertex = pairs_to_matrix(n, m, &pairs);
        let vertex_value = objective_unchecked(&vertex, wp, wq, c);
        if best_vertex.as_ref().is_none_or(|(v, _)| vertex_value < *v) {
            best_vertex = Some((vertex_value, pairs));
        }
        let step = 2.0 / (t as f64 + 2.0);
        let next = &x * (1.0 - step) + vertex * step;
        let next_value = objective_unchecked(&next, wp, wq, c);
        let improvement = value - next_value;
        x = next;
        value = next_value;
        if improvement.abs() < config.tolerance {
            break;
        }
    }
    let rounded = lap::solve(&(-&x));
    let rounded_value = assignment_objective(&rounded, wp, wq, c)?;
    let (start, start_value) = match best_vertex {
        Some((v, pairs)) if v < rounded_value => (pairs, v),
        _ => (rounded, rounded_value),
    };
    let (pairs, objective) = polish(start, start_value, wp, wq, c);
    Ok(AssignmentMatrix {
        rows: n,
        cols: m,
        pairs,
        objective,
    })
}

/// First-improvement local search: exchange the partners of two pairs, or move a
/// pair to an unmatched node of the larger side, until no move lowers the objective.
fn polish(
    mut pairs: Vec<(usize, usize)>,
    mut value: f64,
    wp: &DMatrix<f64>,
    wq: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> (Vec<(usize, usize)>, f64) {
    const EPS: f64 = 1e-12;
    let (n, m) = c.shape();
    // The larger side's index within a pair.
    let wide = n <= m;
    let large = n.max(m);
    let other = |p: &(usize, usize)| if wide { p.1 } else { p.0 };
    let set_other = |p: &mut (usize, usize), v: usize| if wide { p.1 = v } else { p.0 = v };
    let eval = |cand: &[(usize, usize)]| objective_unchecked(&pairs_to_matrix(n, m, cand), wp, wq, c);
    loop {
        let mut improved = false;
        for a in 0..pairs.len() {
            for b in a + 1..pairs.len() {
                let mut cand = pairs.clone();
                let (oa, ob) = (other(&cand[a]), other(&cand[b]));
                set_other(&mut cand[a], ob);
                set_other(&mut cand[b], oa);
                let v = eval(&cand);
                if v < value - EPS {
                    pairs = cand;
                    value = v;
                    improved = true;
                }
            }
            let mut used = vec![false; large];
            for p in &pairs {
                used[other(p)] = true;
            }
            for free in (0..large).filter(|&l| !used[l]) {
                let mut cand = pairs.clone();
                set_other(&mut cand[a], free);
                let v = eval(&cand);
                if v < value - EPS {
                    pairs = cand;
                    value = v;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            break;
        }
    }
    pairs.sort_unstable();
    (pairs, value)
}

/// Matches each source node to its most similar target, resolving conflicts in favor
/// of the higher similarity (lower source index on ties).
pub fn match_by_similarity(c: &DMatrix<f64>) -> ObjectCorrespondences {
    let mut proposals: Vec<(usize, usize, f64)> = (0..c.nrows())
        .filter_map(|j| {
            let row = c.row(j);
            let best = (0..c.ncols()).fold(None, |acc: Option<usize>, k| match acc {
                Some(b) if row[b] >= row[k] => Some(b),
                _ => Some(k),
            })?;
            Some((j, best, row[best]))
        })
        .collect();
    proposals.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    let mut taken = vec![false; c.ncols()];
    let mut pairs = Vec::new();
    for (j, k, _) in proposals {
        if !taken[k] {
            taken[k] = true;
            pairs.push((j, k));
        }
    }
    pairs.sort_unstable();
    ObjectCorrespondences { pairs }
}

/// Keeps matched pairs whose (trimmed) category labels are equal.
pub fn filter_by_category<S: AsRef<str>>(
    pairs: &[(usize, usize)],
    labels_p: &[S],
    labels_q: &[S],
) -> ObjectCorrespondences {
    ObjectCorrespondences {
        pairs: pairs
            .iter()
            .copied()
            .filter(|&(j, k)| {
                matches!((labels_p.get(j), labels_q.get(k)), (Some(a), Some(b)) if a.as_ref().trim() == b.as_ref().trim())
            })
            .collect(),
    }
}

/// Similarity with label-mismatched pairs made prohibitively expensive.
pub fn hard_constrain<S: AsRef<str>>(c: &DMatrix<f64>, labels_p: &[S], labels_q: &[S]) -> DMatrix<f64> {
    const PENALTY: f64 = 1e6;
    DMatrix::from_fn(c.nrows(), c.ncols(), |j, k| {
        if labels_p[j].as_ref().trim() == labels_q[k].as_ref().trim() {
            c[(j, k)]
        } else {
            c[(j, k)] - PENALTY
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m2(v: [f64; 4]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &v)
    }

    #[test]
    fn objective_examples() {
        let w = m2([0.0, 2.0, 2.0, 0.0]);
        let c = m2([2.0, 1.0, 1.0, 2.0]);
        let id = DMatrix::identity(2, 2);
        let swap = m2([0.0, 1.0, 1.0, 0.0]);
        assert_eq!(qap_objective(&id, &w, &w, &c).unwrap(), -4.0);
        assert_eq!(qap_objective(&swap, &w, &w, &c).unwrap(), -2.0);
        assert_eq!(qap_objective(&id, &w, &w, &DMatrix::zeros(2, 2)).unwrap(), 0.0);
        assert!(matches!(
            qap_objective(&DMatrix::zeros(2, 3), &w, &w, &c),
            Err(ZeroRegError::Shape(_))
        ));
    }

    #[test]
    fn exact_on_two_by_two() {
        let w = m2([0.0, 2.0, 2.0, 0.0]);
        let c = m2([2.0, 1.0, 1.0, 2.0]);
        let a = solve_qap_exact(&w, &w, &c, 8).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.objective, -4.0);
    }

    #[test]
    fn single_source_node_takes_best_similarity() {
        let wp = DMatrix::zeros(1, 1);
        let wq = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.5, 1.0, 0.0, 1.5, 0.5, 1.5, 0.0]);
        let c = DMatrix::from_row_slice(1, 3, &[0.0, 5.0, 1.0]);
        // Enumeration: every choice has zero structural cost (diagonals are zero).
        let a = solve_qap_exact(&wp, &wq, &c, 8).unwrap();
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert_eq!(a.objective, -5.0);
    }

    #[test]
    fn size_limit_is_enforced() {
        let w = DMatrix::zeros(9, 9);
        assert!(matches!(
            solve_qap_exact(&w, &w, &DMatrix::zeros(9, 9), 8),
            Err(ZeroRegError::SizeLimit { size: 9, limit: 8 })
        ));
    }

    #[test]
    fn ties_prefer_lexicographic_order() {
        let w = DMatrix::zeros(3, 3);
        let a = solve_qap_exact(&w, &w, &DMatrix::zeros(3, 3), 8).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        let wide = solve_qap_exact(&DMatrix::zeros(3, 3), &DMatrix::zeros(2, 2), &DMatrix::zeros(3, 2), 8).unwrap();
        assert_eq!(wide.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn dominant_similarity_reduces_to_linear_assignment() {
        let perm = [3usize, 7, 1, 0, 11, 5, 9, 2, 10, 4, 8, 6];
        let mut c = DMatrix::zeros(12, 12);
        for (j, &k) in perm.iter().enumerate() {
            c[(j, k)] = 100.0;
        }
        let w = DMatrix::zeros(12, 12);
        let a = solve_qap(&w, &w, &c, &QapConfig::default()).unwrap();
        let expected: Vec<_> = perm.iter().copied().enumerate().collect();
        assert_eq!(a.pairs, expected);
        assert_eq!(a.objective, -1200.0);
    }

    #[test]
    fn heuristic_is_feasible_and_locally_optimal() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for (n, m) in [(10, 12), (12, 10), (11, 11)] {
            let sym = |k: usize, rng: &mut rand_chacha::ChaCha8Rng| {
                let mut w = DMatrix::zeros(k, k);
                for i in 0..k {
                    for j in i + 1..k {
                        let v = rng.random_range(0.0..2.0);
                        w[(i, j)] = v;
                        w[(j, i)] = v;
                    }
                }
                w
            };
            let wp = sym(n, &mut rng);
            let wq = sym(m, &mut rng);
            let c = DMatrix::from_fn(n, m, |_, _| rng.random_range(0.0..2.0));
            let got = solve_qap(&wp, &wq, &c, &QapConfig::default()).unwrap();
            assert!(got.is_feasible());
            assert!((got.objective - assignment_objective(&got.pairs, &wp, &wq, &c).unwrap()).abs() < 1e-9);
            // No single exchange of partners improves the result.
            for a in 0..got.pairs.len() {
                for b in a + 1..got.pairs.len() {
                    let mut cand = got.pairs.clone();
                    if n <= m {
                        let t = cand[a].1;
                        cand[a].1 = cand[b].1;
                        cand[b].1 = t;
                    } else {
                        let t = cand[a].0;
                        cand[a].0 = cand[b].0;
                        cand[b].0 = t;
                    }
                    assert!(assignment_objective(&cand, &wp, &wq, &c).unwrap() >= got.objective - 1e-9);
                }
            }
        }
    }

    #[test]
    fn category_filter() {
        let p = ["chair", "chair", "lamp"];
        let q = ["chair ", "table", "bed"];
        let kept = filter_by_category(&[(0, 0), (1, 1), (2, 2)], &p, &q);
        assert_eq!(kept.pairs, vec![(0, 0)]);
        assert!(filter_by_category(&[(1, 1), (2, 2)], &p, &q).is_empty());
    }

    #[test]
    fn similarity_argmax_resolves_conflicts() {
        let c = DMatrix::from_row_slice(3, 2, &[1.9, 1.0, 1.95, 1.1, 0.5, 0.2]);
        assert_eq!(match_by_similarity(&c).pairs, vec![(1, 0)]);
    }

    fn instance() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        (1usize..5, 1usize..5).prop_flat_map(|(n, m)| {
            (
                prop::collection::vec(0.0..2.0f64, n * n),
                prop::collection::vec(0.0..2.0f64, m * m),
                prop::collection::vec(0.0..2.0f64, n * m),
            )
                .prop_map(move |(a, b, c)| {
                    let sym = |v: Vec<f64>, k: usize| {
                        let raw = DMatrix::from_row_slice(k, k, &v);
                        let mut s = (&raw + raw.transpose()) * 0.5;
                        s.fill_diagonal(0.0);
                        s
                    };
                    (sym(a, n), sym(b, m), DMatrix::from_row_slice(n, m, &c))
                })
        })
    }

    fn all_assignments(n: usize, m: usize) -> Vec<Vec<(usize, usize)>> {
        fn rec(
            i: usize,
            small: usize,
            large: usize,
            used: &mut Vec<bool>,
            cur: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if i == small {
                out.push(cur.clone());
                return;
            }
            for l in 0..large {
                if !used[l] {
                    used[l] = true;
                    cur.push(l);
                    rec(i + 1, small, large, used, cur, out);
                    cur.pop();
                    used[l] = false;
                }
            }
        }
        let (small, large) = (n.min(m), n.max(m));
        let mut maps = Vec::new();
        rec(0, small, large, &mut vec![false; large], &mut Vec::new(), &mut maps);
        maps.into_iter()
            .map(|map| {
                let mut pairs: Vec<_> = map
                    .into_iter()
                    .enumerate()
                    .map(|(i, l)| if n <= m { (i, l) } else { (l, i) })
                    .collect();
                pairs.sort_unstable();
                pairs
            })
            .collect()
    }

    proptest! {
        #[test]
        fn exact_beats_every_enumerated_assignment((wp, wq, c) in instance()) {
            let a = solve_qap_exact(&wp, &wq, &c, 8).unwrap();
            prop_assert!(a.is_feasible());
            let lower = -(0..c.nrows()).map(|j| c.row(j).max()).sum::<f64>();
            prop_assert!(a.objective >= lower - 1e-12);
            for pairs in all_assignments(c.nrows(), c.ncols()) {
                let obj = assignment_objective(&pairs, &wp, &wq, &c).unwrap();
                prop_assert!(a.objective <= obj + 1e-9);
            }
        }

        #[test]
        fn exact_is_permutation_equivariant((wp, wq, c) in instance(), shift in 0usize..4) {
            let n = c.nrows();
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            // Relabel source node i as perm[i].
            let wp2 = DMatrix::from_fn(n, n, |a, b| wp[(perm.iter().position(|&p| p == a).unwrap(), perm.iter().position(|&p| p == b).unwrap())]);
            let c2 = DMatrix::from_fn(n, c.ncols(), |a, k| c[(perm.iter().position(|&p| p == a).unwrap(), k)]);
            let a = solve_qap_exact(&wp, &wq, &c, 8).unwrap();
            let b = solve_qap_exact(&wp2, &wq, &c2, 8).unwrap();
            prop_assert!((a.objective - b.objective).abs() < 1e-9);
            let mapped: Vec<_> = a.pairs.iter().map(|&(j, k)| (perm[j], k)).collect();
            let obj = assignment_objective(&mapped, &wp2, &wq, &c2).unwrap();
            prop_assert!((obj - b.objective).abs() < 1e-9);
        }

        #[test]
        fn planted_isomorphism_has_zero_objective(n in 3usize..6, weights in prop::collection::vec(0.1..2.0f64, 15), shift in 1usize..5) {
            // Distinct edge weights on a complete graph.
            let mut wp = DMatrix::zeros(n, n);
            let mut t = 0;
            for a in 0..n {
                for b in a + 1..n {
                    let w = weights[t] + t as f64 * 10.0;
                    wp[(a, b)] = w;
                    wp[(b, a)] = w;
                    t += 1;
                }
            }
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let mut wq = DMatrix::zeros(n, n);
            for a in 0..n {
                for b in 0..n {
                    wq[(perm[a], perm[b])] = wp[(a, b)];
                }
            }
            let sol = solve_qap_exact(&wp, &wq, &DMatrix::zeros(n, n), 8).unwrap();
            prop_assert!(sol.objective.abs() < 1e-9);
            let expected: Vec<_> = perm.iter().copied().enumerate().collect();
            prop_assert_eq!(sol.pairs, expected);
        }
    }
}
