//! Rectangular linear sum assignment.
//!
//! Shortest augmenting path solver in the Jonker–Volgenant family: one
//! Dijkstra-style search per row over reduced costs, maintaining dual
//! potentials. Every feasible solution has `min(rows, cols)` pairs, so the
//! result is the optimum among maximum-cardinality matchings.

use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the original matrix entries over `pairs`.
    pub total: f64,
}

const NONE: usize = usize::MAX;

/// Solves the assignment on `scores`, maximizing or minimizing the total.
///
/// Entries must be finite. An empty dimension yields an empty result.
pub fn solve_assignment(scores: &DMatrix<f64>, maximize: bool) -> AssignmentResult {
    let (nr, nc) = scores.shape();
    if nr == 0 || nc == 0 {
        return AssignmentResult { pairs: Vec::new(), total: 0.0 };
    }
    assert!(scores.iter().all(|v| v.is_finite()), "assignment matrix must be finite");

    let transpose = nr > nc;
    let (rows, cols) = if transpose { (nc, nr) } else { (nr, nc) };
    let sign = if maximize { -1.0 } else { 1.0 };
    let mut cost = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let v = if transpose { scores[(j, i)] } else { scores[(i, j)] };
            cost[i * cols + j] = sign * v;
        }
    }

    let col4row = shortest_augmenting_path(rows, cols, &cost);
    let mut pairs: Vec<(usize, usize)> = col4row
        .iter()
        .enumerate()
        .map(|(i, &j)| if transpose { (j, i) } else { (i, j) })
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| scores[(i, j)]).sum();
    AssignmentResult { pairs, total }
}

/// Minimizes `cost` (row-major, `rows <= cols`); returns the column of each row.
fn shortest_augmenting_path(rows: usize, cols: usize, cost: &[f64]) -> Vec<usize> {
    let mut u = vec![0.0; rows];
    let mut v = vec![0.0; cols];
    let mut shortest = vec![f64::INFINITY; cols];
    let mut path = vec![NONE; cols];
    let mut col4row = vec![NONE; rows];
    let mut row4col = vec![NONE; cols];
    let mut visited_rows = vec![false; rows];
    let mut visited_cols = vec![false; cols];
    let mut remaining = vec![0usize; cols];

    for cur_row in 0..rows {
        shortest.fill(f64::INFINITY);
        visited_rows.fill(false);
        visited_cols.fill(false);
        for (k, r) in remaining.iter_mut().enumerate() {
            *r = cols - 1 - k;
        }
        let mut num_remaining = cols;
        let mut min_val = 0.0;
        let mut i = cur_row;
        let sink;
        loop {
            visited_rows[i] = true;
            let mut index = NONE;
            let mut lowest = f64::INFINITY;
            for (it, &j) in remaining[..num_remaining].iter().enumerate() {
                let r = min_val + cost[i * cols + j] - u[i] - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                if shortest[j] < lowest || (shortest[j] == lowest && row4col[j] == NONE) {
                    lowest = shortest[j];
                    index = it;
                }
            }
            min_val = lowest;
            debug_assert!(min_val.is_finite(), "finite costs always admit a path");
            let j = remaining[index];
            visited_cols[j] = true;
            num_remaining -= 1;
            remaining[index] = remaining[num_remaining];
            if row4col[j] == NONE {
                sink = j;
                break;
            }
            i = row4col[j];
        }

        u[cur_row] += min_val;
        for r in 0..rows {
            if visited_rows[r] && r != cur_row {
                u[r] += min_val - shortest[col4row[r]];
            }
        }
        for c in 0..cols {
            if visited_cols[c] {
                v[c] -= min_val - shortest[c];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            std::mem::swap(&mut col4row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }
    col4row
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Best total over all injective maps from the smaller side.
    fn brute_force(m: &DMatrix<f64>, maximize: bool) -> f64 {
        let (r, c) = m.shape();
        let (small, large, get): (usize, usize, Box<dyn Fn(usize, usize) -> f64>) = if r <= c {
            (r, c, Box::new(|a, b| m[(a, b)]))
        } else {
            (c, r, Box::new(|a, b| m[(b, a)]))
        };
        fn rec(k: usize, small: usize, large: usize, used: &mut Vec<bool>, acc: f64, get: &dyn Fn(usize, usize) -> f64, best: &mut f64, maximize: bool) {
            if k == small {
                if (maximize && acc > *best) || (!maximize && acc < *best) {
                    *best = acc;
                }
                return;
            }
            for j in 0..large {
                if !used[j] {
                    used[j] = true;
                    rec(k + 1, small, large, used, acc + get(k, j), get, best, maximize);
                    used[j] = false;
                }
            }
        }
        let mut best = if maximize { f64::NEG_INFINITY } else { f64::INFINITY };
        rec(0, small, large, &mut vec![false; large], 0.0, &*get, &mut best, maximize);
        best
    }

    #[test]
    fn forced_single() {
        let r = solve_assignment(&DMatrix::from_row_slice(1, 1, &[0.4]), true);
        assert_eq!(r.pairs, vec![(0, 0)]);
        assert_eq!(r.total, 0.4);
        assert!(solve_assignment(&DMatrix::zeros(0, 3), true).pairs.is_empty());
    }

    #[test]
    fn two_by_two() {
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let r = solve_assignment(&m, true);
        assert_eq!(r.pairs, vec![(0, 0), (1, 1)]);
        assert!((r.total - 1.7).abs() < 1e-12);
        let r = solve_assignment(&m, false);
        assert_eq!(r.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn tall_matrices_match_brute_force() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let m = DMatrix::from_fn(3, 2, |_, _| rng.random::<f64>());
            for maximize in [true, false] {
                let r = solve_assignment(&m, maximize);
                assert_eq!(r.pairs.len(), 2);
                assert!((r.total - brute_force(&m, maximize)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn negative_and_repeated_entries() {
        let m = DMatrix::from_row_slice(3, 4, &[-1.0, 2.0, 2.0, 0.0, 5.0, 5.0, 5.0, 5.0, -3.0, 0.0, 1.0, 1.0]);
        for maximize in [true, false] {
            let r = solve_assignment(&m, maximize);
            assert!((r.total - brute_force(&m, maximize)).abs() < 1e-12);
        }
    }
}
