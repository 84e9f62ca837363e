use nalgebra::DMatrix;

use crate::assignment::solve_assignment;
use crate::geometry::{epipolar_line, point_line_distance, FundamentalMatrix};
use crate::model::Box2D;

/// Cost of a left/right pair: distance of each right corner to the epipolar
/// line of the matching left corner (top-left and bottom-right).
pub fn epipolar_cost(f: &FundamentalMatrix, left: &Box2D, right: &Box2D) -> Option<f64> {
    // lines in the right image come from Fᵀ · c_left
    let ft = f.transpose();
    let l1 = epipolar_line(&ft, left.top_left()).ok()?;
    let l2 = epipolar_line(&ft, left.bottom_right()).ok()?;
    Some(point_line_distance(&l1, right.top_left()) + point_line_distance(&l2, right.bottom_right()))
}

/// Minimum-cost pairing of unmatched left and right boxes. Pairs whose total
/// cost exceeds `gate` pixels are dropped. Returns `(left, right, cost)`.
pub fn epipolar_assign(left: &[Box2D], right: &[Box2D], f: &FundamentalMatrix, gate: f64) -> Vec<(usize, usize, f64)> {
    if left.is_empty() || right.is_empty() {
        return Vec::new();
    }
    // a corner at the epipole has no line; price it out of the gate
    let blocked = gate * 1e6 + 1.0;
    let costs = DMatrix::from_fn(left.len(), right.len(), |i, j| {
        epipolar_cost(f, &left[i], &right[j]).unwrap_or(blocked).min(blocked)
    });
    solve_assignment(&costs, false)
        .pairs
        .into_iter()
        .filter(|&(i, j)| costs[(i, j)] <= gate)
        .map(|(i, j)| (i, j, costs[(i, j)]))
        .collect()
}
