//! Closed-form Euclidean projections.

use crate::error::{Error, Result};
use crate::numerics::dot;

/// Componentwise clamp onto `[lo, hi]`.
pub fn project_box(x: &[f64], lo: &[f64], hi: &[f64]) -> Result<Vec<f64>> {
    if lo.len() != x.len() || hi.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: lo.len().min(hi.len()),
        });
    }
    if let Some(i) = (0..x.len()).find(|&i| !(lo[i] <= hi[i])) {
        return Err(Error::InvalidArgument(format!(
            "box bound {i}: lower {} exceeds upper {}",
            lo[i], hi[i]
        )));
    }
    Ok(x.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect())
}

/// Projection onto `{y : a . y <= b}`.
pub fn project_halfspace(x: &[f64], a: &[f64], b: f64) -> Result<Vec<f64>> {
    if a.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: a.len(),
        });
    }
    let nn = dot(a, a);
    if nn == 0.0 {
        return Err(Error::InvalidArgument("halfspace normal must be nonzero".into()));
    }
    let excess = dot(a, x) - b;
    if excess <= 0.0 {
        return Ok(x.to_vec());
    }
    let scale = excess / nn;
    Ok(x.iter().zip(a).map(|(v, ai)| v - scale * ai).collect())
}

/// Changes the fewest, cheapest cells so that exactly `k` entries are
/// negative.
///
/// With `c` negatives now: if `c > k` the `c - k` negatives closest to zero
/// become `+epsilon`; if `c < k` the `k - c` nonnegatives closest to zero
/// become `-epsilon`. Ties go to the lowest index. Entries must lie in
/// `[-1, 1]` and `epsilon` in `(0, 1]`.
pub fn project_topk_negative(grid: &[f64], k: usize, epsilon: f64) -> Result<Vec<f64>> {
    if k > grid.len() {
        return Err(Error::InvalidArgument(format!("K = {k} exceeds grid size {}", grid.len())));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside (0, 1]")));
    }
    if grid.iter().any(|v| !(-1.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("grid entries must lie in [-1, 1]".into()));
    }
    let negatives = grid.iter().filter(|v| **v < 0.0).count();
    let mut out = grid.to_vec();
    if negatives == k {
        return Ok(out);
    }
    let (want_negative, flips) = if negatives > k {
        (false, negatives - k)
    } else {
        (true, k - negatives)
    };
    let mut candidates: Vec<usize> = (0..grid.len()).filter(|&i| (grid[i] < 0.0) != want_negative).collect();
    // stable sort keeps lower indices first among equal distances
    candidates.sort_by(|&i, &j| grid[i].abs().total_cmp(&grid[j].abs()));
    for &i in &candidates[..flips] {
        out[i] = if want_negative { -epsilon } else { epsilon };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-3;

    #[test]
    fn box_examples() {
        let lo = [-1.0, -1.0];
        let hi = [1.0, 1.0];
        assert_eq!(project_box(&[2.0, -3.0], &lo, &hi).unwrap(), vec![1.0, -1.0]);
        assert_eq!(project_box(&[0.2, -0.3], &lo, &hi).unwrap(), vec![0.2, -0.3]);
        assert_eq!(project_box(&[0.5, 7.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap(), vec![0.5, 1.0]);
        assert!(project_box(&[0.0], &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn halfspace_examples() {
        assert_eq!(project_halfspace(&[2.0, 0.0], &[1.0, 0.0], 1.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(project_halfspace(&[0.5, 9.0], &[1.0, 0.0], 1.0).unwrap(), vec![0.5, 9.0]);
        assert_eq!(project_halfspace(&[1.0, 1.0], &[1.0, 1.0], 0.0).unwrap(), vec![0.0, 0.0]);
        assert!(project_halfspace(&[1.0, 1.0], &[0.0, 0.0], 0.0).is_err());
    }

    /// Cheapest L2 change among all sign patterns with exactly `k` negatives,
    /// where a changed cell moves to `-EPS` or `+EPS`.
    fn brute_topk(grid: &[f64], k: usize) -> Vec<f64> {
        let n = grid.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let cand: Vec<f64> = (0..n)
                .map(|i| {
                    let neg = mask >> i & 1 == 1;
                    match (neg, grid[i] < 0.0) {
                        (true, true) | (false, false) => grid[i],
                        (true, false) => -EPS,
                        (false, true) => EPS,
                    }
                })
                .collect();
            let cost: f64 = cand.iter().zip(grid).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().is_none_or(|(c, _)| cost < *c - 1e-15) {
                best = Some((cost, cand));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn topk_examples() {
        assert_eq!(project_topk_negative(&[-0.5, 0.2, 0.3], 2, EPS).unwrap(), vec![-0.5, -EPS, 0.3]);
        assert_eq!(brute_topk(&[-0.5, 0.2, 0.3], 2), vec![-0.5, -EPS, 0.3]);
        assert_eq!(project_topk_negative(&[-0.1, -0.4], 1, EPS).unwrap(), vec![EPS, -0.4]);
        assert_eq!(brute_topk(&[-0.1, -0.4], 1), vec![EPS, -0.4]);
        let g = [0.3, -0.2, 0.9];
        assert_eq!(project_topk_negative(&g, 1, EPS).unwrap(), g.to_vec());
        assert!(project_topk_negative(&g, 4, EPS).is_err());
    }

    #[test]
    fn topk_ties_take_lowest_index() {
        assert_eq!(project_topk_negative(&[0.2, 0.2, 0.2], 1, EPS).unwrap(), vec![-EPS, 0.2, 0.2]);
    }

    #[test]
    fn topk_matches_brute_force() {
        let mut rng = crate::numerics::SeededRng::new(8);
        for _ in 0..200 {
            let n = 1 + rng.below(8);
            let grid: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let k = rng.below(n + 1);
            assert_eq!(project_topk_negative(&grid, k, EPS).unwrap(), brute_topk(&grid, k));
        }
    }
}
