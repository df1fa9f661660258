//! Sample-set distances used as fidelity scores.

use crate::error::{Error, Result};
use crate::numerics::{dot, SeededRng};

/// Wasserstein-1 distance between two empirical 1-D distributions.
///
/// Both samples are sorted and the absolute difference of their quantile
/// functions is integrated exactly over the merged breakpoints, so unequal
/// sample sizes are handled without resampling.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("wasserstein_1d needs nonempty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i + 1) as f64 / n;
        let next_b = (j + 1) as f64 / m;
        let next = next_a.min(next_b);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    Ok(total)
}

/// Sliced Wasserstein-1 distance along explicit unit directions.
pub fn sliced_wasserstein_along(a: &[Vec<f64>], b: &[Vec<f64>], directions: &[Vec<f64>]) -> Result<f64> {
    let dim = check_sets(a, b)?;
    if directions.is_empty() {
        return Err(Error::InvalidArgument("at least one direction required".into()));
    }
    let mut total = 0.0;
    for dir in directions {
        if dir.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: dir.len(),
            });
        }
        let pa: Vec<f64> = a.iter().map(|x| dot(x, dir)).collect();
        let pb: Vec<f64> = b.iter().map(|x| dot(x, dir)).collect();
        total += wasserstein_1d(&pa, &pb)?;
    }
    Ok(total / directions.len() as f64)
}

/// Monte-Carlo sliced Wasserstein-1 distance over `num_directions` random
/// unit directions drawn from `rng`.
pub fn sliced_wasserstein(a: &[Vec<f64>], b: &[Vec<f64>], num_directions: usize, rng: &mut SeededRng) -> Result<f64> {
    let dim = check_sets(a, b)?;
    let directions = random_directions(dim, num_directions, rng);
    sliced_wasserstein_along(a, b, &directions)
}

pub fn random_directions(dim: usize, count: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| loop {
            let v = rng.normal_vec(dim);
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

fn check_sets(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("sample sets must be nonempty".into()));
    }
    let dim = a[0].len();
    for x in a.iter().chain(b) {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: x.len(),
            });
        }
    }
    Ok(dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sets_are_zero() {
        let mut rng = SeededRng::new(1);
        let a: Vec<Vec<f64>> = (0..50).map(|_| rng.normal_vec(3)).collect();
        let d = sliced_wasserstein(&a, &a, 16, &mut rng).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn single_points_along_x_axis() {
        let d = sliced_wasserstein_along(&[vec![0.0, 0.0]], &[vec![3.0, 4.0]], &[vec![1.0, 0.0]]).unwrap();
        assert!((d - 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_points_random_directions_average_projection() {
        // E|u . (3,4)| over uniform unit u in 2-D is 5 * 2/pi.
        let mut rng = SeededRng::new(9);
        let d = sliced_wasserstein(&[vec![0.0, 0.0]], &[vec![3.0, 4.0]], 20_000, &mut rng).unwrap();
        assert!((d - 10.0 / std::f64::consts::PI).abs() < 0.05, "{d}");
    }

    #[test]
    fn unequal_sizes_match_brute_force() {
        // Brute force: expand both samples to lcm(2,3)=6 equally weighted atoms.
        let a = [0.0, 1.0];
        let b = [0.5, 2.0, 4.0];
        let ea = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let eb = [0.5, 0.5, 2.0, 2.0, 4.0, 4.0];
        let brute: f64 = ea.iter().zip(&eb).map(|(x, y): (&f64, &f64)| (x - y).abs()).sum::<f64>() / 6.0;
        assert!((wasserstein_1d(&a, &b).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn distance_grows_with_shift() {
        let mut rng = SeededRng::new(4);
        let base: Vec<f64> = (0..400).map(|_| rng.normal()).collect();
        let mut last = 0.0;
        for s in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let shifted: Vec<f64> = base.iter().map(|x| x + s).collect();
            let d = wasserstein_1d(&base, &shifted).unwrap();
            assert!((d - s).abs() < 1e-9);
            assert!(d > last);
            last = d;
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut rng = SeededRng::new(0);
        let err = sliced_wasserstein(&[vec![0.0]], &[vec![0.0, 1.0]], 4, &mut rng).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}
