//! Deterministic numerical primitives: vector algebra, simplex operations,
//! divergences and sample-set distances.

mod distance;
mod rng;
mod simplex;

pub use distance::{random_directions, sliced_wasserstein, sliced_wasserstein_along, wasserstein_1d};
pub use rng::SeededRng;
pub use simplex::{argmax, check_simplex, kl_div, logsumexp, softmax, SimplexRow, PROB_FLOOR, SIMPLEX_TOL};

pub(crate) use simplex::softmax_vec;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}
