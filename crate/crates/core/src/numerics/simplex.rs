use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the row sum of a probability vector.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Floor applied to reference probabilities inside `kl_div` and to
/// probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// A probability vector over `V` categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexRow(Vec<f64>);

impl SimplexRow {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_simplex(&probs)?;
        Ok(Self(probs))
    }

    /// Normalizes nonnegative weights onto the simplex.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::NotOnSimplex("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::NotOnSimplex("weights have zero mass".into()));
        }
        Ok(Self(weights.into_iter().map(|w| w / total).collect()))
    }

    pub fn uniform(v: usize) -> Self {
        assert!(v > 0);
        Self(vec![1.0 / v as f64; v])
    }

    pub fn one_hot(v: usize, k: usize) -> Self {
        assert!(k < v, "token {k} outside vocabulary of size {v}");
        let mut probs = vec![0.0; v];
        probs[k] = 1.0;
        Self(probs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn is_one_hot(&self) -> bool {
        self.0.iter().filter(|&&p| p == 1.0).count() == 1 && self.0.iter().all(|&p| p == 0.0 || p == 1.0)
    }
}

impl TryFrom<Vec<f64>> for SimplexRow {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<SimplexRow> for Vec<f64> {
    fn from(row: SimplexRow) -> Self {
        row.0
    }
}

impl std::ops::Index<usize> for SimplexRow {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn check_simplex(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::NotOnSimplex("empty vector".into()));
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::NotOnSimplex(format!("entry {p} is negative or non-finite")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::NotOnSimplex(format!("entries sum to {total}")));
    }
    Ok(())
}

/// Lowest index of the maximum entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Max-shifted softmax. `-inf` logits map to zero probability; NaN or `+inf`
/// logits are a caller bug and panic.
pub fn softmax(logits: &[f64]) -> SimplexRow {
    SimplexRow(softmax_vec(logits))
}

pub(crate) fn softmax_vec(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax of empty vector");
    assert!(
        logits.iter().all(|l| !l.is_nan() && *l != f64::INFINITY),
        "softmax requires finite logits"
    );
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(max.is_finite(), "softmax requires at least one finite logit");
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// `KL(p || q) = sum p log(p / q)`.
///
/// `p` must lie on the simplex. Entries of `q` are floored at
/// [`PROB_FLOOR`] so one-hot references never produce `log 0`.
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    check_simplex(p)?;
    if q.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NotOnSimplex("reference has negative or non-finite entries".into()));
    }
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.max(PROB_FLOOR).ln()))
        .sum();
    Ok(kl.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_symmetric_pair() {
        assert_eq!(softmax(&[0.0, 0.0]).as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_large_equal_logits_do_not_overflow() {
        let row = softmax(&[1000.0, 1000.0, 1000.0]);
        for &p in row.as_slice() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_log_three() {
        // exp(0) : exp(ln 3) = 1 : 3
        let row = softmax(&[0.0, 3f64.ln()]);
        assert!((row[0] - 0.25).abs() < 1e-15);
        assert!((row[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_neg_infinity_is_zero() {
        let row = softmax(&[f64::NEG_INFINITY, 0.0]);
        assert_eq!(row.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn kl_identity_is_zero() {
        assert_eq!(kl_div(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn kl_one_hot_against_uniform() {
        let kl = kl_div(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((kl - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn kl_hand_evaluated() {
        let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        let kl = kl_div(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        assert!((kl - expected).abs() < 1e-15);
    }

    #[test]
    fn kl_rejects_off_simplex() {
        assert!(matches!(kl_div(&[0.7, 0.7], &[0.5, 0.5]), Err(Error::NotOnSimplex(_))));
        assert!(matches!(kl_div(&[1.0], &[0.5, 0.5]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn kl_zero_reference_is_floored() {
        let kl = kl_div(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!(kl.is_finite() && kl > 10.0);
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.3, 0.3]), 1);
    }

    #[test]
    fn simplex_row_conversion_validates() {
        assert!(SimplexRow::try_from(vec![0.2, 0.2]).is_err());
        assert!(SimplexRow::try_from(vec![0.25, 0.75]).is_ok());
    }

    fn finite_logits() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 1..20)
    }

    fn simplex_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 2..10)
            .prop_filter_map("zero mass", |w| SimplexRow::from_weights(w).ok().map(SimplexRow::into_inner))
    }

    proptest! {
        #[test]
        fn softmax_stays_on_simplex(logits in finite_logits()) {
            let row = softmax(&logits);
            prop_assert!(check_simplex(row.as_slice()).is_ok());
        }

        #[test]
        fn softmax_is_monotone(logits in finite_logits()) {
            let row = softmax(&logits);
            for i in 0..logits.len() {
                for j in 0..logits.len() {
                    if logits[i] > logits[j] {
                        prop_assert!(row[i] >= row[j]);
                    }
                }
            }
        }

        #[test]
        fn kl_gibbs_inequality(p in simplex_vec(), seed in 0u64..1000) {
            let mut rng = crate::numerics::SeededRng::new(seed);
            let q = SimplexRow::from_weights((0..p.len()).map(|_| rng.uniform() + 1e-3).collect()).unwrap();
            prop_assert!(kl_div(&p, q.as_slice()).unwrap() >= 0.0);
            prop_assert_eq!(kl_div(&p, &p).unwrap(), 0.0);
        }
    }
}
