//! Augmented-Lagrangian projection.
//!
//! For a cost `D(y, x)` and residuals `r_i(y) >= 0` the solver minimizes
//!
//! ```text
//! L(y) = D(y, x) + sum_i lambda_i r_i(y) + mu / 2 * sum_i r_i(y)^2
//! ```
//!
//! by gradient descent (inner loop), then sets `lambda_i += mu * r_i(y)` and
//! `mu = min(alpha * mu, mu_max)` (outer loop) until the problem accepts the
//! iterate. Inner steps start at `gamma` and then follow Barzilai-Borwein
//! estimates, each checked by Armijo backtracking. When backtracking
//! collapses at a residual kink the step is taken along the minimum-norm
//! element of nearby gradients instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{all_finite, logsumexp, PROB_FLOOR};
use crate::projections::ConstraintSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlmConfig {
    pub lambda0: f64,
    pub mu0: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub delta: f64,
    pub mu_max: f64,
    pub max_inner_iter: usize,
    pub max_outer_iter: usize,
}

impl Default for AlmConfig {
    fn default() -> Self {
        Self {
            lambda0: 0.0,
            mu0: 1.0,
            gamma: 0.05,
            alpha: 2.0,
            delta: 1e-6,
            mu_max: 1e6,
            max_inner_iter: 100,
            max_outer_iter: 50,
        }
    }
}

impl AlmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lambda0 >= 0.0 && self.lambda0.is_finite()) {
            return bad(format!("lambda0 = {} must be nonnegative", self.lambda0));
        }
        if !(self.mu0 > 0.0 && self.gamma > 0.0 && self.delta > 0.0) {
            return bad("mu0, gamma and delta must be positive".into());
        }
        if !(self.alpha > 1.0) {
            return bad(format!("alpha = {} must exceed 1", self.alpha));
        }
        if !(self.mu_max >= self.mu0 && self.mu_max.is_finite()) {
            return bad(format!("mu_max = {} must be finite and at least mu0", self.mu_max));
        }
        if self.max_inner_iter == 0 || self.max_outer_iter == 0 {
            return bad("iteration limits must be positive".into());
        }
        Ok(())
    }
}

/// Dual state carried from one projection to the next. Only the multipliers
/// are reused; the penalty restarts at `mu0` every call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WarmState {
    pub lambda: Vec<f64>,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub point: Vec<f64>,
    pub residual_final: f64,
    /// Outer iterations.
    pub iterations_used: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    pub warm: WarmState,
}

/// A problem the ALM loop can drive. `z` is the optimization variable, which
/// may differ from the returned point (e.g. logits vs probabilities).
pub trait AlmProblem {
    fn num_constraints(&self) -> usize;

    /// Cost and its gradient in `z`.
    fn objective(&self, z: &[f64]) -> (f64, Vec<f64>);

    fn residuals(&self, z: &[f64]) -> Vec<f64>;

    /// `sum_i weights[i] * grad r_i(z)`.
    fn penalty_gradient(&self, z: &[f64], weights: &[f64]) -> Vec<f64>;

    /// Termination test. The default requires a small aggregate residual and
    /// every hard predicate to hold.
    fn accept(&self, z: &[f64], residuals: &[f64], delta: f64) -> bool;

    /// Hook run before each outer iteration.
    fn begin_outer(&mut self, _outer: usize) {}
}

#[derive(Debug, Clone)]
pub struct AlmOutcome {
    pub z: Vec<f64>,
    pub aggregate: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    pub best_z: Vec<f64>,
    pub best_aggregate: f64,
    pub warm: WarmState,
}

fn lagrangian<P: AlmProblem>(p: &P, z: &[f64], lambda: &[f64], mu: f64) -> f64 {
    let (f, _) = p.objective(z);
    let r = p.residuals(z);
    f + r.iter().zip(lambda).map(|(ri, li)| li * ri + 0.5 * mu * ri * ri).sum::<f64>()
}

fn lagrangian_grad<P: AlmProblem>(p: &P, z: &[f64], lambda: &[f64], mu: f64) -> (f64, Vec<f64>) {
    let (f, mut g) = p.objective(z);
    let r = p.residuals(z);
    let value = f + r.iter().zip(lambda).map(|(ri, li)| li * ri + 0.5 * mu * ri * ri).sum::<f64>();
    let weights: Vec<f64> = r.iter().zip(lambda).map(|(ri, li)| li + mu * ri).collect();
    if weights.iter().any(|w| *w != 0.0) {
        for (gj, dj) in g.iter_mut().zip(p.penalty_gradient(z, &weights)) {
            *gj += dj;
        }
    }
    (value, g)
}

struct Move {
    z: Vec<f64>,
    step: f64,
    decrease: f64,
}

/// Armijo backtracking along `-dir` from `step` down to `min_step`.
#[allow(clippy::too_many_arguments)]
fn backtrack<P: AlmProblem>(
    p: &P,
    z: &[f64],
    dir: &[f64],
    value: f64,
    mut step: f64,
    min_step: f64,
    lambda: &[f64],
    mu: f64,
) -> Option<Move> {
    let dn2: f64 = dir.iter().map(|d| d * d).sum();
    while step >= min_step {
        let trial: Vec<f64> = z.iter().zip(dir).map(|(zi, di)| zi - step * di).collect();
        let tv = lagrangian(p, &trial, lambda, mu);
        if tv.is_finite() && tv <= value - 1e-4 * step * dn2 {
            return Some(Move {
                z: trial,
                step,
                decrease: value - tv,
            });
        }
        step *= 0.5;
    }
    None
}

/// Fallback when the gradient step stalls on residual kinks: samples
/// gradients just across the kinks and steps along the minimum-norm element
/// of their convex hull, which runs along the kinks.
fn kink_step<P: AlmProblem>(p: &P, z: &[f64], grad: &[f64], value: f64, step: f64, lambda: &[f64], mu: f64) -> Option<Move> {
    // frozen KL coordinates sit at -inf
    let zn = z.iter().filter(|v| v.is_finite()).map(|v| v * v).sum::<f64>().sqrt();
    let mut bundle = vec![grad.to_vec()];
    let mut dir = grad.to_vec();
    for _ in 0..KINK_SAMPLES {
        let dn = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        if dn <= 1e-14 {
            break;
        }
        let eps = 1e-11 * (1.0 + zn) / dn;
        let across: Vec<f64> = z.iter().zip(&dir).map(|(zi, di)| zi - eps * di).collect();
        let (_, g) = lagrangian_grad(p, &across, lambda, mu);
        if !all_finite(&g) {
            break;
        }
        bundle.push(g);
        let w = min_norm_weights(&bundle);
        dir = (0..z.len()).map(|j| bundle.iter().zip(&w).map(|(b, wi)| wi * b[j]).sum()).collect();
        if let Some(m) = backtrack(p, z, &dir, value, step, KINK_SHRINK * step, lambda, mu) {
            return Some(m);
        }
    }
    backtrack(p, z, &dir, value, KINK_SHRINK * step, 1e-18, lambda, mu)
}

/// Convex weights of the minimum-norm point in the hull of `vectors`, by
/// enumerating supports. Meant for a handful of vectors.
fn min_norm_weights(vectors: &[Vec<f64>]) -> Vec<f64> {
    let m = vectors.len();
    let gram: Vec<Vec<f64>> = vectors
        .iter()
        .map(|a| vectors.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect())
        .collect();
    let mut best = (f64::INFINITY, vec![0.0; m]);
    for mask in 1u32..(1 << m) {
        let support: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = support.len();
        // [G_S 1; 1^T 0] [w; nu] = [0; 1]
        let mut a = vec![vec![0.0; k + 2]; k + 1];
        for (r, &i) in support.iter().enumerate() {
            for (c, &j) in support.iter().enumerate() {
                a[r][c] = gram[i][j];
            }
            a[r][k] = 1.0;
            a[k][r] = 1.0;
        }
        a[k][k + 1] = 1.0;
        let Some(sol) = solve_dense(a) else { continue };
        if sol[..k].iter().any(|w| *w < -1e-12) {
            continue;
        }
        let mut w = vec![0.0; m];
        for (r, &i) in support.iter().enumerate() {
            w[i] = sol[r].max(0.0);
        }
        let norm2: f64 = (0..m).map(|i| (0..m).map(|j| w[i] * w[j] * gram[i][j]).sum::<f64>()).sum();
        if norm2 < best.0 {
            best = (norm2, w);
        }
    }
    best.1
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_dense(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    let scale = a.iter().flat_map(|r| r[..n].iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (upper, lower) = a.split_at_mut(row);
            for (dst, src) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *dst -= f * src;
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (a[row][n] - s) / a[row][row];
    }
    Some(x)
}

/// Backtracking below this fraction of the trial step triggers [`kink_step`].
const KINK_SHRINK: f64 = 1e-3;

/// Gradient samples drawn by [`kink_step`].
const KINK_SAMPLES: usize = 4;

/// Inner iterations stop once a step no longer lowers the Lagrangian by a
/// representable amount.
const INNER_RTOL: f64 = 1e-18;

/// Runs the outer/inner loops from `z0`. Never fails on non-convergence;
/// the outcome carries the flag and the best iterate.
pub fn solve_alm<P: AlmProblem>(p: &mut P, z0: Vec<f64>, cfg: &AlmConfig, warm: Option<&WarmState>) -> Result<AlmOutcome> {
    cfg.validate()?;
    let n = p.num_constraints();
    let mut lambda = match warm {
        Some(w) if w.lambda.len() == n => w.lambda.clone(),
        _ => vec![cfg.lambda0; n],
    };
    let mut mu = cfg.mu0;
    let mut z = z0;
    let r0 = p.residuals(&z);
    let agg0: f64 = r0.iter().sum();
    if p.accept(&z, &r0, cfg.delta) {
        return Ok(AlmOutcome {
            best_z: z.clone(),
            z,
            aggregate: agg0,
            outer_iterations: 0,
            inner_iterations: 0,
            converged: true,
            best_aggregate: agg0,
            warm: WarmState { lambda, mu },
        });
    }
    let max_step = cfg.gamma * 1e4;
    let mut best_z = z.clone();
    let mut best_aggregate = f64::INFINITY;
    let mut inner_total = 0;
    let mut aggregate = agg0;
    for outer in 1..=cfg.max_outer_iter {
        p.begin_outer(outer);
        let mut step = cfg.gamma;
        let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
        for _ in 0..cfg.max_inner_iter {
            let (value, grad) = lagrangian_grad(p, &z, &lambda, mu);
            if !value.is_finite() || !all_finite(&grad) {
                return Err(Error::NonFinite("augmented Lagrangian gradient"));
            }
            let gn2: f64 = grad.iter().map(|g| g * g).sum();
            if gn2 <= 1e-28 {
                break;
            }
            inner_total += 1;
            if let Some((z_prev, g_prev)) = &prev {
                let (mut ss, mut sy) = (0.0, 0.0);
                for j in 0..z.len() {
                    let (sj, yj) = (z[j] - z_prev[j], grad[j] - g_prev[j]);
                    ss += sj * sj;
                    sy += sj * yj;
                }
                if sy > 0.0 && ss > 0.0 {
                    step = (ss / sy).min(max_step);
                }
            }
            prev = Some((z.clone(), grad.clone()));
            let mut moved = backtrack(p, &z, &grad, value, step, 1e-18, &lambda, mu);
            // A collapsed step means the gradient step keeps crossing a kink.
            if moved.as_ref().is_none_or(|m| m.step < KINK_SHRINK * step) {
                let along = kink_step(p, &z, &grad, value, step.max(cfg.gamma), &lambda, mu);
                if along.as_ref().map_or(0.0, |m| m.decrease) > moved.as_ref().map_or(0.0, |m| m.decrease) {
                    moved = along;
                    prev = None;
                }
            }
            match moved {
                Some(m) if m.decrease > INNER_RTOL * (1.0 + value.abs()) => {
                    z = m.z;
                    step = m.step;
                }
                _ => break,
            }
            step = (step * 2.0).min(max_step);
        }
        let r = p.residuals(&z);
        aggregate = r.iter().sum();
        if aggregate < best_aggregate {
            best_aggregate = aggregate;
            best_z = z.clone();
        }
        if p.accept(&z, &r, cfg.delta) {
            return Ok(AlmOutcome {
                best_z: z.clone(),
                z,
                aggregate,
                outer_iterations: outer,
                inner_iterations: inner_total,
                converged: true,
                best_aggregate: aggregate,
                warm: WarmState { lambda, mu },
            });
        }
        for (li, ri) in lambda.iter_mut().zip(&r) {
            *li += mu * ri;
        }
        mu = (cfg.alpha * mu).min(cfg.mu_max);
    }
    Ok(AlmOutcome {
        z,
        aggregate,
        outer_iterations: cfg.max_outer_iter,
        inner_iterations: inner_total,
        converged: false,
        best_z,
        best_aggregate,
        warm: WarmState { lambda, mu },
    })
}

/// Divergence measured by the projection.
#[derive(Debug, Clone, PartialEq)]
pub enum Cost {
    /// `0.5 * ||y - x||^2`
    SquaredEuclidean,
    /// `sum_rows KL(x_row || y_row)` over consecutive rows of length
    /// `vocab`, optimized over logits. A `frozen` token keeps zero
    /// probability in every row.
    Kl { vocab: usize, frozen: Option<usize> },
}

struct VectorProblem<'a> {
    x: &'a [f64],
    cs: &'a ConstraintSet,
    cost: &'a Cost,
}

impl VectorProblem<'_> {
    fn point(&self, z: &[f64]) -> Vec<f64> {
        match self.cost {
            Cost::SquaredEuclidean => z.to_vec(),
            Cost::Kl { vocab, .. } => rows_softmax(z, *vocab),
        }
    }
}

/// Row-wise softmax of flat logits.
pub(crate) fn rows_softmax(z: &[f64], vocab: usize) -> Vec<f64> {
    z.chunks(vocab)
        .flat_map(|row| {
            let lse = logsumexp(row);
            row.iter().map(move |v| (v - lse).exp())
        })
        .collect()
}

/// Pulls a gradient with respect to probabilities `y = softmax(z)` back to
/// the logits: `y * (g - <y, g>)` per row.
pub(crate) fn softmax_pullback(y: &[f64], g: &[f64], vocab: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len());
    for (yr, gr) in y.chunks(vocab).zip(g.chunks(vocab)) {
        let mean: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        out.extend(yr.iter().zip(gr).map(|(a, b)| a * (b - mean)));
    }
    out
}

pub(crate) fn kl_rows(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .filter(|(xi, _)| **xi > 0.0)
        .map(|(xi, yi)| xi * (xi.ln() - yi.max(PROB_FLOOR).ln()))
        .sum()
}

impl AlmProblem for VectorProblem<'_> {
    fn num_constraints(&self) -> usize {
        self.cs.num_parts()
    }

    fn objective(&self, z: &[f64]) -> (f64, Vec<f64>) {
        match self.cost {
            Cost::SquaredEuclidean => {
                let g: Vec<f64> = z.iter().zip(self.x).map(|(a, b)| a - b).collect();
                (0.5 * g.iter().map(|v| v * v).sum::<f64>(), g)
            }
            Cost::Kl { vocab, frozen } => {
                let y = rows_softmax(z, *vocab);
                let mut g: Vec<f64> = y.iter().zip(self.x).map(|(a, b)| a - b).collect();
                if let Some(f) = frozen {
                    g.iter_mut().skip(*f).step_by(*vocab).for_each(|v| *v = 0.0);
                }
                (kl_rows(self.x, &y), g)
            }
        }
    }

    fn residuals(&self, z: &[f64]) -> Vec<f64> {
        self.cs.residual_parts(&self.point(z))
    }

    fn penalty_gradient(&self, z: &[f64], weights: &[f64]) -> Vec<f64> {
        let y = self.point(z);
        let g = self.cs.weighted_gradient(&y, weights);
        match self.cost {
            Cost::SquaredEuclidean => g,
            Cost::Kl { vocab, frozen } => {
                let mut gz = softmax_pullback(&y, &g, *vocab);
                if let Some(f) = frozen {
                    gz.iter_mut().skip(*f).step_by(*vocab).for_each(|v| *v = 0.0);
                }
                gz
            }
        }
    }

    fn accept(&self, z: &[f64], residuals: &[f64], delta: f64) -> bool {
        residuals.iter().sum::<f64>() <= delta && self.cs.is_satisfied(&self.point(z))
    }
}

/// Projects `x` onto the constraint set under `cost`.
///
/// A feasible `x` is returned unchanged with zero iterations. Failure to
/// converge yields [`Error::NonConvergence`] carrying the best iterate.
pub fn alm_project(x: &[f64], cs: &ConstraintSet, cost: &Cost, cfg: &AlmConfig, warm: Option<&WarmState>) -> Result<ProjectionResult> {
    if !all_finite(x) {
        return Err(Error::NonFinite("projection input"));
    }
    let z0 = match cost {
        Cost::SquaredEuclidean => x.to_vec(),
        Cost::Kl { vocab, frozen } => {
            if *vocab == 0 || !x.len().is_multiple_of(*vocab) {
                return Err(Error::DimensionMismatch {
                    expected: vocab * (x.len() / vocab.max(&1)),
                    actual: x.len(),
                });
            }
            for row in x.chunks(*vocab) {
                crate::numerics::check_simplex(row)?;
            }
            x.iter()
                .enumerate()
                .map(|(i, v)| {
                    if Some(i % vocab) == *frozen {
                        f64::NEG_INFINITY
                    } else {
                        v.max(PROB_FLOOR).ln()
                    }
                })
                .collect()
        }
    };
    let residual0 = cs.aggregate_residual(x);
    if residual0 <= cfg.delta && cs.is_satisfied(x) {
        cfg.validate()?;
        return Ok(ProjectionResult {
            point: x.to_vec(),
            residual_final: residual0,
            iterations_used: 0,
            inner_iterations: 0,
            converged: true,
            warm: warm.cloned().unwrap_or_else(|| WarmState {
                lambda: vec![cfg.lambda0; cs.num_parts()],
                mu: cfg.mu0,
            }),
        });
    }
    let mut problem = VectorProblem { x, cs, cost };
    let out = solve_alm(&mut problem, z0, cfg, warm)?;
    if !out.converged {
        return Err(Error::NonConvergence {
            best: problem.point(&out.best_z),
            candidate: x.to_vec(),
            residual: out.best_aggregate,
            outer_iterations: out.outer_iterations,
        });
    }
    Ok(ProjectionResult {
        point: problem.point(&out.z),
        residual_final: out.aggregate,
        iterations_used: out.outer_iterations,
        inner_iterations: out.inner_iterations,
        converged: true,
        warm: out.warm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{distance, SeededRng};
    use crate::projections::{project_halfspace, residual_linear, BoxConstraint, Constraint};

    #[test]
    fn feasible_start_is_untouched() {
        let cs = ConstraintSet::new().with(residual_linear(vec![1.0, 0.0], 1.0).unwrap());
        let r = alm_project(&[0.5, 3.0], &cs, &Cost::SquaredEuclidean, &AlmConfig::default(), None).unwrap();
        assert_eq!(r.point, vec![0.5, 3.0]);
        assert_eq!(r.iterations_used, 0);
        assert!(r.converged);
    }

    #[test]
    fn halfspace_matches_closed_form() {
        let mut rng = SeededRng::new(3);
        for _ in 0..50 {
            let a = rng.normal_vec(3);
            let b = rng.normal();
            let x: Vec<f64> = rng.normal_vec(3).into_iter().map(|v| 3.0 * v).collect();
            let c = residual_linear(a.clone(), b).unwrap();
            let cs = ConstraintSet::new().with(c.clone());
            let r = alm_project(&x, &cs, &Cost::SquaredEuclidean, &AlmConfig::default(), None).unwrap();
            let exact = project_halfspace(&x, &a, b).unwrap();
            assert!(distance(&r.point, &exact) <= 1e-4, "{:?} vs {:?}", r.point, exact);
            assert!(c.is_satisfied(&r.point));
        }
    }

    #[test]
    fn box_matches_clamp() {
        let mut rng = SeededRng::new(4);
        let b = BoxConstraint::uniform(4, -1.0, 1.0).unwrap();
        let cs = ConstraintSet::new().with(b.clone());
        for _ in 0..20 {
            let x: Vec<f64> = rng.normal_vec(4).into_iter().map(|v| 2.0 * v).collect();
            let r = alm_project(&x, &cs, &Cost::SquaredEuclidean, &AlmConfig::default(), None).unwrap();
            assert!(
                distance(&r.point, &b.project_exact(&x).unwrap()) <= 1e-4,
                "{:?} {:?} {:?}",
                x,
                r.point,
                r.iterations_used
            );
        }
    }

    #[test]
    fn kl_cost_caps_first_coordinate() {
        // y_1 <= c has KL projection y_1 = c, others rescaled by (1-c)/(1-x_1).
        let x = [0.7, 0.2, 0.1];
        let c = 0.4;
        let cs = ConstraintSet::new().with(residual_linear(vec![1.0, 0.0, 0.0], c).unwrap());
        let r = alm_project(&x, &cs, &Cost::Kl { vocab: 3, frozen: None }, &AlmConfig::default(), None).unwrap();
        let scale = (1.0 - c) / (1.0 - x[0]);
        let oracle = [c, x[1] * scale, x[2] * scale];
        assert!(distance(&r.point, &oracle) < 1e-4, "{:?}", r.point);
    }

    #[test]
    fn infeasible_set_reports_non_convergence() {
        let cs = ConstraintSet::new()
            .with(residual_linear(vec![1.0], 0.0).unwrap())
            .with(residual_linear(vec![-1.0], -1.0).unwrap());
        let cfg = AlmConfig {
            max_outer_iter: 5,
            ..AlmConfig::default()
        };
        let err = alm_project(&[3.0], &cs, &Cost::SquaredEuclidean, &cfg, None).unwrap_err();
        match err {
            Error::NonConvergence {
                candidate,
                outer_iterations,
                ..
            } => {
                assert_eq!(candidate, vec![3.0]);
                assert_eq!(outer_iterations, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let cfg = AlmConfig {
            alpha: 1.0,
            ..AlmConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(AlmConfig::default().validate().is_ok());
    }
}
