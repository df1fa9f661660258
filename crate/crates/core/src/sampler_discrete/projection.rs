//! KL projection of probability rows onto sequences whose argmax decoding
//! satisfies a constraint set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, SeededRng, SimplexRow, PROB_FLOOR};
use crate::projections::{kl_rows, rows_softmax, solve_alm, AlmConfig, AlmProblem, ProjectionResult, WarmState};
use crate::sampler_discrete::{CategoricalSequence, SequenceConstraintSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GumbelConfig {
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GumbelConfig {
    fn default() -> Self {
        Self { temperature: 1.0, seed: 0 }
    }
}

impl GumbelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Gumbel temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// `psi(row)_v = softmax((log row_v + g_v) / T)` with `g` drawn from `rng`.
/// Row entries are floored at [`PROB_FLOOR`] before the logarithm; exact
/// zeros stay zero.
pub fn gumbel_softmax_with(row: &[f64], temperature: f64, rng: &mut SeededRng) -> SimplexRow {
    let logits: Vec<f64> = row
        .iter()
        .map(|&p| {
            let g = rng.gumbel();
            if p == 0.0 {
                f64::NEG_INFINITY
            } else {
                (p.max(PROB_FLOOR).ln() + g) / temperature
            }
        })
        .collect();
    crate::numerics::softmax(&logits)
}

/// Gumbel-softmax relaxation of one row, noise drawn from `cfg.seed`.
pub fn gumbel_softmax(row: &SimplexRow, cfg: &GumbelConfig) -> SimplexRow {
    let mut rng = SeededRng::new(cfg.seed);
    gumbel_softmax_with(row.as_slice(), cfg.temperature, &mut rng)
}

/// Which positions and tokens the projection may change.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceProjectionScope {
    /// Positions whose rows are held fixed.
    pub fixed: Vec<bool>,
    /// Token kept at zero probability in every free row.
    pub frozen: Option<usize>,
}

struct SequenceProblem<'a> {
    x: &'a [f64],
    vocab: usize,
    fixed: Vec<bool>,
    frozen: Option<usize>,
    cs: &'a SequenceConstraintSet,
    temperature: f64,
    gumbel: Vec<f64>,
    rng: &'a mut SeededRng,
}

impl SequenceProblem<'_> {
    fn is_free(&self, idx: usize) -> bool {
        !self.fixed[idx / self.vocab] && Some(idx % self.vocab) != self.frozen
    }

    fn probs(&self, z: &[f64]) -> Vec<f64> {
        rows_softmax(z, self.vocab)
    }

    fn psi(&self, z: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(z.len());
        for (r, row) in z.chunks(self.vocab).enumerate() {
            if self.fixed[r] {
                out.extend_from_slice(&self.x[r * self.vocab..(r + 1) * self.vocab]);
                continue;
            }
            let shifted: Vec<f64> = row
                .iter()
                .zip(&self.gumbel[r * self.vocab..])
                .map(|(zi, g)| (zi + g) / self.temperature)
                .collect();
            out.extend(crate::numerics::softmax_vec(&shifted));
        }
        out
    }

    fn tokens(&self, z: &[f64]) -> Vec<usize> {
        z.chunks(self.vocab)
            .enumerate()
            .map(|(r, row)| {
                if self.fixed[r] {
                    argmax(&self.x[r * self.vocab..(r + 1) * self.vocab])
                } else {
                    argmax(row)
                }
            })
            .collect()
    }

    fn initial_logits(&self) -> Vec<f64> {
        self.x
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                if Some(i % self.vocab) == self.frozen && !self.fixed[i / self.vocab] {
                    f64::NEG_INFINITY
                } else if self.fixed[i / self.vocab] {
                    if p > 0.0 {
                        p.ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    p.max(PROB_FLOOR).ln()
                }
            })
            .collect()
    }
}

impl AlmProblem for SequenceProblem<'_> {
    fn num_constraints(&self) -> usize {
        self.cs.len()
    }

    fn objective(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let y = self.probs(z);
        let mut value = 0.0;
        let mut grad = vec![0.0; z.len()];
        for r in 0..self.fixed.len() {
            if self.fixed[r] {
                continue;
            }
            let span = r * self.vocab..(r + 1) * self.vocab;
            value += kl_rows(&self.x[span.clone()], &y[span.clone()]);
            for i in span {
                if self.is_free(i) {
                    grad[i] = y[i] - self.x[i];
                }
            }
        }
        (value, grad)
    }

    fn residuals(&self, z: &[f64]) -> Vec<f64> {
        let psi = self.psi(z);
        self.cs.members().iter().map(|c| c.relaxed_residual(&psi, self.vocab)).collect()
    }

    fn penalty_gradient(&self, z: &[f64], weights: &[f64]) -> Vec<f64> {
        let psi = self.psi(z);
        let mut g = vec![0.0; z.len()];
        for (c, &w) in self.cs.members().iter().zip(weights) {
            if w != 0.0 {
                for (gi, di) in g.iter_mut().zip(c.relaxed_gradient(&psi, self.vocab)) {
                    *gi += w * di;
                }
            }
        }
        let mut gz = vec![0.0; z.len()];
        for r in 0..self.fixed.len() {
            if self.fixed[r] {
                continue;
            }
            let span = r * self.vocab..(r + 1) * self.vocab;
            let mean: f64 = psi[span.clone()].iter().zip(&g[span.clone()]).map(|(p, gi)| p * gi).sum();
            for i in span {
                if self.is_free(i) {
                    gz[i] = psi[i] * (g[i] - mean) / self.temperature;
                }
            }
        }
        gz
    }

    fn accept(&self, z: &[f64], _residuals: &[f64], _delta: f64) -> bool {
        self.cs.holds(&self.tokens(z))
    }

    fn begin_outer(&mut self, _outer: usize) {
        for (i, g) in self.gumbel.iter_mut().enumerate() {
            *g = if self.fixed[i / self.vocab] { 0.0 } else { self.rng.gumbel() };
        }
    }
}

fn interpolate(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(&u, &v)| if u == v { u } else { (1.0 - s) * u + s * v })
        .collect()
}

/// [`kl_project_sequence`] with an explicit scope, Gumbel source and warm
/// state.
///
/// After the ALM finds logits whose argmax is feasible, the result is pulled
/// back along the logit segment toward the input to the first feasible
/// point (bisection). The KL cost is convex in the logits, so this never
/// increases it.
pub fn kl_project_sequence_with(
    xt: &CategoricalSequence,
    cs: &SequenceConstraintSet,
    cfg: &AlmConfig,
    temperature: f64,
    scope: &SequenceProjectionScope,
    rng: &mut SeededRng,
    warm: Option<&WarmState>,
) -> Result<ProjectionResult> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument("Gumbel temperature must be positive".into()));
    }
    let vocab = xt.vocab();
    let x = xt.flat();
    let fixed = if scope.fixed.is_empty() {
        vec![false; xt.len()]
    } else if scope.fixed.len() == xt.len() {
        scope.fixed.clone()
    } else {
        return Err(Error::DimensionMismatch {
            expected: xt.len(),
            actual: scope.fixed.len(),
        });
    };
    if cs.holds(&xt.decode()) {
        cfg.validate()?;
        return Ok(ProjectionResult {
            point: x,
            residual_final: 0.0,
            iterations_used: 0,
            inner_iterations: 0,
            converged: true,
            warm: warm.cloned().unwrap_or_default(),
        });
    }
    let mut problem = SequenceProblem {
        x: &x,
        vocab,
        gumbel: vec![0.0; x.len()],
        fixed,
        frozen: scope.frozen,
        cs,
        temperature,
        rng,
    };
    let z0 = problem.initial_logits();
    let out = solve_alm(&mut problem, z0.clone(), cfg, warm)?;
    if !out.converged {
        return Err(Error::NonConvergence {
            best: problem.probs(&out.best_z),
            candidate: x.clone(),
            residual: out.best_aggregate,
            outer_iterations: out.outer_iterations,
        });
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if cs.holds(&problem.tokens(&interpolate(&z0, &out.z, mid))) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let z = interpolate(&z0, &out.z, hi);
    let mut point = problem.probs(&z);
    for (r, &f) in problem.fixed.iter().enumerate() {
        if f {
            point[r * vocab..(r + 1) * vocab].copy_from_slice(&x[r * vocab..(r + 1) * vocab]);
        }
    }
    let residual_final = problem.residuals(&z).iter().sum();
    Ok(ProjectionResult {
        point,
        residual_final,
        iterations_used: out.outer_iterations,
        inner_iterations: out.inner_iterations,
        converged: true,
        warm: out.warm,
    })
}

/// Minimal-KL probability rows whose argmax decoding satisfies `cs`.
///
/// Optimizes logits with the augmented Lagrangian; residuals are evaluated
/// on Gumbel-softmax relaxed rows (fresh noise each outer iteration) and
/// termination requires every hard predicate to hold on the argmax.
pub fn kl_project_sequence(
    xt: &CategoricalSequence,
    cs: &SequenceConstraintSet,
    cfg: &AlmConfig,
    gcfg: &GumbelConfig,
) -> Result<ProjectionResult> {
    gcfg.validate()?;
    let mut rng = SeededRng::new(gcfg.seed);
    kl_project_sequence_with(xt, cs, cfg, gcfg.temperature, &SequenceProjectionScope::default(), &mut rng, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::kl_div;
    use crate::sampler_discrete::SequenceConstraint;

    /// Argmax at `pos` must not be `token`; relaxed residual is the mass on it.
    struct Forbid {
        pos: usize,
        token: usize,
    }

    impl SequenceConstraint for Forbid {
        fn name(&self) -> &str {
            "forbid"
        }
        fn holds(&self, tokens: &[usize]) -> bool {
            tokens[self.pos] != self.token
        }
        fn relaxed_residual(&self, rows: &[f64], vocab: usize) -> f64 {
            rows[self.pos * vocab + self.token]
        }
        fn relaxed_gradient(&self, rows: &[f64], vocab: usize) -> Vec<f64> {
            let mut g = vec![0.0; rows.len()];
            g[self.pos * vocab + self.token] = 1.0;
            g
        }
    }

    fn seq(rows: &[&[f64]]) -> CategoricalSequence {
        CategoricalSequence::new(rows.iter().map(|r| SimplexRow::new(r.to_vec()).unwrap()).collect()).unwrap()
    }

    #[test]
    fn feasible_input_is_returned_as_is() {
        let x = seq(&[&[0.6, 0.4], &[0.3, 0.7]]);
        let cs = SequenceConstraintSet::new().with(Forbid { pos: 0, token: 1 });
        let r = kl_project_sequence(&x, &cs, &AlmConfig::default(), &GumbelConfig::default()).unwrap();
        assert_eq!(r.point, x.flat());
        assert_eq!(r.iterations_used, 0);
    }

    #[test]
    fn forbidden_token_moves_to_cheapest_alternative() {
        let x = seq(&[&[0.1, 0.6, 0.25, 0.05], &[0.7, 0.1, 0.1, 0.1]]);
        let cs = SequenceConstraintSet::new().with(Forbid { pos: 0, token: 1 });
        let r = kl_project_sequence(&x, &cs, &AlmConfig::default(), &GumbelConfig::default()).unwrap();
        let y = CategoricalSequence::from_flat(&r.point, 4).unwrap();
        let tokens = y.decode();
        // brute force: the feasible alternative with the smallest KL to make
        // it tie with token 1 is the one with the largest current mass
        let best_alt = (0..4)
            .filter(|&v| v != 1)
            .min_by(|&a, &b| {
                let cost = |v: usize| {
                    let m = 0.5 * (x.row(0)[v] + x.row(0)[1]);
                    x.row(0)[v] * (x.row(0)[v] / m).ln() + x.row(0)[1] * (x.row(0)[1] / m).ln()
                };
                cost(a).total_cmp(&cost(b))
            })
            .unwrap();
        assert_eq!(tokens[0], best_alt);
        assert_eq!(tokens[1], 0);
    }

    #[test]
    fn two_token_projection_is_grid_optimal() {
        // constraint: position 0 decodes to token 0, i.e. y_0 >= y_1
        let x = seq(&[&[0.3, 0.7]]);
        let cs = SequenceConstraintSet::new().with(Forbid { pos: 0, token: 1 });
        let r = kl_project_sequence(&x, &cs, &AlmConfig::default(), &GumbelConfig::default()).unwrap();
        let ours = kl_div(x.row(0).as_slice(), &r.point).unwrap();
        let grid_best = (500..=1000)
            .map(|k| {
                let y0 = k as f64 / 1000.0;
                kl_div(x.row(0).as_slice(), &[y0, 1.0 - y0]).unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(ours <= grid_best + 1e-9, "{ours} vs {grid_best}");
        assert_eq!(CategoricalSequence::from_flat(&r.point, 2).unwrap().decode(), vec![0]);
    }

    #[test]
    fn gumbel_limits() {
        let row = SimplexRow::new(vec![0.7, 0.2, 0.1]).unwrap();
        let hot = gumbel_softmax(&row, &GumbelConfig { temperature: 1e6, seed: 3 });
        assert!(hot.as_slice().iter().all(|p| (p - 1.0 / 3.0).abs() < 0.01));
        let mut agree = 0;
        for seed in 0..1000 {
            let mut rng = SeededRng::new(seed);
            let mut probe = rng.clone();
            let out = gumbel_softmax_with(row.as_slice(), 0.01, &mut rng);
            let noisy: Vec<f64> = row.as_slice().iter().map(|p| p.ln() + probe.gumbel()).collect();
            if out.argmax() == argmax(&noisy) {
                agree += 1;
            }
            let total: f64 = out.as_slice().iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        assert!(agree >= 999);
    }
}
