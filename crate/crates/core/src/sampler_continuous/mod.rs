//! Annealed Langevin sampling in `R^d`, optionally interleaved with
//! projections onto a constraint set.
//!
//! One reverse step is `x <- x + gamma_t * s(x, t) + sqrt(2 gamma_t) * eps`
//! with `eps ~ N(0, I)`; the projected variant follows it with `P_C`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{NoiseSchedule, ScoreModel};
use crate::numerics::{all_finite, distance, SeededRng};
use crate::projections::{alm_project, AlmConfig, ConstraintSet, Cost, ProjectionResult, WarmState};

/// Retries per step (fresh noise) and chain restarts after a failed
/// projection.
pub const DEFAULT_MAX_RETRIES: usize = 5;

#[derive(Debug, Clone)]
pub struct SamplerState {
    pub x: Vec<f64>,
    pub t: usize,
    pub rng: SeededRng,
}

impl SamplerState {
    /// `x_T ~ N(0, I)`.
    pub fn initial(dim: usize, steps: usize, mut rng: SeededRng) -> Self {
        let x = rng.normal_vec(dim);
        Self { x, t: steps, rng }
    }
}

fn langevin_candidate(state: &mut SamplerState, model: &ScoreModel, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if state.t == 0 {
        return Err(Error::StepOutOfRange { t: 0, steps: sched.steps });
    }
    let (_, gamma) = sched.eval(state.t)?;
    let score = model.score(&state.x, state.t)?;
    let noise_scale = (2.0 * gamma).sqrt();
    let out: Vec<f64> = state
        .x
        .iter()
        .zip(&score)
        .map(|(x, s)| x + gamma * s + noise_scale * state.rng.normal())
        .collect();
    if !all_finite(&out) {
        return Err(Error::NonFinite("reverse step"));
    }
    Ok(out)
}

/// One unconstrained Langevin step; `t` decreases by one.
pub fn reverse_step(mut state: SamplerState, model: &ScoreModel, sched: &NoiseSchedule) -> Result<SamplerState> {
    state.x = langevin_candidate(&mut state, model, sched)?;
    state.t -= 1;
    Ok(state)
}

/// Projection onto `cs`: the closed form when the set has one, otherwise the
/// augmented-Lagrangian solver with Euclidean cost.
pub fn project_point(x: &[f64], cs: &ConstraintSet, cfg: &AlmConfig, warm: Option<&WarmState>) -> Result<ProjectionResult> {
    if let Some(point) = cs.project_exact(x) {
        let residual_final = cs.aggregate_residual(&point);
        return Ok(ProjectionResult {
            converged: cs.is_satisfied(&point),
            point,
            residual_final,
            iterations_used: 0,
            inner_iterations: 0,
            warm: warm.cloned().unwrap_or_default(),
        });
    }
    alm_project(x, cs, &Cost::SquaredEuclidean, cfg, warm)
}

/// A Langevin step followed by projection. On failure the state is left
/// untouched and the error carries the unprojected candidate.
pub fn projected_reverse_step(
    state: SamplerState,
    model: &ScoreModel,
    sched: &NoiseSchedule,
    cs: &ConstraintSet,
    cfg: &AlmConfig,
    warm: Option<&WarmState>,
) -> Result<(SamplerState, ProjectionResult)> {
    let mut next = state;
    let candidate = langevin_candidate(&mut next, model, sched)?;
    let result = project_point(&candidate, cs, cfg, warm)?;
    next.x = result.point.clone();
    next.t -= 1;
    Ok((next, result))
}

/// Which reverse steps are followed by a projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum ProjectionPolicy {
    EveryStep,
    /// Only the last `fraction` of the steps (those with `t <= fraction * T`).
    LastFraction(f64),
    /// A single projection of the final sample.
    FinalOnly,
    Never,
}

impl ProjectionPolicy {
    fn projects_step(&self, t: usize, steps: usize) -> bool {
        match *self {
            Self::EveryStep => true,
            Self::LastFraction(f) => (t as f64) <= f * steps as f64,
            Self::FinalOnly | Self::Never => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub t: usize,
    pub mean_residual: f64,
    pub max_residual: f64,
}

/// Aggregate constraint residual of the reverse-step candidates, one entry
/// per step from `t = T` down to `t = 1`. For projected steps the residual
/// is measured before projection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationTrace {
    pub entries: Vec<TraceEntry>,
}

impl ViolationTrace {
    /// Per-step mean and max over chains; `per_chain[c][k]` is chain `c` at
    /// step `T - k`.
    pub fn from_chains(steps: usize, per_chain: &[Vec<f64>]) -> Self {
        let n = per_chain.len().max(1) as f64;
        let entries = (0..steps)
            .map(|k| {
                let col = per_chain.iter().map(|c| c[k]);
                let mean = col.clone().sum::<f64>() / n;
                let max = col.fold(0.0, f64::max);
                TraceEntry {
                    t: steps - k,
                    mean_residual: mean,
                    max_residual: max,
                }
            })
            .collect();
        Self { entries }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mean_residual,max_residual\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{:e},{:e}", e.t, e.mean_residual, e.max_residual);
        }
        out
    }

    /// Mean residual over the entries with `t <= last`.
    pub fn tail_mean(&self, last: usize) -> f64 {
        let tail: Vec<f64> = self.entries.iter().filter(|e| e.t <= last).map(|e| e.mean_residual).collect();
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerOptions {
    pub policy: ProjectionPolicy,
    pub alm: AlmConfig,
    pub max_retries: usize,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            policy: ProjectionPolicy::EveryStep,
            alm: AlmConfig::default(),
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRun {
    pub samples: Vec<Vec<f64>>,
    pub trace: ViolationTrace,
    /// Step retries and chain restarts summed over all chains.
    pub retries: usize,
    /// Chains that exhausted their retries; their samples are absent.
    pub failed_chains: usize,
}

struct ChainOutput {
    sample: Option<Vec<f64>>,
    residuals: Vec<f64>,
    retries: usize,
}

fn run_chain(
    model: &ScoreModel,
    sched: &NoiseSchedule,
    cs: &ConstraintSet,
    opts: &SamplerOptions,
    mut rng: SeededRng,
) -> Result<ChainOutput> {
    let steps = sched.steps;
    let mut retries = 0;
    let mut residuals = Vec::new();
    'attempt: for _ in 0..=opts.max_retries {
        residuals.clear();
        let mut state = SamplerState::initial(model.dim(), steps, rng.fork());
        let mut warm: Option<WarmState> = None;
        while state.t > 0 {
            let project = opts.policy.projects_step(state.t, steps);
            let mut tries = 0;
            loop {
                let candidate = langevin_candidate(&mut state, model, sched)?;
                residuals.push(cs.aggregate_residual(&candidate));
                if !project {
                    state.x = candidate;
                    break;
                }
                match project_point(&candidate, cs, &opts.alm, warm.as_ref()) {
                    Ok(res) if res.converged => {
                        state.x = res.point;
                        warm = Some(res.warm);
                        break;
                    }
                    Ok(_) | Err(Error::NonConvergence { .. }) => {
                        residuals.pop();
                        retries += 1;
                        tries += 1;
                        if tries > opts.max_retries {
                            continue 'attempt;
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
            state.t -= 1;
        }
        if opts.policy == ProjectionPolicy::FinalOnly {
            match project_point(&state.x, cs, &opts.alm, None) {
                Ok(res) if res.converged => state.x = res.point,
                Ok(_) | Err(Error::NonConvergence { .. }) => {
                    retries += 1;
                    continue 'attempt;
                }
                Err(e) => return Err(e),
            }
        }
        return Ok(ChainOutput {
            sample: Some(state.x),
            residuals,
            retries,
        });
    }
    Ok(ChainOutput {
        sample: None,
        residuals: vec![0.0; steps],
        retries,
    })
}

/// Runs `n_samples` independent chains (chain `i` seeded by
/// `SeededRng::derived(seed, i)`), concurrently, collecting results in chain
/// order. Failed chains are counted, not raised.
pub fn sample_with(
    model: &ScoreModel,
    sched: &NoiseSchedule,
    cs: &ConstraintSet,
    opts: &SamplerOptions,
    n_samples: usize,
    seed: u64,
) -> Result<SampleRun> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    sched.validate()?;
    opts.alm.validate()?;
    let outputs: Vec<ChainOutput> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| run_chain(model, sched, cs, opts, SeededRng::derived(seed, i)))
        .collect::<Result<_>>()?;
    let residuals: Vec<Vec<f64>> = outputs.iter().filter(|o| o.sample.is_some()).map(|o| o.residuals.clone()).collect();
    let trace = ViolationTrace::from_chains(sched.steps, &residuals);
    let retries = outputs.iter().map(|o| o.retries).sum();
    let failed_chains = outputs.iter().filter(|o| o.sample.is_none()).count();
    let samples = outputs.into_iter().filter_map(|o| o.sample).collect();
    Ok(SampleRun {
        samples,
        trace,
        retries,
        failed_chains,
    })
}

/// Projects at every step. Every returned sample satisfies `cs`; if any
/// chain exhausts its retries the whole call fails with
/// [`Error::RetryExhausted`].
pub fn sample_constrained(
    model: &ScoreModel,
    sched: &NoiseSchedule,
    cs: &ConstraintSet,
    cfg: &AlmConfig,
    n_samples: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, ViolationTrace)> {
    let opts = SamplerOptions {
        alm: cfg.clone(),
        ..SamplerOptions::default()
    };
    let run = sample_with(model, sched, cs, &opts, n_samples, seed)?;
    if run.failed_chains > 0 {
        return Err(Error::RetryExhausted {
            failed_chains: run.failed_chains,
        });
    }
    Ok((run.samples, run.trace))
}

/// Mean projection distances per step for paired chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCostCurves {
    /// Step indices, `T` down to `1`.
    pub t: Vec<usize>,
    /// `||x_t - P(x_t)||` along unprojected chains.
    pub free: Vec<f64>,
    /// `||c_t - P(c_t)||` for the candidate `c_t` of projected chains.
    pub interleaved: Vec<f64>,
    /// Final-step projection distance of every projected chain.
    pub final_interleaved: Vec<f64>,
}

/// Runs `n_chains` seed-paired chains with and without per-step projection
/// and records the mean distance each point would move under `P_C`.
/// Needs a constraint set with a closed-form projection.
pub fn projection_cost_curves(
    model: &ScoreModel,
    sched: &NoiseSchedule,
    cs: &ConstraintSet,
    n_chains: usize,
    seed: u64,
) -> Result<ProjectionCostCurves> {
    if cs.project_exact(&vec![0.0; model.dim()]).is_none() {
        return Err(Error::InvalidArgument("projection cost curves need an exact projection".into()));
    }
    let steps = sched.steps;
    let per_chain: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chains as u64)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut free = SamplerState::initial(model.dim(), steps, SeededRng::derived(seed, i));
            let mut inter = free.clone();
            let mut d_free = Vec::with_capacity(steps);
            let mut d_inter = Vec::with_capacity(steps);
            while free.t > 0 {
                free = reverse_step(free, model, sched)?;
                let p = cs.project_exact(&free.x).expect("checked above");
                d_free.push(distance(&free.x, &p));
                let candidate = langevin_candidate(&mut inter, model, sched)?;
                let p = cs.project_exact(&candidate).expect("checked above");
                d_inter.push(distance(&candidate, &p));
                inter.x = p;
                inter.t -= 1;
            }
            Ok((d_free, d_inter))
        })
        .collect::<Result<_>>()?;
    let n = n_chains.max(1) as f64;
    let mean_at = |k: usize, free: bool| per_chain.iter().map(|c| if free { c.0[k] } else { c.1[k] }).sum::<f64>() / n;
    Ok(ProjectionCostCurves {
        t: (1..=steps).rev().collect(),
        free: (0..steps).map(|k| mean_at(k, true)).collect(),
        interleaved: (0..steps).map(|k| mean_at(k, false)).collect(),
        final_interleaved: per_chain.iter().map(|c| *c.1.last().unwrap_or(&0.0)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DenoiserMlp, GaussianMixture};
    use crate::projections::residual_linear;

    fn gaussian(mean: Vec<f64>, var: f64, steps: usize) -> (ScoreModel, NoiseSchedule) {
        let sched = NoiseSchedule::linear(steps);
        (
            ScoreModel::analytic(GaussianMixture::isotropic(mean, var).unwrap(), sched.clone()),
            sched,
        )
    }

    #[test]
    fn zero_score_tiny_gamma_leaves_x() {
        let sched = NoiseSchedule::linear(10).with_gamma(1e-300, 1e-300);
        let model = ScoreModel::DenoiserMlp(DenoiserMlp::zeros(2, &[3], sched.clone()));
        let state = SamplerState {
            x: vec![0.25, -1.5],
            t: 10,
            rng: SeededRng::new(0),
        };
        let next = reverse_step(state, &model, &sched).unwrap();
        assert_eq!(next.x, vec![0.25, -1.5]);
        assert_eq!(next.t, 9);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let (model, sched) = gaussian(vec![1.0, 2.0], 0.5, 30);
        let run = |seed| {
            let mut s = SamplerState::initial(2, 30, SeededRng::new(seed));
            while s.t > 0 {
                s = reverse_step(s, &model, &sched).unwrap();
            }
            s.x
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn trivial_set_matches_unprojected_step() {
        let (model, sched) = gaussian(vec![0.0, 0.0], 1.0, 20);
        let s0 = SamplerState::initial(2, 20, SeededRng::new(3));
        let plain = reverse_step(s0.clone(), &model, &sched).unwrap();
        let (proj, res) = projected_reverse_step(s0, &model, &sched, &ConstraintSet::new(), &AlmConfig::default(), None).unwrap();
        assert_eq!(plain.x, proj.x);
        assert!(res.converged);
    }

    #[test]
    fn exact_halfspace_step_is_feasible() {
        let (model, sched) = gaussian(vec![3.0, 0.0], 0.2, 20);
        let cs = ConstraintSet::new().with(residual_linear(vec![1.0, 0.0], 1.0).unwrap());
        let mut s = SamplerState::initial(2, 20, SeededRng::new(5));
        while s.t > 0 {
            let (next, _) = projected_reverse_step(s, &model, &sched, &cs, &AlmConfig::default(), None).unwrap();
            assert!(next.x[0] <= 1.0);
            s = next;
        }
    }

    #[test]
    fn far_field_chains_move_toward_mean() {
        // averaged over many seeds the distance to the mean shrinks
        let (model, sched) = gaussian(vec![0.0, 0.0], 1.0, 50);
        let n = 1000;
        let mut before = 0.0;
        let mut after = 0.0;
        for seed in 0..n {
            let s = SamplerState {
                x: vec![8.0, -6.0],
                t: 50,
                rng: SeededRng::new(seed),
            };
            before += crate::numerics::norm(&s.x);
            let mut s = s;
            for _ in 0..5 {
                s = reverse_step(s, &model, &sched).unwrap();
            }
            after += crate::numerics::norm(&s.x);
        }
        assert!(after / (n as f64) < before / n as f64);
    }

    #[test]
    fn final_only_matches_unconstrained_until_last_projection() {
        let (model, sched) = gaussian(vec![2.0, 0.0], 0.3, 25);
        let cs = ConstraintSet::new().with(residual_linear(vec![1.0, 0.0], 1.5).unwrap());
        let free = SamplerOptions {
            policy: ProjectionPolicy::Never,
            ..SamplerOptions::default()
        };
        let post = SamplerOptions {
            policy: ProjectionPolicy::FinalOnly,
            ..SamplerOptions::default()
        };
        let a = sample_with(&model, &sched, &cs, &free, 40, 9).unwrap();
        let b = sample_with(&model, &sched, &cs, &post, 40, 9).unwrap();
        assert_eq!(a.trace, b.trace);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(&cs.project_exact(x).unwrap(), y);
        }
    }

    #[test]
    fn trace_csv_header() {
        let (model, sched) = gaussian(vec![0.0], 1.0, 3);
        let (_, trace) = sample_constrained(&model, &sched, &ConstraintSet::new(), &AlmConfig::default(), 2, 1).unwrap();
        let csv = trace.to_csv();
        assert!(csv.starts_with("t,mean_residual,max_residual\n3,"));
        assert_eq!(csv.lines().count(), 4);
    }
}
