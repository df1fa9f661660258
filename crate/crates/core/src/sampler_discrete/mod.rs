//! Discrete diffusion over token sequences: forward corruption, masked and
//! uniform reverse steps, and constrained sampling with KL projections of
//! the predicted rows.

mod constraint;
mod projection;
mod sequence;
pub mod table;

pub use constraint::{SequenceConstraint, SequenceConstraintSet};
pub use projection::{
    gumbel_softmax, gumbel_softmax_with, kl_project_sequence, kl_project_sequence_with, GumbelConfig, SequenceProjectionScope,
};
pub use sequence::{decode_argmax, CategoricalSequence, DiscreteNoiseSpec, NoiseKind};

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints_domain::best_first_flips;
use crate::error::{Error, Result};
use crate::models::{DiscreteDenoiser, NoiseSchedule};
use crate::numerics::{SeededRng, SimplexRow};
use crate::projections::{AlmConfig, WarmState};

/// `q(x_t | x_0) = Cat((1 - beta) x_0 + beta nu)` row by row.
pub fn forward_marginal(x0: &CategoricalSequence, noise: &DiscreteNoiseSpec, beta: f64) -> Result<CategoricalSequence> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta {beta} outside [0, 1]")));
    }
    if x0.vocab() != noise.vocab {
        return Err(Error::DimensionMismatch {
            expected: noise.vocab,
            actual: x0.vocab(),
        });
    }
    let nu = noise.nu();
    let rows = x0
        .rows()
        .iter()
        .map(|r| {
            let mixed: Vec<f64> = r
                .as_slice()
                .iter()
                .zip(nu.as_slice())
                .map(|(p, n)| (1.0 - beta) * p + beta * n)
                .collect();
            SimplexRow::from_weights(mixed)
        })
        .collect::<Result<Vec<_>>>()?;
    CategoricalSequence::new(rows)
}

fn check_state(xt: &CategoricalSequence, d: &DiscreteDenoiser, sched: &NoiseSchedule, t: usize) -> Result<()> {
    sched.eval(t)?;
    if !xt.is_one_hot() {
        return Err(Error::InvalidArgument("reverse steps need one-hot (sampled) rows".into()));
    }
    if xt.len() != d.len() || xt.vocab() != d.noise().vocab {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            actual: xt.len(),
        });
    }
    Ok(())
}

/// Draws a data token from `row`, ignoring any mass on the mask token.
fn draw_data_token(row: &[f64], noise: &DiscreteNoiseSpec, rng: &mut SeededRng) -> usize {
    let mut w = row.to_vec();
    if let Some(m) = noise.mask_token {
        w[m] = 0.0;
    }
    if w.iter().sum::<f64>() <= 0.0 {
        w = (0..w.len()).map(|v| noise.is_data_token(v) as u8 as f64).collect();
    }
    rng.categorical(&w)
}

/// Masked positions that unmask at step `t`, each with probability
/// `(beta(t) - beta(t-1)) / beta(t)`, in position order.
fn unmask_draws(tokens: &[usize], noise: &DiscreteNoiseSpec, sched: &NoiseSchedule, t: usize, rng: &mut SeededRng) -> Vec<usize> {
    let (bt, bs) = (sched.beta(t), sched.beta(t - 1));
    let p = if bt > 0.0 { (bt - bs) / bt } else { 1.0 };
    tokens
        .iter()
        .enumerate()
        .filter(|(_, &tok)| Some(tok) == noise.mask_token)
        .filter_map(|(i, _)| (rng.uniform() < p).then_some(i))
        .collect()
}

/// One reverse step under absorbing (mask) noise.
///
/// Unmasked positions are copied. Each masked position unmasks with
/// probability `(beta(t) - beta(t-1)) / beta(t)`, drawing its token from the
/// denoiser's row; otherwise it stays masked. The denoiser is queried only
/// when some position unmasks.
pub fn reverse_step_masked(
    xt: &CategoricalSequence,
    d: &DiscreteDenoiser,
    sched: &NoiseSchedule,
    t: usize,
    rng: &mut SeededRng,
) -> Result<CategoricalSequence> {
    check_state(xt, d, sched, t)?;
    let noise = d.noise();
    if noise.kind != NoiseKind::Mask {
        return Err(Error::InvalidArgument("masked reverse step needs mask noise".into()));
    }
    let mut tokens = xt.decode();
    let unmask = unmask_draws(&tokens, noise, sched, t, rng);
    if unmask.is_empty() {
        return Ok(xt.clone());
    }
    let rows = d.predict(xt, t)?;
    for i in unmask {
        tokens[i] = draw_data_token(rows[i].as_slice(), noise, rng);
    }
    CategoricalSequence::from_tokens(&tokens, noise.vocab)
}

/// Distribution of `x_{t-1}` at one position under uniform noise, given the
/// current token `current` and the denoiser's clean-token row `pred`:
/// `sum_a pred_a q(x_{t-1} | x_t = current, x_0 = a)`.
pub fn uniform_posterior_row(pred: &[f64], current: usize, beta_t: f64, beta_s: f64) -> Vec<f64> {
    let v = pred.len();
    let vf = v as f64;
    // one-step keep probability from level s to level t
    let keep = if beta_s < 1.0 { (1.0 - beta_t) / (1.0 - beta_s) } else { 1.0 };
    let step_lik = |k: usize| keep * ((k == current) as u8 as f64) + (1.0 - keep) / vf;
    let mut out = vec![0.0; v];
    for (a, &pa) in pred.iter().enumerate() {
        if pa == 0.0 {
            continue;
        }
        let weights: Vec<f64> = (0..v)
            .map(|k| step_lik(k) * ((1.0 - beta_s) * ((k == a) as u8 as f64) + beta_s / vf))
            .collect();
        let z: f64 = weights.iter().sum();
        if z <= 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(&weights) {
            *o += pa * w / z;
        }
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|o| *o /= total);
    out
}

fn uniform_transition(tokens: &[usize], rows: &[SimplexRow], sched: &NoiseSchedule, t: usize, rng: &mut SeededRng) -> Vec<usize> {
    let (bt, bs) = (sched.beta(t), sched.beta(t - 1));
    tokens
        .iter()
        .zip(rows)
        .map(|(&cur, row)| rng.categorical(&uniform_posterior_row(row.as_slice(), cur, bt, bs)))
        .collect()
}

/// One reverse step under uniform noise: every position is resampled from
/// the exact categorical posterior mixed over the denoiser's prediction.
pub fn reverse_step_uniform(
    xt: &CategoricalSequence,
    d: &DiscreteDenoiser,
    sched: &NoiseSchedule,
    t: usize,
    rng: &mut SeededRng,
) -> Result<CategoricalSequence> {
    check_state(xt, d, sched, t)?;
    if d.noise().kind != NoiseKind::Uniform {
        return Err(Error::InvalidArgument("uniform reverse step needs uniform noise".into()));
    }
    let rows = d.predict(xt, t)?;
    let tokens = uniform_transition(&xt.decode(), &rows, sched, t, rng);
    CategoricalSequence::from_tokens(&tokens, xt.vocab())
}

/// Where the discrete sampler projects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscretePolicy {
    /// Project predicted rows at every step and certify the final sequence.
    EveryStep,
    /// Certify the final sequence only.
    FinalOnly,
    Never,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSamplerOptions {
    pub policy: DiscretePolicy,
    pub alm: AlmConfig,
    pub gumbel: GumbelConfig,
    pub max_retries: usize,
    /// Node budget of the final best-first certificate search.
    pub search_budget: usize,
}

impl Default for DiscreteSamplerOptions {
    fn default() -> Self {
        Self {
            policy: DiscretePolicy::EveryStep,
            alm: AlmConfig {
                max_inner_iter: 50,
                max_outer_iter: 20,
                ..AlmConfig::default()
            },
            gumbel: GumbelConfig::default(),
            max_retries: crate::sampler_continuous::DEFAULT_MAX_RETRIES,
            search_budget: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteRun {
    pub samples: Vec<Vec<usize>>,
    /// Decoded chain outputs before the final certificate.
    pub raw: Vec<Vec<usize>>,
    /// Samples changed by the certificate step.
    pub repaired: usize,
    /// Per-step projections that did not converge (the unprojected rows were
    /// used instead).
    pub projection_failures: usize,
    pub failed_chains: usize,
}

struct ChainResult {
    tokens: Vec<usize>,
    /// Row each position was last drawn from.
    source_rows: Vec<Vec<f64>>,
    projection_failures: usize,
}

fn run_discrete_chain(
    d: &DiscreteDenoiser,
    sched: &NoiseSchedule,
    cs: &SequenceConstraintSet,
    opts: &DiscreteSamplerOptions,
    rng: &mut SeededRng,
) -> Result<ChainResult> {
    let noise = d.noise();
    let len = d.len();
    let vocab = noise.vocab;
    let mut tokens: Vec<usize> = match noise.kind {
        NoiseKind::Mask => vec![noise.mask_token.unwrap(); len],
        NoiseKind::Uniform => (0..len).map(|_| rng.below(vocab)).collect(),
    };
    let mut source_rows = vec![SimplexRow::uniform(vocab).into_inner(); len];
    let mut failures = 0;
    let mut warm: Option<WarmState> = None;
    let project = opts.policy == DiscretePolicy::EveryStep && !cs.is_empty();
    for t in (1..=sched.steps).rev() {
        let unmask = match noise.kind {
            NoiseKind::Mask => {
                let u = unmask_draws(&tokens, noise, sched, t, rng);
                if u.is_empty() {
                    continue;
                }
                u
            }
            NoiseKind::Uniform => Vec::new(),
        };
        let xt = CategoricalSequence::from_tokens(&tokens, vocab)?;
        let mut rows = d.predict(&xt, t)?;
        if project {
            let scope = SequenceProjectionScope {
                fixed: tokens
                    .iter()
                    .map(|&tok| Some(tok) != noise.mask_token && noise.kind == NoiseKind::Mask)
                    .collect(),
                frozen: noise.mask_token,
            };
            let pred = CategoricalSequence::new(rows.clone())?;
            match kl_project_sequence_with(&pred, cs, &opts.alm, opts.gumbel.temperature, &scope, rng, warm.as_ref()) {
                Ok(res) => {
                    rows = CategoricalSequence::from_flat(&res.point, vocab)?.into_rows();
                    warm = Some(res.warm);
                }
                Err(Error::NonConvergence { .. }) => failures += 1,
                Err(e) => return Err(e),
            }
        }
        match noise.kind {
            NoiseKind::Mask => {
                for i in unmask {
                    tokens[i] = draw_data_token(rows[i].as_slice(), noise, rng);
                    source_rows[i] = rows[i].as_slice().to_vec();
                }
            }
            NoiseKind::Uniform => {
                tokens = uniform_transition(&tokens, &rows, sched, t, rng);
                source_rows = rows.iter().map(|r| r.as_slice().to_vec()).collect();
            }
        }
    }
    Ok(ChainResult {
        tokens,
        source_rows,
        projection_failures: failures,
    })
}

/// Rows reshaped so that `tokens` is their argmax: the current token swaps
/// probability with the row maximum, and exact ties are nudged. Mask-token
/// mass is removed.
fn certificate_rows(tokens: &[usize], rows: &[Vec<f64>], noise: &DiscreteNoiseSpec) -> Vec<Vec<f64>> {
    tokens
        .iter()
        .zip(rows)
        .map(|(&tok, row)| {
            let mut r = row.clone();
            if let Some(m) = noise.mask_token {
                r[m] = 0.0;
            }
            let top = crate::numerics::argmax(&r);
            r.swap(top, tok);
            let max = r[tok];
            for (v, p) in r.iter_mut().enumerate() {
                if v != tok && *p >= max {
                    *p = max * (1.0 - 1e-9);
                }
            }
            if r[tok] == 0.0 {
                r[tok] = 1.0;
            }
            let total: f64 = r.iter().sum();
            r.iter_mut().for_each(|p| *p /= total);
            r
        })
        .collect()
}

fn certify(
    chain: &ChainResult,
    cs: &SequenceConstraintSet,
    noise: &DiscreteNoiseSpec,
    emitted: &HashSet<Vec<usize>>,
    budget: usize,
) -> Option<Vec<usize>> {
    let unique = cs.requires_unique();
    let accept = |s: &[usize]| cs.holds(s) && !(unique && emitted.contains(s));
    if accept(&chain.tokens) {
        return Some(chain.tokens.clone());
    }
    let rows = certificate_rows(&chain.tokens, &chain.source_rows, noise);
    let allowed: Vec<bool> = (0..noise.vocab).map(|v| noise.is_data_token(v)).collect();
    if let Some(found) = best_first_flips(&rows, &allowed, accept, budget) {
        return Some(found);
    }
    let mut tokens = chain.tokens.clone();
    for c in cs.members() {
        if let Some(fixed) = c.repair(&tokens) {
            tokens = fixed;
        }
    }
    accept(&tokens).then_some(tokens)
}

/// Runs `n` reverse chains from the all-`nu` state (chain `i` seeded by
/// `SeededRng::derived(seed, i)`, run concurrently) and certifies their
/// decoded outputs in chain order.
///
/// The certificate first searches for the cheapest feasible token flips
/// under the chain's own probabilities, then falls back to the constraints'
/// exact repairs. Failed chains restart with fresh noise up to
/// `max_retries` times.
pub fn sample_discrete_with(
    d: &DiscreteDenoiser,
    sched: &NoiseSchedule,
    cs: &SequenceConstraintSet,
    opts: &DiscreteSamplerOptions,
    n: usize,
    seed: u64,
) -> Result<DiscreteRun> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if d.schedule() != sched {
        return Err(Error::InvalidArgument("denoiser was built for a different schedule".into()));
    }
    opts.alm.validate()?;
    opts.gumbel.validate()?;
    let noise = d.noise().clone();
    let attempts = opts.max_retries + 1;
    // every attempt of chain i draws from its own derived stream
    let chains: Vec<Vec<ChainResult>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeededRng::derived(seed, i);
            let first = run_discrete_chain(d, sched, cs, opts, &mut rng)?;
            Ok(vec![first])
        })
        .collect::<Result<_>>()?;
    let certify_on = opts.policy != DiscretePolicy::Never;
    let mut emitted: HashSet<Vec<usize>> = HashSet::new();
    let mut run = DiscreteRun {
        samples: Vec::with_capacity(n),
        raw: Vec::with_capacity(n),
        repaired: 0,
        projection_failures: 0,
        failed_chains: 0,
    };
    for (i, mut tries) in chains.into_iter().enumerate() {
        let mut rng = SeededRng::derived(seed, i as u64).fork();
        let mut attempt = 0;
        loop {
            let chain = tries.last().unwrap();
            run.projection_failures += chain.projection_failures;
            if attempt == 0 {
                run.raw.push(chain.tokens.clone());
            }
            let out = if certify_on {
                certify(chain, cs, &noise, &emitted, opts.search_budget)
            } else {
                Some(chain.tokens.clone())
            };
            if let Some(tokens) = out {
                if tokens != chain.tokens {
                    run.repaired += 1;
                }
                emitted.insert(tokens.clone());
                run.samples.push(tokens);
                break;
            }
            attempt += 1;
            if attempt >= attempts {
                run.failed_chains += 1;
                break;
            }
            tries.push(run_discrete_chain(d, sched, cs, opts, &mut rng)?);
        }
    }
    Ok(run)
}

/// Constrained discrete sampling with per-step KL projection and a final
/// certificate; every returned sequence satisfies `cs`.
#[allow(clippy::too_many_arguments)]
pub fn sample_discrete_constrained(
    d: &DiscreteDenoiser,
    sched: &NoiseSchedule,
    noise: &DiscreteNoiseSpec,
    cs: &SequenceConstraintSet,
    cfg: &AlmConfig,
    gcfg: &GumbelConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if d.noise() != noise {
        return Err(Error::InvalidArgument("noise spec does not match the denoiser".into()));
    }
    let opts = DiscreteSamplerOptions {
        alm: cfg.clone(),
        gumbel: gcfg.clone(),
        ..DiscreteSamplerOptions::default()
    };
    let run = sample_discrete_with(d, sched, cs, &opts, n, seed)?;
    if run.failed_chains > 0 {
        return Err(Error::RetryExhausted {
            failed_chains: run.failed_chains,
        });
    }
    Ok(run.samples)
}
