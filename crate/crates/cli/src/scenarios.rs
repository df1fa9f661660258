//! Scenario construction, sampling and evaluation.
//!
//! Everything a run depends on (maps, datasets, training grids) is rebuilt
//! from the config and seed, so `check_samples` can recompute violations
//! from a samples file without the run that produced it.

use std::collections::BTreeMap;
use std::sync::Arc;

use nsd_core::constraints_domain::{
    collision_constraint, kinematics_constraint, kinematics_rollout, load_rules, negative_count, obstacle_constraint, porosity_constraint,
    surrogate_constraint, AgentTrajectoryBundle, KinematicsSpec, MapFile, NoveltyConstraint, NoveltySet, PatternConstraint, PatternRule,
    PinnedEndpoints, PorosityTarget, SurrogateScorer,
};
use nsd_core::models::{train_denoiser, BigramDenoiser, DiscreteDenoiser, GaussianMixture, ScoreModel, ToyDistribution};
use nsd_core::numerics::{random_directions, sliced_wasserstein_along};
use nsd_core::projections::LinearConstraint;
use nsd_core::sampler_continuous::{sample_with, ProjectionPolicy, SamplerOptions, TraceEntry, ViolationTrace};
use nsd_core::sampler_discrete::table::SequenceFile;
use nsd_core::sampler_discrete::{sample_discrete_with, DiscreteNoiseSpec, DiscretePolicy, DiscreteSamplerOptions, GumbelConfig};
use nsd_core::{ConstraintSet, SeededRng, SequenceConstraintSet, SimplexRow};
use rayon::prelude::*;

use crate::config::{ContinuousPolicy, ExperimentConfig, Mode, Scenario, SequenceModel};
use crate::error::HarnessError;
use crate::metrics::{path_length, sequence_violation_rate, success_rate, unigram_tv, unique_names};
use crate::report::{Fidelity, Samples};

/// A constraint set and the samples checked against it.
type Group = (ConstraintSet, Vec<Vec<f64>>);

// Auxiliary random streams, kept apart from the per-chain streams.
const MAP_STREAM: u64 = 1 << 32;
const CHAIN_SEED_STREAM: u64 = 2 << 32;
const DATA_STREAM: u64 = 3 << 32;
const METRIC_STREAM: u64 = 4 << 32;

fn aux_rng(seed: u64, stream: u64) -> SeededRng {
    SeededRng::derived(seed ^ 0x5eed_5eed_5eed_5eed, stream)
}

/// Chain seed of the `group`-th independent sub-run (a map, a porosity target).
fn group_seed(seed: u64, group: usize) -> u64 {
    aux_rng(seed, CHAIN_SEED_STREAM + group as u64).next_u64()
}

/// Result of sampling one scenario, before report assembly.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    /// Chains requested over all groups (maps, targets).
    pub requested: usize,
    pub samples: Samples,
    pub constraints: Vec<String>,
    pub violations: BTreeMap<String, f64>,
    pub fidelity: Option<Fidelity>,
    pub metrics: BTreeMap<String, f64>,
    pub trace: Option<ViolationTrace>,
    pub retries: usize,
    pub failed_chains: usize,
}

pub fn run_scenario(cfg: &ExperimentConfig) -> Result<ScenarioRun, HarnessError> {
    cfg.validate()?;
    match cfg.scenario {
        Scenario::GmmHalfspace => run_gmm(cfg),
        Scenario::Mapf => run_mapf(cfg),
        Scenario::Porosity => run_porosity(cfg),
        Scenario::Kinematics => run_kinematics(cfg),
        Scenario::SequencePatterns | Scenario::SequenceNovelty | Scenario::SequenceSurrogate => run_sequence(cfg),
    }
}

/// Violation percentages of a samples file, recomputed from the config alone.
pub fn check_samples(cfg: &ExperimentConfig, samples: &Samples) -> Result<BTreeMap<String, f64>, HarnessError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(HarnessError::config("samples", "samples file is empty"));
    }
    match (cfg.scenario.is_discrete(), samples) {
        (true, Samples::Tokens(seqs)) => {
            let ctx = SequenceContext::build(cfg)?;
            Ok(sequence_violation_rate(seqs, &ctx.constraints))
        }
        (false, Samples::Vectors(rows)) => {
            let groups = match cfg.scenario {
                Scenario::GmmHalfspace => vec![(gmm_constraints(cfg)?, rows.clone())],
                Scenario::Mapf => mapf_groups(cfg, rows)?,
                Scenario::Porosity => porosity_groups(cfg, rows)?,
                Scenario::Kinematics => vec![(kinematics_set(cfg)?.1, rows.clone())],
                _ => unreachable!("discrete scenarios are handled above"),
            };
            Ok(grouped_violations(&groups))
        }
        _ => Err(HarnessError::config(
            "samples",
            format!("sample kind does not match scenario {}", cfg.scenario),
        )),
    }
}

fn continuous_options(cfg: &ExperimentConfig) -> SamplerOptions {
    let policy = match cfg.mode {
        Mode::Nsd => match cfg.sampler.policy {
            ContinuousPolicy::EveryStep => ProjectionPolicy::EveryStep,
            ContinuousPolicy::LastFraction => ProjectionPolicy::LastFraction(cfg.sampler.fraction),
        },
        Mode::Unconstrained => ProjectionPolicy::Never,
        Mode::PostOnly => ProjectionPolicy::FinalOnly,
    };
    SamplerOptions {
        policy,
        alm: cfg.alm_config(),
        max_retries: cfg.sampler.max_retries,
    }
}

/// Violation percentages over several (constraint set, samples) groups.
/// Names are unique within a set; a name absent from a group counts as
/// satisfied there.
fn grouped_violations(groups: &[(ConstraintSet, Vec<Vec<f64>>)]) -> BTreeMap<String, f64> {
    let total: usize = groups.iter().map(|(_, s)| s.len()).sum();
    let mut bad: BTreeMap<String, usize> = BTreeMap::new();
    for (cs, samples) in groups {
        for (name, c) in unique_names(&cs.names()).into_iter().zip(cs.members()) {
            *bad.entry(name).or_default() += samples.iter().filter(|x| !c.is_satisfied(x)).count();
        }
    }
    if total == 0 {
        return BTreeMap::new();
    }
    bad.into_iter().map(|(k, v)| (k, 100.0 * v as f64 / total as f64)).collect()
}

fn constraint_names(groups: &[&ConstraintSet]) -> Vec<String> {
    let mut names: Vec<String> = groups.iter().flat_map(|cs| unique_names(&cs.names())).collect();
    names.sort();
    names.dedup();
    names
}

fn sliced_w(a: &[Vec<f64>], b: &[Vec<f64>], directions: usize, seed: u64) -> Result<Option<f64>, HarnessError> {
    if a.is_empty() || b.is_empty() {
        return Ok(None);
    }
    let dirs = random_directions(a[0].len(), directions, &mut aux_rng(seed, METRIC_STREAM));
    Ok(Some(sliced_wasserstein_along(a, b, &dirs)?))
}

fn sw_fidelity(value: Option<f64>) -> Option<Fidelity> {
    value.map(|value| Fidelity {
        metric: "sliced_wasserstein".into(),
        value,
    })
}

fn trace_metrics(trace: &ViolationTrace, metrics: &mut BTreeMap<String, f64>) {
    let n = trace.entries.len();
    if n == 0 {
        return;
    }
    let mean = |es: &[TraceEntry]| es.iter().map(|e| e.mean_residual).sum::<f64>() / es.len().max(1) as f64;
    metrics.insert("trace.first_half_mean".into(), mean(&trace.entries[..n / 2]));
    metrics.insert("trace.second_half_mean".into(), mean(&trace.entries[n / 2..]));
    metrics.insert("trace.first20_mean".into(), mean(&trace.entries[..n.min(20)]));
    metrics.insert("trace.last20_mean".into(), trace.tail_mean(20));
}

/// Per-step average of equal-length traces; the max column takes the max.
fn merge_traces(traces: &[ViolationTrace]) -> Option<ViolationTrace> {
    let first = traces.first()?;
    let n = traces.len() as f64;
    let entries = (0..first.entries.len())
        .map(|k| TraceEntry {
            t: first.entries[k].t,
            mean_residual: traces.iter().map(|tr| tr.entries[k].mean_residual).sum::<f64>() / n,
            max_residual: traces.iter().map(|tr| tr.entries[k].max_residual).fold(0.0, f64::max),
        })
        .collect();
    Some(ViolationTrace { entries })
}

fn strip_group(rows: &[Vec<f64>], field: &str) -> Result<Vec<(usize, Vec<f64>)>, HarnessError> {
    rows.iter()
        .map(|r| {
            let g = *r.first().ok_or_else(|| HarnessError::config("samples", "empty sample row"))?;
            if g < 0.0 || g.fract() != 0.0 {
                return Err(HarnessError::config(
                    "samples",
                    format!("leading {field} column must be a nonnegative integer, got {g}"),
                ));
            }
            Ok((g as usize, r[1..].to_vec()))
        })
        .collect()
}

// ---------------------------------------------------------------- gmm

fn gmm_mixture(cfg: &ExperimentConfig) -> Result<GaussianMixture, HarnessError> {
    let g = &cfg.gmm_halfspace;
    let dim = g.means[0].len();
    Ok(GaussianMixture::new(
        SimplexRow::from_weights(g.weights.clone())?,
        g.means.clone(),
        vec![vec![g.variance; dim]; g.means.len()],
    )?)
}

fn gmm_constraints(cfg: &ExperimentConfig) -> Result<ConstraintSet, HarnessError> {
    let g = &cfg.gmm_halfspace;
    Ok(ConstraintSet::new().with(LinearConstraint::new(g.normal.clone(), g.offset)?.named("halfspace")))
}

/// Draws from the mixture restricted to the feasible set, by rejection.
fn feasible_reference(mixture: &GaussianMixture, cs: &ConstraintSet, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = aux_rng(seed, DATA_STREAM);
    let mut out = Vec::with_capacity(n);
    for _ in 0..1000 {
        if out.len() >= n {
            break;
        }
        out.extend(mixture.sample(n, &mut rng).into_iter().filter(|x| cs.is_satisfied(x)));
    }
    out.truncate(n);
    out
}

fn run_gmm(cfg: &ExperimentConfig) -> Result<ScenarioRun, HarnessError> {
    let g = &cfg.gmm_halfspace;
    let mixture = gmm_mixture(cfg)?;
    let cs = gmm_constraints(cfg)?;
    let model = ScoreModel::analytic(mixture.clone(), cfg.schedule.clone());
    let run = sample_with(&model, &cfg.schedule, &cs, &continuous_options(cfg), cfg.n_samples, cfg.seed)?;
    let reference = feasible_reference(&mixture, &cs, g.reference_samples, cfg.seed);
    let mut metrics = BTreeMap::new();
    trace_metrics(&run.trace, &mut metrics);
    Ok(ScenarioRun {
        fidelity: sw_fidelity(sliced_w(&run.samples, &reference, g.sw_directions, cfg.seed)?),
        violations: grouped_violations(&[(cs.clone(), run.samples.clone())]),
        constraints: constraint_names(&[&cs]),
        metrics,
        trace: Some(run.trace),
        retries: run.retries,
        failed_chains: run.failed_chains,
        requested: cfg.n_samples,
        samples: Samples::Vectors(run.samples),
    })
}

// ---------------------------------------------------------------- mapf

/// The maps of a MAPF run: the configured map file, or seeded random maps.
pub fn mapf_maps(cfg: &ExperimentConfig) -> Result<Vec<MapFile>, HarnessError> {
    let m = &cfg.mapf;
    if let Some(p) = &m.map_file {
        return Ok(vec![MapFile::load(p)?]);
    }
    Ok((0..m.maps)
        .map(|i| {
            let mut rng = aux_rng(cfg.seed, MAP_STREAM + i as u64);
            MapFile::random(m.agents, m.max_obstacles, m.world_size, m.agent_radius, &mut rng)
        })
        .collect())
}

/// Constraints on the full bundle of a map, with the given clearance margin.
fn map_constraints(map: &MapFile, waypoints: usize, margin: f64) -> Result<(AgentTrajectoryBundle, ConstraintSet), HarnessError> {
    let straight = AgentTrajectoryBundle::straight_lines(&map.endpoints(), waypoints, map.radii())?;
    let mut cs = ConstraintSet::new();
    if straight.agents() >= 2 {
        cs = cs.with(collision_constraint(&straight)?.with_margin(margin));
    }
    if !map.map.obstacles.is_empty() {
        cs = cs.with(obstacle_constraint(&straight, &map.map).with_margin(margin));
    }
    Ok((straight, cs))
}

fn mapf_groups(cfg: &ExperimentConfig, rows: &[Vec<f64>]) -> Result<Vec<Group>, HarnessError> {
    let maps = mapf_maps(cfg)?;
    let mut groups: Vec<(ConstraintSet, Vec<Vec<f64>>)> = maps
        .iter()
        .map(|m| Ok((map_constraints(m, cfg.mapf.waypoints, 0.0)?.1, Vec::new())))
        .collect::<Result<_, HarnessError>>()?;
    for (g, x) in strip_group(rows, "map index")? {
        let group = groups
            .get_mut(g)
            .ok_or_else(|| HarnessError::config("samples", format!("map index {g} out of range ({} maps)", maps.len())))?;
        group.1.push(x);
    }
    Ok(groups)
}

struct MapOutcome {
    bundles: Vec<Vec<f64>>,
    successes: Vec<bool>,
    trace: ViolationTrace,
    retries: usize,
    failed_chains: usize,
    path_lengths: Vec<f64>,
    straight_length: f64,
}

fn run_map(cfg: &ExperimentConfig, index: usize, map: &MapFile) -> Result<MapOutcome, HarnessError> {
    let m = &cfg.mapf;
    let (straight, margin_cs) = map_constraints(map, m.waypoints, m.margin)?;
    let (_, check_cs) = map_constraints(map, m.waypoints, 0.0)?;
    let mut project_cs = ConstraintSet::new();
    for c in margin_cs.members() {
        project_cs.push(Arc::new(PinnedEndpoints::new(c.clone(), straight.steps(), straight.endpoints())?));
    }
    let pin = PinnedEndpoints::new(Arc::new(margin_cs), straight.steps(), straight.endpoints())?;
    let prior = GaussianMixture::isotropic(pin.restrict(straight.flat()), m.prior_variance)?;
    let model = ScoreModel::analytic(prior, cfg.schedule.clone());
    let opts = continuous_options(cfg);
    let run = sample_with(
        &model,
        &cfg.schedule,
        &project_cs,
        &opts,
        cfg.n_samples,
        group_seed(cfg.seed, index),
    )?;
    let mut out = MapOutcome {
        bundles: Vec::new(),
        successes: vec![false; run.failed_chains],
        trace: run.trace,
        retries: run.retries,
        failed_chains: run.failed_chains,
        path_lengths: Vec::new(),
        straight_length: path_length(&straight).1,
    };
    for interior in &run.samples {
        let full = pin.expand(interior);
        let bundle = AgentTrajectoryBundle::from_flat(full.clone(), straight.agents(), straight.steps(), map.radii())?;
        out.successes
            .push(check_cs.is_satisfied(&full) && bundle.endpoints() == map.endpoints());
        out.path_lengths.push(path_length(&bundle).1);
        out.bundles.push(full);
    }
    Ok(out)
}

fn run_mapf(cfg: &ExperimentConfig) -> Result<ScenarioRun, HarnessError> {
    let maps = mapf_maps(cfg)?;
    let outcomes: Vec<MapOutcome> = maps
        .par_iter()
        .enumerate()
        .map(|(i, map)| run_map(cfg, i, map))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (i, o) in outcomes.iter().enumerate() {
        rows.extend(
            o.bundles
                .iter()
                .map(|b| std::iter::once(i as f64).chain(b.iter().copied()).collect::<Vec<f64>>()),
        );
    }
    let groups = mapf_groups(cfg, &rows)?;
    let successes: Vec<bool> = outcomes.iter().flat_map(|o| o.successes.iter().copied()).collect();
    let lengths: Vec<f64> = outcomes.iter().flat_map(|o| o.path_lengths.iter().copied()).collect();
    let mut metrics = BTreeMap::new();
    metrics.insert("success_rate".into(), success_rate(&successes));
    metrics.insert("maps".into(), maps.len() as f64);
    if !lengths.is_empty() {
        metrics.insert("path_length.mean".into(), lengths.iter().sum::<f64>() / lengths.len() as f64);
    }
    metrics.insert(
        "path_length.straight_mean".into(),
        outcomes.iter().map(|o| o.straight_length).sum::<f64>() / outcomes.len() as f64,
    );
    let trace = merge_traces(&outcomes.iter().map(|o| o.trace.clone()).collect::<Vec<_>>());
    if let Some(t) = &trace {
        trace_metrics(t, &mut metrics);
    }
    Ok(ScenarioRun {
        constraints: constraint_names(&groups.iter().map(|(cs, _)| cs).collect::<Vec<_>>()),
        violations: grouped_violations(&groups),
        fidelity: None,
        metrics,
        trace,
        retries: outcomes.iter().map(|o| o.retries).sum(),
        failed_chains: outcomes.iter().map(|o| o.failed_chains).sum(),
        requested: cfg.n_samples * maps.len(),
        samples: Samples::Vectors(rows),
    })
}

// ---------------------------------------------------------------- porosity

/// Smooth random fields in (-1.1, 0.9): a tanh-squashed sum of Gaussian
/// bumps of either sign, shifted down a little.
pub fn porosity_training_grids(cfg: &ExperimentConfig) -> Vec<Vec<f64>> {
    let p = &cfg.porosity;
    let mut rng = aux_rng(cfg.seed, DATA_STREAM);
    (0..p.training_grids)
        .map(|_| {
            let bumps: Vec<(f64, f64, f64, f64)> = (0..3 + rng.below(4))
                .map(|_| {
                    let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                    (
                        rng.uniform_range(0.0, p.rows as f64),
                        rng.uniform_range(0.0, p.cols as f64),
                        rng.uniform_range(1.5, 3.5),
                        sign * rng.uniform_range(1.0, 2.0),
                    )
                })
                .collect();
            (0..p.rows * p.cols)
                .map(|k| {
                    let (r, c) = ((k / p.cols) as f64, (k % p.cols) as f64);
                    let field: f64 = bumps
                        .iter()
                        .map(|&(br, bc, w, a)| a * (-((r - br).powi(2) + (c - bc).powi(2)) / (2.0 * w * w)).exp())
                        .sum();
                    field.tanh() - 0.1
                })
                .collect()
        })
        .collect()
}

fn porosity_set(cfg: &ExperimentConfig, k: usize) -> Result<ConstraintSet, HarnessError> {
    let p = &cfg.porosity;
    Ok(ConstraintSet::new().with(porosity_constraint(PorosityTarget::new(p.rows, p.cols, k)?)))
}

fn porosity_groups(cfg: &ExperimentConfig, rows: &[Vec<f64>]) -> Result<Vec<Group>, HarnessError> {
    let mut by_k: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for (k, x) in strip_group(rows, "target")? {
        by_k.entry(k).or_default().push(x);
    }
    by_k.into_iter().map(|(k, xs)| Ok((porosity_set(cfg, k)?, xs))).collect()
}

fn run_porosity(cfg: &ExperimentConfig) -> Result<ScenarioRun, HarnessError> {
    let p = &cfg.porosity;
    let grids = porosity_training_grids(cfg);
    let mixture = GaussianMixture::new(
        SimplexRow::uniform(grids.len()),
        grids.clone(),
        vec![vec![p.kernel_variance; p.rows * p.cols]; grids.len()],
    )?;
    let model = ScoreModel::analytic(mixture, cfg.schedule.clone());
    let opts = continuous_options(cfg);
    let mut metrics = BTreeMap::new();
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let (mut retries, mut failed_chains, mut exact) = (0, 0, 0usize);
    let mut sw_values = Vec::new();
    for (i, &k) in p.targets.iter().enumerate() {
        let cs = porosity_set(cfg, k)?;
        let run = sample_with(&model, &cfg.schedule, &cs, &opts, cfg.n_samples, group_seed(cfg.seed, i))?;
        retries += run.retries;
        failed_chains += run.failed_chains;
        let errors: Vec<usize> = run.samples.iter().map(|x| negative_count(x).abs_diff(k)).collect();
        exact += errors.iter().filter(|e| **e == 0).count();
        if !errors.is_empty() {
            metrics.insert(
                format!("porosity_error.k{k}"),
                errors.iter().sum::<usize>() as f64 / errors.len() as f64,
            );
        }
        if let Some(sw) = sliced_w(&run.samples, &grids, p.sw_directions, cfg.seed)? {
            metrics.insert(format!("sliced_wasserstein.k{k}"), sw);
            sw_values.push(sw);
        }
        rows.extend(
            run.samples
                .into_iter()
                .map(|x| std::iter::once(k as f64).chain(x).collect::<Vec<f64>>()),
        );
        traces.push(run.trace);
    }
    metrics.insert(
        "training_negative_cells.mean".into(),
        grids.iter().map(|g| negative_count(g) as f64).sum::<f64>() / grids.len() as f64,
    );
    if !rows.is_empty() {
        metrics.insert("exact_count_rate".into(), 100.0 * exact as f64 / rows.len() as f64);
    }
    let groups = porosity_groups(cfg, &rows)?;
    let trace = merge_traces(&traces);
    if let Some(t) = &trace {
        trace_metrics(t, &mut metrics);
    }
    let mean_sw = (!sw_values.is_empty()).then(|| sw_values.iter().sum::<f64>() / sw_values.len() as f64);
    Ok(ScenarioRun {
        constraints: constraint_names(&[&porosity_set(cfg, p.targets[0])?]),
        violations: grouped_violations(&groups),
        fidelity: sw_fidelity(mean_sw),
        metrics,
        trace,
        retries,
        failed_chains,
        requested: cfg.n_samples * p.targets.len(),
        samples: Samples::Vectors(rows),
    })
}

// ---------------------------------------------------------------- kinematics

fn kinematics_set(cfg: &ExperimentConfig) -> Result<(KinematicsSpec, ConstraintSet), HarnessError> {
    let k = &cfg.kinematics;
    let spec = KinematicsSpec::new(k.p0, k.g_sample, k.horizon)?;
    Ok((spec, ConstraintSet::new().with(kinematics_constraint(&spec)?)))
}

/// Rollouts under the training gravity from randomly perturbed start points.
pub fn kinematics_training_set(cfg: &ExperimentConfig) -> Result<Vec<Vec<f64>>, HarnessError> {
    let k = &cfg.kinematics;
    let mut rng = aux_rng(cfg.seed, DATA_STREAM);
    (0..k.train_size)
        .map(|_| {
            let spec = KinematicsSpec::new(k.p0 + k.p0_spread * rng.normal(), k.g_train, k.horizon)?;
            Ok(kinematics_rollout(&spec))
        })
        .collect()
}

fn run_kinematics(cfg: &ExperimentConfig) -> Result<ScenarioRun, HarnessError> {
    let data = kinematics_training_set(cfg)?;
    let mut train = cfg.kinematics.train.clone();
    train.seed = train.seed.wrapping_add(cfg.seed);
    let model = train_denoiser(&data, &cfg.schedule, &train)?;
    let (spec, cs) = kinematics_set(cfg)?;
    let run = sample_with(&model, &cfg.schedule, &cs, &continuous_options(cfg), cfg.n_samples, cfg.seed)?;
    let target = kinematics_rollout(&spec);
    let max_dev = run
        .samples
        .iter()
        .flat_map(|x| x.iter().zip(&target).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    let mut metrics = BTreeMap::new();
    metrics.insert("max_abs_deviation".into(), max_dev);
    metrics.insert("g_train".into(), cfg.kinematics.g_train);
    metrics.insert("g_sample".into(), cfg.kinematics.g_sample);
    trace_metrics(&run.trace, &mut metrics);
    Ok(ScenarioRun {
        constraints: constraint_names(&[&cs]),
        violations: grouped_violations(&[(cs.clone(), run.samples.clone())]),
        fidelity: None,
        metrics,
        trace: Some(run.trace),
        retries: run.retries,
        failed_chains: run.failed_chains,
        requested: cfg.n_samples,
        samples: Samples::Vectors(run.samples),
    })
}

// ---------------------------------------------------------------- sequences

/// Seeded first-order Markov corpus: uniform first token, transition
/// weights `exp(2 z)` with standard normal `z`.
pub fn markov_corpus(vocab: usize, length: usize, size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let transitions: Vec<Vec<f64>> = (0..vocab)
        .map(|_| (0..vocab).map(|_| (2.0 * rng.normal()).exp()).collect())
        .collect();
    (0..size)
        .map(|_| {
            let mut seq = vec![rng.below(vocab)];
            while seq.len() < length {
                let prev = *seq.last().unwrap();
                seq.push(rng.categorical(&transitions[prev]));
            }
            seq
        })
        .collect()
}

struct SequenceContext {
    dataset: Vec<Vec<usize>>,
    constraints: SequenceConstraintSet,
}

impl SequenceContext {
    fn build(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let s = &cfg.sequence;
        let dataset = match &s.dataset_file {
            Some(p) => SequenceFile::load(p)?.sequences,
            None => markov_corpus(s.vocab, s.length, s.dataset_size, &mut aux_rng(cfg.seed, DATA_STREAM)),
        };
        if let Some(bad) = dataset.iter().find(|q| q.len() != s.length || q.iter().any(|&t| t >= s.vocab)) {
            return Err(HarnessError::config(
                "sequence.dataset_file",
                format!("sequence {bad:?} does not fit length {} and vocab {}", s.length, s.vocab),
            ));
        }
        let novelty = || NoveltyConstraint::new(Arc::new(NoveltySet::from_sequences(dataset.iter().cloned())));
        let mut cs = SequenceConstraintSet::new();
        match cfg.scenario {
            Scenario::SequencePatterns => {
                let rules = match &s.rules_file {
                    Some(p) => load_rules(p)?,
                    None => s
                        .rules
                        .iter()
                        .map(|r| PatternRule::new(r.pattern.clone(), r.replacements.clone()))
                        .collect::<Result<_, _>>()?,
                };
                cs = cs.with(PatternConstraint::new(rules)?);
                if s.novelty {
                    cs = cs.with(novelty());
                }
            }
            Scenario::SequenceNovelty => cs = cs.with(novelty()),
            Scenario::SequenceSurrogate => {
                cs = cs.with(surrogate_constraint(SurrogateScorer::new(
                    s.surrogate_weights.clone(),
                    s.surrogate_threshold,
                )?));
                if s.novelty {
                    cs = cs.with(novelty());
                }
            }
            _ => unreachable!("not a sequence scenario"),
        }
        Ok(Self { dataset, constraints: cs })
    }

    fn denoiser(&self, cfg: &ExperimentConfig) -> Result<DiscreteDenoiser, HarnessError> {
        let s = &cfg.sequence;
        let noise = DiscreteNoiseSpec::mask(s.vocab);
        Ok(match s.model {
            SequenceModel::AnalyticToy => {
                DiscreteDenoiser::analytic(ToyDistribution::from_sequences(&self.dataset)?, noise, cfg.schedule.clone())?
            }
            SequenceModel::Bigram => {
                let mut b = BigramDenoiser::new(s.length, noise, cfg.schedule.clone())?;
                let mut train = s.train.clone();
                train.seed = train.seed.wrapping_add(cfg.seed);
                b.fit(&self.dataset, &train)?;
                DiscreteDenoiser::TrainableBigram(b)
            }
        })
    }
}

fn run_sequence(cfg: &ExperimentConfig) -> Result<ScenarioRun, HarnessError> {
    let s = &cfg.sequence;
    let ctx = SequenceContext::build(cfg)?;
    let d = ctx.denoiser(cfg)?;
    let opts = DiscreteSamplerOptions {
        policy: match cfg.mode {
            Mode::Nsd => DiscretePolicy::EveryStep,
            Mode::Unconstrained => DiscretePolicy::Never,
            Mode::PostOnly => DiscretePolicy::FinalOnly,
        },
        alm: cfg.alm_config(),
        gumbel: GumbelConfig {
            temperature: s.temperature,
            seed: cfg.seed,
        },
        max_retries: cfg.sampler.max_retries,
        search_budget: s.search_budget,
    };
    let run = sample_discrete_with(&d, &cfg.schedule, &ctx.constraints, &opts, cfg.n_samples, cfg.seed)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("repaired".into(), run.repaired as f64);
    metrics.insert("projection_failures".into(), run.projection_failures as f64);
    metrics.insert("dataset_size".into(), ctx.dataset.len() as f64);
    Ok(ScenarioRun {
        constraints: unique_names(&ctx.constraints.names()),
        violations: if run.samples.is_empty() {
            BTreeMap::new()
        } else {
            sequence_violation_rate(&run.samples, &ctx.constraints)
        },
        fidelity: (!run.samples.is_empty()).then(|| Fidelity {
            metric: "unigram_tv".into(),
            value: unigram_tv(&run.samples, &ctx.dataset),
        }),
        metrics,
        trace: None,
        retries: 0,
        failed_chains: run.failed_chains,
        requested: cfg.n_samples,
        samples: Samples::Tokens(run.samples),
    })
}
