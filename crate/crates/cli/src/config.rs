//! Experiment configuration (TOML, or JSON with the same shape).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nsd_core::models::{NoiseSchedule, TrainConfig};
use nsd_core::projections::AlmConfig;
use nsd_core::sampler_discrete::DiscreteSamplerOptions;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    GmmHalfspace,
    Mapf,
    Porosity,
    Kinematics,
    SequencePatterns,
    SequenceNovelty,
    SequenceSurrogate,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::GmmHalfspace => "gmm_halfspace",
            Self::Mapf => "mapf",
            Self::Porosity => "porosity",
            Self::Kinematics => "kinematics",
            Self::SequencePatterns => "sequence_patterns",
            Self::SequenceNovelty => "sequence_novelty",
            Self::SequenceSurrogate => "sequence_surrogate",
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Self::SequencePatterns | Self::SequenceNovelty | Self::SequenceSurrogate)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which sampler variant runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Projection interleaved with the reverse steps.
    #[default]
    Nsd,
    /// No projection at all.
    Unconstrained,
    /// The unconstrained chain plus one projection of the final sample.
    PostOnly,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Nsd => "nsd",
            Self::Unconstrained => "unconstrained",
            Self::PostOnly => "post_only",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nsd" => Ok(Self::Nsd),
            "unconstrained" => Ok(Self::Unconstrained),
            "post_only" => Ok(Self::PostOnly),
            other => Err(HarnessError::config("mode", format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmHalfspaceSpec {
    pub means: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub variance: f64,
    /// Halfspace `normal . x <= offset`.
    pub normal: Vec<f64>,
    pub offset: f64,
    pub reference_samples: usize,
    pub sw_directions: usize,
}

impl Default for GmmHalfspaceSpec {
    fn default() -> Self {
        Self {
            means: vec![vec![-1.5, -0.5], vec![1.5, 1.0]],
            weights: vec![0.5, 0.5],
            variance: 0.25,
            normal: vec![1.0, 0.0],
            offset: 0.5,
            reference_samples: 2000,
            sw_directions: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapfSpec {
    /// Number of random maps; ignored when `map_file` is set.
    pub maps: usize,
    pub agents: usize,
    pub max_obstacles: usize,
    pub waypoints: usize,
    pub world_size: f64,
    pub agent_radius: f64,
    /// Variance of the Gaussian prior around straight-line paths.
    pub prior_variance: f64,
    /// Clearance added to every distance bound while projecting.
    pub margin: f64,
    pub map_file: Option<PathBuf>,
}

impl Default for MapfSpec {
    fn default() -> Self {
        Self {
            maps: 10,
            agents: 3,
            max_obstacles: 4,
            waypoints: 20,
            world_size: 10.0,
            agent_radius: 0.25,
            prior_variance: 0.01,
            margin: 1e-3,
            map_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PorositySpec {
    pub rows: usize,
    pub cols: usize,
    /// Required negative-cell counts; `n_samples` grids are drawn for each.
    pub targets: Vec<usize>,
    pub training_grids: usize,
    /// Per-component variance of the kernel density over training grids.
    pub kernel_variance: f64,
    pub sw_directions: usize,
}

impl Default for PorositySpec {
    fn default() -> Self {
        Self {
            rows: 16,
            cols: 16,
            targets: vec![48, 96, 144],
            training_grids: 32,
            kernel_variance: 0.02,
            sw_directions: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KinematicsScenarioSpec {
    pub horizon: usize,
    /// Acceleration of the training trajectories.
    pub g_train: f64,
    /// Acceleration imposed at sampling time.
    pub g_sample: f64,
    /// Initial position imposed at sampling time.
    pub p0: f64,
    pub train_size: usize,
    /// Training initial positions are uniform in `[-spread, spread]`.
    pub p0_spread: f64,
    pub train: TrainConfig,
}

impl Default for KinematicsScenarioSpec {
    fn default() -> Self {
        Self {
            horizon: 8,
            g_train: 0.2,
            g_sample: 0.2 * 1.62 / 9.81,
            p0: 0.0,
            train_size: 256,
            p0_spread: 0.5,
            train: TrainConfig {
                learning_rate: 2e-3,
                epochs: 150,
                batch_size: 64,
                seed: 0,
                hidden: vec![64, 64],
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceModel {
    /// Exact posterior of the empirical training distribution.
    #[default]
    AnalyticToy,
    /// Learned position/neighbour logit model.
    Bigram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub pattern: Vec<usize>,
    #[serde(default)]
    pub replacements: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceSpec {
    pub vocab: usize,
    pub length: usize,
    pub dataset_size: usize,
    /// One sequence per line; replaces the generated dataset.
    pub dataset_file: Option<PathBuf>,
    pub model: SequenceModel,
    pub train: TrainConfig,
    /// Forbidden patterns; JSON rule file takes precedence.
    pub rules: Vec<RuleSpec>,
    pub rules_file: Option<PathBuf>,
    /// Add the novelty constraint to the pattern and surrogate scenarios.
    pub novelty: bool,
    pub surrogate_weights: Vec<(Vec<usize>, f64)>,
    pub surrogate_threshold: f64,
    pub temperature: f64,
    pub search_budget: usize,
}

fn default_rules() -> Vec<RuleSpec> {
    let r = |p: &[usize], c: &[&[usize]]| RuleSpec {
        pattern: p.to_vec(),
        replacements: c.iter().map(|v| v.to_vec()).collect(),
    };
    vec![
        r(&[0, 1], &[&[0, 2], &[0, 3]]),
        r(&[2, 2], &[&[2, 4]]),
        r(&[3, 4, 5], &[&[3, 5, 5], &[3, 6]]),
        r(&[6, 7], &[&[6, 6]]),
        r(&[5, 0], &[&[5, 1], &[5]]),
    ]
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self {
            vocab: 8,
            length: 8,
            dataset_size: 200,
            dataset_file: None,
            model: SequenceModel::AnalyticToy,
            train: TrainConfig {
                learning_rate: 0.05,
                epochs: 60,
                batch_size: 32,
                seed: 0,
                hidden: Vec::new(),
            },
            rules: default_rules(),
            rules_file: None,
            novelty: true,
            surrogate_weights: vec![
                (vec![1, 2], 1.0),
                (vec![4, 4], 1.0),
                (vec![7, 3], 0.8),
                (vec![2, 6], 0.6),
                (vec![0, 5, 0], 1.0),
            ],
            surrogate_threshold: 0.9,
            temperature: 1.0,
            search_budget: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuousPolicy {
    #[default]
    EveryStep,
    LastFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSpec {
    pub policy: ContinuousPolicy,
    /// Used by `last_fraction`.
    pub fraction: f64,
    pub max_retries: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            policy: ContinuousPolicy::EveryStep,
            fraction: 0.1,
            max_retries: nsd_core::sampler_continuous::DEFAULT_MAX_RETRIES,
        }
    }
}

fn default_schedule() -> NoiseSchedule {
    NoiseSchedule::cosine(200)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub mode: Mode,
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default = "default_schedule")]
    pub schedule: NoiseSchedule,
    /// Projection solver settings; unset means the sampler's own default
    /// for the scenario's modality.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alm: Option<AlmConfig>,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub gmm_halfspace: GmmHalfspaceSpec,
    #[serde(default)]
    pub mapf: MapfSpec,
    #[serde(default)]
    pub porosity: PorositySpec,
    #[serde(default)]
    pub kinematics: KinematicsScenarioSpec,
    #[serde(default)]
    pub sequence: SequenceSpec,
}

fn check(name: &str, ok: bool, msg: impl FnOnce() -> String) -> Result<(), HarnessError> {
    if ok {
        Ok(())
    } else {
        Err(HarnessError::config(name, msg()))
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| HarnessError::config("config", e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| HarnessError::config("config", e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::config("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The configured solver settings, or the modality default.
    pub fn alm_config(&self) -> AlmConfig {
        match &self.alm {
            Some(a) => a.clone(),
            None if self.scenario.is_discrete() => DiscreteSamplerOptions::default().alm,
            None => AlmConfig::default(),
        }
    }

    /// Field-level checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<(), HarnessError> {
        check("n_samples", self.n_samples > 0, || "must be at least 1".into())?;
        self.schedule
            .validate()
            .map_err(|e| HarnessError::config("schedule", e.to_string()))?;
        self.alm_config()
            .validate()
            .map_err(|e| HarnessError::config("alm", e.to_string()))?;
        check(
            "sampler.fraction",
            self.sampler.fraction > 0.0 && self.sampler.fraction <= 1.0,
            || format!("{} outside (0, 1]", self.sampler.fraction),
        )?;
        match self.scenario {
            Scenario::GmmHalfspace => {
                let g = &self.gmm_halfspace;
                check("gmm_halfspace.means", !g.means.is_empty(), || "needs at least one component".into())?;
                let dim = g.means[0].len();
                check("gmm_halfspace.means", dim > 0 && g.means.iter().all(|m| m.len() == dim), || {
                    "components must share a nonzero dimension".into()
                })?;
                check("gmm_halfspace.weights", g.weights.len() == g.means.len(), || {
                    format!("{} weights for {} components", g.weights.len(), g.means.len())
                })?;
                check(
                    "gmm_halfspace.normal",
                    g.normal.len() == dim && g.normal.iter().any(|v| *v != 0.0),
                    || format!("must be a nonzero vector of length {dim}"),
                )?;
                check("gmm_halfspace.variance", g.variance > 0.0, || "must be positive".into())?;
                check("gmm_halfspace.sw_directions", g.sw_directions > 0, || "must be positive".into())?;
                check("gmm_halfspace.reference_samples", g.reference_samples > 0, || {
                    "must be positive".into()
                })?;
            }
            Scenario::Mapf => {
                let m = &self.mapf;
                check("mapf.agents", m.map_file.is_some() || m.agents >= 2, || {
                    "need at least 2 agents".into()
                })?;
                check("mapf.maps", m.map_file.is_some() || m.maps > 0, || "need at least 1 map".into())?;
                check("mapf.waypoints", m.waypoints >= 3, || "need at least 3 waypoints".into())?;
                check("mapf.world_size", m.world_size > 0.0, || "must be positive".into())?;
                check("mapf.prior_variance", m.prior_variance > 0.0, || "must be positive".into())?;
                check("mapf.margin", m.margin >= 0.0, || "must be nonnegative".into())?;
            }
            Scenario::Porosity => {
                let p = &self.porosity;
                check("porosity.targets", !p.targets.is_empty(), || "need at least one target".into())?;
                check("porosity.targets", p.targets.iter().all(|k| *k <= p.rows * p.cols), || {
                    format!("targets must not exceed {} cells", p.rows * p.cols)
                })?;
                check("porosity.training_grids", p.training_grids > 0, || "must be positive".into())?;
                check("porosity.kernel_variance", p.kernel_variance > 0.0, || "must be positive".into())?;
                check("porosity.sw_directions", p.sw_directions > 0, || "must be positive".into())?;
            }
            Scenario::Kinematics => {
                let k = &self.kinematics;
                check("kinematics.horizon", k.horizon > 0, || "must be at least 1".into())?;
                check("kinematics.train_size", k.train_size > 0, || "must be positive".into())?;
                k.train
                    .validate()
                    .map_err(|e| HarnessError::config("kinematics.train", e.to_string()))?;
            }
            Scenario::SequencePatterns | Scenario::SequenceNovelty | Scenario::SequenceSurrogate => {
                let s = &self.sequence;
                check("sequence.vocab", s.vocab >= 2, || "need at least 2 tokens".into())?;
                check("sequence.length", s.length >= 1, || "must be positive".into())?;
                check("sequence.dataset_size", s.dataset_file.is_some() || s.dataset_size > 0, || {
                    "must be positive".into()
                })?;
                check("sequence.temperature", s.temperature > 0.0, || "must be positive".into())?;
                for (i, r) in s.rules.iter().enumerate() {
                    let ok = r.pattern.iter().chain(r.replacements.iter().flatten()).all(|t| *t < s.vocab);
                    check(&format!("sequence.rules[{i}]"), ok, || format!("tokens must be below {}", s.vocab))?;
                }
                if s.model == SequenceModel::Bigram {
                    s.train
                        .validate()
                        .map_err(|e| HarnessError::config("sequence.train", e.to_string()))?;
                }
            }
        }
        Ok(())
    }
}
