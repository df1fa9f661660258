//! Noise schedules and score / denoiser models.

pub mod checkpoint;
mod discrete;
mod gmm;
mod mlp;
mod schedule;

pub use checkpoint::{Checkpoint, Tensor, CHECKPOINT_HEADER};
pub use discrete::{discrete_predict, BigramDenoiser, DiscreteDenoiser, ToyDistribution};
pub use gmm::{gmm_score, GaussianMixture};
pub use mlp::{DenoiserMlp, NoiseBatch, TrainConfig};
pub use schedule::{schedule_eval, NoiseSchedule, ScheduleKind, TAIL_CENTER, TAIL_WIDTH};

use crate::error::Result;

/// Estimator of `grad log p_t(x)` for continuous data.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreModel {
    AnalyticGmm { mixture: GaussianMixture, schedule: NoiseSchedule },
    DenoiserMlp(DenoiserMlp),
}

impl ScoreModel {
    pub fn analytic(mixture: GaussianMixture, schedule: NoiseSchedule) -> Self {
        Self::AnalyticGmm { mixture, schedule }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::AnalyticGmm { mixture, .. } => mixture.dim(),
            Self::DenoiserMlp(net) => net.dim(),
        }
    }

    pub fn score(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        match self {
            Self::AnalyticGmm { mixture, schedule } => gmm_score(mixture, schedule, x, t),
            Self::DenoiserMlp(net) => net.score(x, t),
        }
    }
}

/// Fits a noise-prediction MLP by denoising score matching.
pub fn train_denoiser(data: &[Vec<f64>], schedule: &NoiseSchedule, cfg: &TrainConfig) -> Result<ScoreModel> {
    DenoiserMlp::fit(data, schedule, cfg).map(|(net, _)| ScoreModel::DenoiserMlp(net))
}
