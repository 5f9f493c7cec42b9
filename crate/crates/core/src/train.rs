//! Configuration, step-size schedules and per-episode metrics shared by the
//! tabular and network learners.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph_mdp::EnvError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { value: f64 },
    /// `c / (1 + e / tau)` at episode `e`.
    Decay { c: f64, tau: f64 },
}

impl StepSchedule {
    pub fn at(&self, episode: usize) -> f64 {
        match *self {
            StepSchedule::Constant { value } => value,
            StepSchedule::Decay { c, tau } => c / (1.0 + episode as f64 / tau),
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            StepSchedule::Constant { value } => value.is_finite() && value > 0.0,
            StepSchedule::Decay { c, tau } => c.is_finite() && c > 0.0 && tau.is_finite() && tau > 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub kappa: usize,
    pub gamma: f64,
    #[serde(default = "default_alpha_q")]
    pub alpha_q: StepSchedule,
    #[serde(default = "default_alpha_pi")]
    pub alpha_pi: StepSchedule,
    /// Maximum episode length.
    pub horizon: usize,
    pub episodes: usize,
    pub seed: u64,
}

fn default_alpha_q() -> StepSchedule {
    StepSchedule::Constant { value: 0.05 }
}

fn default_alpha_pi() -> StepSchedule {
    StepSchedule::Constant { value: 0.01 }
}

impl TrainConfig {
    pub fn new(kappa: usize, gamma: f64, horizon: usize, episodes: usize, seed: u64) -> Self {
        Self {
            kappa,
            gamma,
            alpha_q: default_alpha_q(),
            alpha_pi: default_alpha_pi(),
            horizon,
            episodes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(TrainError::Config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if self.horizon == 0 {
            return Err(TrainError::Config("horizon must be at least 1".into()));
        }
        if !self.alpha_q.is_valid() || !self.alpha_pi.is_valid() {
            return Err(TrainError::Config("step sizes must be positive and finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {what} for agent {agent} in episode {episode}")]
    Diverged {
        episode: usize,
        agent: usize,
        what: &'static str,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Dimension(String),
}

/// What one training episode produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub global_return: f64,
    pub agent_returns: Vec<f64>,
    pub steps: usize,
    /// Critic updates applied during this episode, summed over agents.
    pub critic_updates: usize,
    /// Actor updates applied during this episode, summed over agents.
    pub actor_updates: usize,
}
