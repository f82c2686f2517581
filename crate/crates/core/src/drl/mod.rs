//! Platoon sizing by deep Q-learning: state encoding, reward, masked
//! epsilon-greedy selection, replay and temporal-difference training.

mod agent;
mod checkpoint;
mod encoding;
mod network;
mod replay;

pub use agent::{AgentMode, AgentStats, DqnAgent};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use encoding::{
    cell_overlap, encode_state, EncoderParams, StateTensor, CHANNELS, CH_OCCUPANCY, CH_SPEED, CH_TARGET, CH_TTJ,
};
pub use network::{Activations, NetworkShape, QNetwork};
pub use replay::{Experience, ReplayMemory};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, TrainingError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnParams {
    /// Exploration probability while training.
    pub epsilon: f64,
    pub batch_size: usize,
    /// Decisions observed before the first gradient step.
    pub observe_step: u64,
    pub replay_capacity: usize,
    /// Upper bound of the per-vehicle reward.
    pub reward_cap: f64,
    /// Waiting time at which the per-vehicle reward crosses zero.
    pub wait_threshold: f64,
    pub gamma: f64,
    /// Train steps between target-network syncs.
    pub target_sync: u64,
    pub learning_rate: f64,
    pub network: NetworkShape,
    pub encoder: EncoderParams,
}

impl Default for DqnParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            batch_size: 32,
            observe_step: 100,
            replay_capacity: 1000,
            reward_cap: 0.15,
            wait_threshold: 60.0,
            gamma: 0.9,
            target_sync: 200,
            learning_rate: 1e-3,
            network: NetworkShape::default(),
            encoder: EncoderParams::default(),
        }
    }
}

impl DqnParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(ConfigError::Invalid(format!("epsilon must lie in [0, 1], got {}", self.epsilon)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(ConfigError::Invalid(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        for (field, value) in [
            ("reward_cap", self.reward_cap),
            ("wait_threshold", self.wait_threshold),
            ("learning_rate", self.learning_rate),
            ("ttj_norm", self.encoder.ttj_norm),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::NonPositive { field, value });
            }
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(ConfigError::Invalid("replay capacity must hold at least one batch".into()));
        }
        if self.target_sync == 0 {
            return Err(ConfigError::Invalid("target_sync must be at least 1".into()));
        }
        self.network.validate()
    }
}

/// Per-vehicle reward `c - c (w / w_m)^2`.
pub fn vehicle_reward(wait: f64, cap: f64, threshold: f64) -> f64 {
    let x = wait / threshold;
    cap - cap * x * x
}

/// Mean per-vehicle reward over the given waiting times; `cap` when empty.
pub fn reward(waits: &[f64], cap: f64, threshold: f64) -> f64 {
    if waits.is_empty() {
        return cap;
    }
    waits.iter().map(|w| vehicle_reward(*w, cap, threshold)).sum::<f64>() / waits.len() as f64
}

/// Index of the largest of `q[..feasible]`, first on ties.
pub fn masked_argmax(q: &[f32], feasible: usize) -> usize {
    let mut best = 0;
    for i in 1..feasible {
        if q[i] > q[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice among actions `1..=feasible`. Returns the action and
/// whether it was drawn at random.
pub fn select_action<R: Rng + ?Sized>(
    q: &[f32],
    feasible: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<(usize, bool), TrainingError> {
    if feasible == 0 || feasible > q.len() {
        return Err(TrainingError::EmptyFeasibleSet);
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok((rng.random_range(1..=feasible), true));
    }
    Ok((masked_argmax(q, feasible) + 1, false))
}

/// `y = r` at terminal transitions, else `r + gamma * max` of the target
/// network over the next state's feasible actions.
pub fn td_targets(batch: &[&Experience], target: &QNetwork<f32>, gamma: f64) -> Result<Vec<f64>, TrainingError> {
    batch
        .iter()
        .map(|e| {
            if e.terminal {
                return Ok(e.reward);
            }
            if e.next_feasible == 0 {
                return Err(TrainingError::EmptyFeasibleSet);
            }
            let q = target.forward(&e.next_state.data);
            let best = q[..e.next_feasible].iter().copied().fold(f32::NEG_INFINITY, f32::max);
            Ok(e.reward + gamma * best as f64)
        })
        .collect()
}
