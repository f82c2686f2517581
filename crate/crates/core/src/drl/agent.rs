use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::TrainingError;
use crate::seeding::{stream_rng, SimRng, Stream};

use super::{select_action, td_targets, DqnParams, Experience, QNetwork, ReplayMemory, StateTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentMode {
    /// Explore, store experiences and train.
    Train,
    /// Greedy, no learning.
    Greedy,
}

/// Running counters, reset by [`DqnAgent::take_stats`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentStats {
    pub decisions: u64,
    pub random_actions: u64,
    pub reward_sum: f64,
    pub rewards: u64,
    pub loss_sum: f64,
    pub train_steps: u64,
}

impl AgentStats {
    pub fn mean_reward(&self) -> f64 {
        if self.rewards == 0 {
            0.0
        } else {
            self.reward_sum / self.rewards as f64
        }
    }

    pub fn mean_loss(&self) -> f64 {
        if self.train_steps == 0 {
            0.0
        } else {
            self.loss_sum / self.train_steps as f64
        }
    }
}

/// Q-learning agent with replay memory and a periodically synced target
/// network. Both persist across episodes.
#[derive(Clone, Debug)]
pub struct DqnAgent {
    pub params: DqnParams,
    pub online: QNetwork<f32>,
    target: QNetwork<f32>,
    pub replay: ReplayMemory,
    mode: AgentMode,
    explore_rng: SimRng,
    replay_rng: SimRng,
    decisions: u64,
    train_steps: u64,
    pending: Option<(Arc<StateTensor>, usize)>,
    stats: AgentStats,
}

impl DqnAgent {
    pub fn new(params: DqnParams, seed: u64) -> Self {
        let online = QNetwork::xavier(params.network, &mut stream_rng(seed, Stream::Init, &[]));
        Self::with_network(params, online, seed)
    }

    pub fn with_network(params: DqnParams, online: QNetwork<f32>, seed: u64) -> Self {
        Self {
            target: online.clone(),
            online,
            replay: ReplayMemory::new(params.replay_capacity),
            mode: AgentMode::Train,
            explore_rng: stream_rng(seed, Stream::Exploration, &[]),
            replay_rng: stream_rng(seed, Stream::Replay, &[]),
            decisions: 0,
            train_steps: 0,
            pending: None,
            stats: AgentStats::default(),
            params,
        }
    }

    pub fn mode(&self) -> AgentMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: AgentMode) {
        self.mode = mode;
    }

    /// Reseeds the exploration stream, e.g. per evaluation episode.
    pub fn reseed_exploration(&mut self, seed: u64) {
        self.explore_rng = stream_rng(seed, Stream::Exploration, &[]);
    }

    pub fn target(&self) -> &QNetwork<f32> {
        &self.target
    }

    pub fn decisions(&self) -> u64 {
        self.decisions
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn take_stats(&mut self) -> AgentStats {
        std::mem::take(&mut self.stats)
    }

    pub fn q_values(&self, state: &StateTensor) -> Vec<f32> {
        self.online.forward(&state.data)
    }

    /// One decision epoch. `reward` is the reward observed since the previous
    /// decision of this episode (ignored for the first one). Returns the
    /// chosen action (1-based) and whether it was exploratory.
    pub fn act(&mut self, state: StateTensor, feasible: usize, reward: f64) -> Result<(usize, bool), TrainingError> {
        let state = Arc::new(state);
        if self.mode == AgentMode::Train {
            if let Some((prev, action)) = self.pending.take() {
                self.stats.reward_sum += reward;
                self.stats.rewards += 1;
                self.replay.store(Experience {
                    state: prev,
                    action,
                    reward,
                    next_state: state.clone(),
                    next_feasible: feasible,
                    terminal: false,
                });
            }
            if self.decisions >= self.params.observe_step && self.replay.len() >= self.params.batch_size {
                self.train_step()?;
            }
        }
        let epsilon = match self.mode {
            AgentMode::Train => self.params.epsilon,
            AgentMode::Greedy => 0.0,
        };
        let q = self.online.forward(&state.data);
        let (action, explored) = select_action(&q, feasible, epsilon, &mut self.explore_rng)?;
        self.decisions += 1;
        self.stats.decisions += 1;
        self.stats.random_actions += explored as u64;
        if self.mode == AgentMode::Train {
            self.pending = Some((state, action));
        }
        Ok((action, explored))
    }

    /// Closes the episode: the last decision becomes a terminal transition.
    pub fn end_episode(&mut self, state: StateTensor, reward: f64) {
        if let Some((prev, action)) = self.pending.take() {
            self.stats.reward_sum += reward;
            self.stats.rewards += 1;
            self.replay.store(Experience {
                state: prev,
                action,
                reward,
                next_state: Arc::new(state),
                next_feasible: 0,
                terminal: true,
            });
        }
    }

    /// One gradient step on a sampled batch; syncs the target network every
    /// `target_sync` steps.
    pub fn train_step(&mut self) -> Result<f32, TrainingError> {
        let batch = self.replay.sample(self.params.batch_size, &mut self.replay_rng)?;
        let targets: Vec<f32> = td_targets(&batch, &self.target, self.params.gamma)?.into_iter().map(|y| y as f32).collect();
        let inputs: Vec<&[f32]> = batch.iter().map(|e| e.state.data.as_slice()).collect();
        let actions: Vec<usize> = batch.iter().map(|e| e.action - 1).collect();
        let (loss, grad) = self.online.loss_and_grad(&inputs, &actions, &targets);
        let step = self.train_steps + 1;
        if !loss.is_finite() {
            return Err(TrainingError::NonFinite { step, detail: format!("loss {loss}, targets {targets:?}") });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(TrainingError::NonFinite { step, detail: format!("gradient component {i} is {}", grad[i]) });
        }
        self.online.sgd_step(&grad, self.params.learning_rate as f32);
        self.train_steps = step;
        self.stats.train_steps += 1;
        self.stats.loss_sum += loss as f64;
        if self.train_steps % self.params.target_sync == 0 {
            self.sync_target();
        }
        Ok(loss)
    }

    pub fn sync_target(&mut self) {
        self.target.params.copy_from_slice(&self.online.params);
    }
}
