use std::sync::Arc;

use rand::Rng;

use crate::error::TrainingError;

use super::StateTensor;

#[derive(Clone, Debug)]
pub struct Experience {
    pub state: Arc<StateTensor>,
    /// Platoon size chosen, starting at 1.
    pub action: usize,
    pub reward: f64,
    pub next_state: Arc<StateTensor>,
    /// Number of feasible actions in the next state.
    pub next_feasible: usize,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer that evicts the oldest experience first.
#[derive(Clone, Debug)]
pub struct ReplayMemory<E = Experience> {
    items: Vec<E>,
    capacity: usize,
    next: usize,
    stored: u64,
}

impl<E> ReplayMemory<E> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { items: Vec::with_capacity(capacity), capacity, next: 0, stored: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of experiences ever stored.
    pub fn stored(&self) -> u64 {
        self.stored
    }

    pub fn store(&mut self, e: E) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
        self.stored += 1;
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &E> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform sample with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>, TrainingError> {
        if self.items.len() < n {
            return Err(TrainingError::WarmingUp { have: self.items.len(), need: n });
        }
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&E>, TrainingError> {
        Ok(self.sample_indices(n, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }
}
