//! Fixed-capacity uniform-sampling experience replay.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One environment step as stored for off-policy training. `terminal` marks
/// environment death only; truncated episodes store `false` so bootstrapping
/// still uses the next state's value.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

pub const DEFAULT_REPLAY_CAPACITY: usize = 1_000_000;

/// Ring buffer of transitions; oldest entries are overwritten first, sampling
/// is uniform with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    storage: Vec<Transition>,
    capacity: usize,
    next: usize,
    inserted: u64,
}

/// Column-major view of a sampled batch, ready for batched network passes.
#[derive(Debug, Clone)]
pub struct MiniBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub terminals: Vec<bool>,
}

impl MiniBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            storage: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            next: 0,
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total_inserted(&self) -> u64 {
        self.inserted
    }

    /// Append a transition, evicting the oldest once at capacity.
    pub fn insert(&mut self, t: Transition) -> Result<()> {
        if let Some(first) = self.storage.first() {
            if t.state.len() != first.state.len()
                || t.next_state.len() != first.next_state.len()
                || t.action.len() != first.action.len()
            {
                return Err(Error::TransitionShape(format!(
                    "got state {} / action {} / next {}, buffer holds {} / {} / {}",
                    t.state.len(),
                    t.action.len(),
                    t.next_state.len(),
                    first.state.len(),
                    first.action.len(),
                    first.next_state.len()
                )));
            }
        }
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
        Ok(())
    }

    /// Read a stored transition by insertion-order index (oldest first).
    pub fn get(&self, i: usize) -> &Transition {
        if self.storage.len() < self.capacity {
            &self.storage[i]
        } else {
            &self.storage[(self.next + i) % self.capacity]
        }
    }

    /// Draw `n` transitions uniformly at random with replacement.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<MiniBatch> {
        if self.is_empty() {
            return Err(Error::EmptyBatch("replay sample"));
        }
        assert!(n >= 1, "sample size must be >= 1");
        let state_dim = self.storage[0].state.len();
        let action_dim = self.storage[0].action.len();
        let mut states = Array2::zeros((n, state_dim));
        let mut actions = Array2::zeros((n, action_dim));
        let mut next_states = Array2::zeros((n, state_dim));
        let mut rewards = Vec::with_capacity(n);
        let mut terminals = Vec::with_capacity(n);
        for i in 0..n {
            let t = &self.storage[rng.random_range(0..self.storage.len())];
            for (j, &v) in t.state.iter().enumerate() {
                states[[i, j]] = v;
            }
            for (j, &v) in t.action.iter().enumerate() {
                actions[[i, j]] = v;
            }
            for (j, &v) in t.next_state.iter().enumerate() {
                next_states[[i, j]] = v;
            }
            rewards.push(t.reward);
            terminals.push(t.terminal);
        }
        Ok(MiniBatch {
            states,
            actions,
            rewards,
            next_states,
            terminals,
        })
    }
}
