//! Q-network training with clipped double value targets.
//!
//! The ensemble holds the Q-network, two value/advantage pairs, and slow
//! target copies of the value networks. Both the Q-loss and the
//! value/advantage loss regress onto the same bootstrap target
//! `r + gamma * min_i V_target_i(s')` (plain `r` on terminal transitions),
//! computed once per batch and reused. Nothing in this module reads actor
//! parameters: critic updates are independent of the actor by construction.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::maxq::{concat_batch, lambda_va_loss, MaxQPair};
use crate::nn::{Activation, MlpGrads, MlpNet};
use crate::replay::MiniBatch;

pub const DEFAULT_DISCOUNT: f64 = 0.99;

/// Q-network, two value/advantage pairs, and target value networks.
#[derive(Debug, Clone)]
pub struct CriticEnsemble {
    pub q: MlpNet,
    pub pairs: [MaxQPair; 2],
    pub value_targets: [MlpNet; 2],
    gamma: f64,
}

impl CriticEnsemble {
    /// Fresh networks with the given hidden sizes. Target networks start as
    /// exact copies of the online value networks.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rho: f64,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidConfig(format!(
                "discount must be in [0, 1), got {gamma}"
            )));
        }
        let mut v_sizes = vec![state_dim];
        v_sizes.extend_from_slice(hidden);
        v_sizes.push(1);
        let mut q_sizes = vec![state_dim + action_dim];
        q_sizes.extend_from_slice(hidden);
        q_sizes.push(1);

        let q = MlpNet::new(&q_sizes, Activation::Relu, rng);
        let make_pair = |rng: &mut R| -> Result<MaxQPair> {
            let value = MlpNet::new(&v_sizes, Activation::Relu, rng);
            let advantage = MlpNet::new(&q_sizes, Activation::Relu, rng);
            MaxQPair::new(value, advantage, rho)
        };
        let pairs = [make_pair(rng)?, make_pair(rng)?];
        let value_targets = [pairs[0].value.clone(), pairs[1].value.clone()];
        Ok(CriticEnsemble {
            q,
            pairs,
            value_targets,
            gamma,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `r + gamma * min_i V_target_i(s')`, or exactly `r` on terminal
    /// transitions (the discount is zeroed, not the value).
    pub fn bootstrap_target(&self, reward: f64, next_state: ArrayView1<f64>, terminal: bool) -> f64 {
        if terminal {
            return reward;
        }
        let v0 = self.value_targets[0].forward(next_state)[0];
        let v1 = self.value_targets[1].forward(next_state)[0];
        reward + self.gamma * v0.min(v1)
    }

    /// Batched bootstrap targets, computed once per gradient step and shared
    /// by the Q loss and both value/advantage losses.
    pub fn bootstrap_targets(&self, batch: &MiniBatch) -> Vec<f64> {
        let v0 = self.value_targets[0].forward_batch(batch.next_states.view());
        let v1 = self.value_targets[1].forward_batch(batch.next_states.view());
        (0..batch.len())
            .map(|i| {
                if batch.terminals[i] {
                    batch.rewards[i]
                } else {
                    batch.rewards[i] + self.gamma * v0[[i, 0]].min(v1[[i, 0]])
                }
            })
            .collect()
    }

    /// Mean squared error between `Q(s, a)` and the bootstrap targets;
    /// gradients flow only into the Q-network (targets are constants).
    pub fn critic_loss(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        targets: &[f64],
    ) -> Result<(f64, MlpGrads)> {
        let n = states.nrows();
        if n == 0 {
            return Err(Error::EmptyBatch("critic_loss"));
        }
        assert_eq!(targets.len(), n, "state/target batch mismatch");
        let sa = concat_batch(states, actions);
        let trace = self.q.forward_trace(sa.view());
        let inv_n = 1.0 / n as f64;
        let mut loss = 0.0;
        let mut og = Array2::zeros((n, 1));
        {
            let out = trace.output();
            for i in 0..n {
                let diff = out[[i, 0]] - targets[i];
                loss += diff * diff * inv_n;
                og[[i, 0]] = 2.0 * diff * inv_n;
            }
        }
        let (grads, _) = self.q.backward_trace(&trace, og.view());
        Ok((loss, grads))
    }

    /// Per-pair value/advantage losses and gradients against the shared
    /// bootstrap targets. Both pairs see the same targets but keep separate
    /// parameters.
    pub fn value_advantage_losses(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        targets: &[f64],
    ) -> Result<[(f64, MlpGrads, MlpGrads); 2]> {
        if states.nrows() == 0 {
            return Err(Error::EmptyBatch("value_advantage_losses"));
        }
        let first = lambda_va_loss(&self.pairs[0], states, actions, targets)?;
        let second = lambda_va_loss(&self.pairs[1], states, actions, targets)?;
        Ok([first, second])
    }

    /// `min_i V_i(s)` using the ONLINE value networks (guide-head target set).
    pub fn min_online_values(&self, states: ArrayView2<f64>) -> Vec<f64> {
        let v0 = self.pairs[0].value.forward_batch(states);
        let v1 = self.pairs[1].value.forward_batch(states);
        (0..states.nrows())
            .map(|i| v0[[i, 0]].min(v1[[i, 0]]))
            .collect()
    }
}
