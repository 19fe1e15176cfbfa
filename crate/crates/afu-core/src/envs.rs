//! Desk-scale environments.
//!
//! * [`SfmEnv`] — a single-state bandit with a one-dimensional action and an
//!   asymmetric, discontinuous reward. Its optimal return is exactly 5 at
//!   `a = 0.1`; the flat zero-reward region left of the discontinuity at
//!   `a = -0.6` traps unimodal actors trained against a smoothed critic.
//! * [`PointReachEnv`] — a 20-step 1-D point-mass task with quadratic cost,
//!   small enough that a dynamic-programming oracle is cheap.
//! * [`toy_oracle`] — the closed-form surface used by the max-Q benchmark.
//!
//! Episode truncation is distinct from environment death: a truncated episode
//! ends for bookkeeping reasons, so bootstrapping must still look at the next
//! state's value. [`StepOutcome`] reports both flags; SFM episodes genuinely
//! terminate, point-reach episodes only truncate.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};

/// Static description of an environment.
#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub name: &'static str,
    pub state_dim: usize,
    pub action_dim: usize,
    pub max_episode_len: usize,
}

/// Result of a single environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Environment death: bootstrap with zero continuation value.
    pub terminal: bool,
    /// Episode cut short: reset, but bootstrap normally.
    pub truncated: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> StepOutcome;
    /// A fresh instance of the same environment, for evaluation rollouts.
    fn fresh(&self) -> Box<dyn Environment>;
}

/// Reward of the single-state failure-mode bandit:
/// `5 - 100 (a - 0.1)^2` for `a >= -0.6`, else `0`.
#[inline]
pub fn sfm_reward(a: f64) -> f64 {
    if a >= -0.6 {
        5.0 - 100.0 * (a - 0.1) * (a - 0.1)
    } else {
        0.0
    }
}

/// One state, one step, 1-D action in [-1, 1]. Every transition is terminal.
#[derive(Debug, Clone)]
pub struct SfmEnv {
    spec: EnvSpec,
}

impl SfmEnv {
    pub fn new() -> Self {
        SfmEnv {
            spec: EnvSpec {
                name: "sfm",
                state_dim: 1,
                action_dim: 1,
                max_episode_len: 1,
            },
        }
    }
}

impl Default for SfmEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for SfmEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
        // The single state's observation encoding.
        vec![0.0]
    }

    fn step(&mut self, action: &[f64]) -> StepOutcome {
        let mut a = action[0];
        if !(-1.0..=1.0).contains(&a) {
            log::warn!("sfm action {a} out of [-1, 1]; clamping");
            a = a.clamp(-1.0, 1.0);
        }
        StepOutcome {
            next_state: vec![0.0],
            reward: sfm_reward(a),
            terminal: true,
            truncated: false,
        }
    }

    fn fresh(&self) -> Box<dyn Environment> {
        Box::new(SfmEnv::new())
    }
}

pub const POINT_REACH_HORIZON: usize = 20;

/// 1-D point mass: `x' = clamp(x + 0.1 a, -1, 1)`, reward `-x'^2`, episodes
/// truncate after 20 steps, initial position uniform in [-1, 1].
#[derive(Debug, Clone)]
pub struct PointReachEnv {
    spec: EnvSpec,
    x: f64,
    t: usize,
}

impl PointReachEnv {
    pub fn new() -> Self {
        PointReachEnv {
            spec: EnvSpec {
                name: "point_reach",
                state_dim: 1,
                action_dim: 1,
                max_episode_len: POINT_REACH_HORIZON,
            },
            x: 0.0,
            t: 0,
        }
    }

    /// Start an episode from a chosen position (oracle comparisons).
    pub fn reset_to(&mut self, x: f64) -> Vec<f64> {
        self.x = x.clamp(-1.0, 1.0);
        self.t = 0;
        vec![self.x]
    }
}

impl Default for PointReachEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for PointReachEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.x = rng.random_range(-1.0..=1.0);
        self.t = 0;
        vec![self.x]
    }

    fn step(&mut self, action: &[f64]) -> StepOutcome {
        debug_assert!(action[0].abs() <= 1.0 + 1e-9);
        let a = action[0].clamp(-1.0, 1.0);
        self.x = (self.x + 0.1 * a).clamp(-1.0, 1.0);
        self.t += 1;
        StepOutcome {
            next_state: vec![self.x],
            reward: -self.x * self.x,
            terminal: false,
            truncated: self.t >= POINT_REACH_HORIZON,
        }
    }

    fn fresh(&self) -> Box<dyn Environment> {
        Box::new(PointReachEnv::new())
    }
}

/// Closed-form benchmark surface `sin(4s) + 0.7 cos(4a)` on [-1, 1]^2. Its
/// per-state maximum over actions is `sin(4s) + 0.7`, attained at `a = 0`.
#[inline]
pub fn toy_oracle(s: f64, a: f64) -> f64 {
    (4.0 * s).sin() + 0.7 * (4.0 * a).cos()
}

/// Look up an environment by its CLI/config name.
pub fn env_by_name(name: &str) -> Result<Box<dyn Environment>> {
    match name {
        "sfm" => Ok(Box::new(SfmEnv::new())),
        "point_reach" => Ok(Box::new(PointReachEnv::new())),
        other => Err(Error::UnknownName(format!("environment '{other}'"))),
    }
}
