//! The interleaved environment/gradient training loop for both variants.
//!
//! One iteration is a single environment step followed by a single gradient
//! step (after a warmup phase of uniformly random actions with no gradient
//! steps). Each gradient step applies updates in a fixed order: the Q-network,
//! then each value/advantage pair followed by its target soft-update, then —
//! beta variant only — the guide head, then the policy, then the temperature.
//! The per-step order is recorded in an inspectable trace.
//!
//! Actor-side gradients are computed from a single resampling snapshot per
//! step (one noise draw per state) and then applied sequentially in the order
//! above. Critic updates never read actor parameters, which makes the critic
//! trajectory of a run independent of whether actor updates happen at all —
//! an invariant the test suite checks bit-for-bit.
//!
//! Randomness is split into independent, seeded streams (initialization,
//! environment interaction, batch sampling, actor resampling noise,
//! evaluation) so runs are reproducible and the streams do not interfere.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::actor::{
    actor_loss_alpha, actor_loss_beta, mu_loss, mu_targets, temperature_loss, PolicyNet,
    PolicyVariant, Temperature,
};
use crate::critic::CriticEnsemble;
use crate::envs::{env_by_name, Environment};
use crate::error::{Error, Result};
use crate::maxq::concat_batch;
use crate::nn::{soft_update, AdamState, ScalarAdam};
use crate::replay::{ReplayBuffer, Transition, DEFAULT_REPLAY_CAPACITY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AfuVariant {
    Alpha,
    Beta,
}

impl std::fmt::Display for AfuVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AfuVariant::Alpha => write!(f, "alpha"),
            AfuVariant::Beta => write!(f, "beta"),
        }
    }
}

impl std::str::FromStr for AfuVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(AfuVariant::Alpha),
            "beta" => Ok(AfuVariant::Beta),
            other => Err(Error::UnknownName(format!("variant '{other}'"))),
        }
    }
}

/// Every hyperparameter of a training run. Serializes to flat JSON; the CLI
/// overlays command-line flags on top of a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AfuConfig {
    pub variant: AfuVariant,
    pub env: String,
    /// Value-gradient scaling coefficient, in (0, 1).
    pub rho: f64,
    /// Target smoothing coefficient, in (0, 1).
    pub tau: f64,
    /// Discount, in [0, 1).
    pub gamma: f64,
    /// Defaults to minus the action dimension when absent.
    pub target_entropy: Option<f64>,
    pub initial_temperature: f64,
    pub lr_q: f64,
    pub lr_va: f64,
    pub lr_pi: f64,
    pub lr_temp: f64,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub total_steps: u64,
    /// Uniform random actions, no gradient steps.
    pub warmup_steps: u64,
    pub eval_interval: u64,
    pub eval_rollouts: usize,
    pub seed: u64,
}

impl AfuConfig {
    /// Reference hyperparameters: Adam everywhere at 3e-4, discount 0.99,
    /// smoothing 0.01, batch 256, two hidden layers of 256 units, initial
    /// temperature 1, target entropy -d.
    pub fn new(env: impl Into<String>, variant: AfuVariant) -> Self {
        AfuConfig {
            variant,
            env: env.into(),
            rho: 0.3,
            tau: 0.01,
            gamma: 0.99,
            target_entropy: None,
            initial_temperature: 1.0,
            lr_q: 3e-4,
            lr_va: 3e-4,
            lr_pi: 3e-4,
            lr_temp: 3e-4,
            hidden: vec![256, 256],
            batch_size: 256,
            buffer_capacity: DEFAULT_REPLAY_CAPACITY,
            total_steps: 1_000_000,
            warmup_steps: 10_000,
            eval_interval: 10_000,
            eval_rollouts: 10,
            seed: 0,
        }
    }

    /// Desk-scale run on the failure-mode bandit: 20k steps, 1k random
    /// warmup steps, small networks (the task is one-dimensional).
    pub fn sfm_desk(variant: AfuVariant, seed: u64) -> Self {
        let mut cfg = AfuConfig::new("sfm", variant);
        cfg.hidden = vec![128, 128];
        cfg.total_steps = 20_000;
        cfg.warmup_steps = 1_000;
        cfg.eval_interval = 250;
        cfg.eval_rollouts = 10;
        cfg.seed = seed;
        cfg
    }

    /// Desk-scale run on the point-reach task.
    pub fn point_reach_desk(variant: AfuVariant, seed: u64) -> Self {
        let mut cfg = AfuConfig::new("point_reach", variant);
        cfg.hidden = vec![32, 32];
        cfg.total_steps = 50_000;
        cfg.warmup_steps = 1_000;
        cfg.eval_interval = 500;
        cfg.eval_rollouts = 30;
        cfg.seed = seed;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_q", self.lr_q),
            ("lr_va", self.lr_va),
            ("lr_pi", self.lr_pi),
            ("lr_temp", self.lr_temp),
            ("initial_temperature", self.initial_temperature),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rho must be in (0, 1), got {}",
                self.rho
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tau must be in (0, 1), got {}",
                self.tau
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be in [0, 1), got {}",
                self.gamma
            )));
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::InvalidConfig(format!(
                "warmup ({}) exceeds total steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.warmup_steps == 0 && self.total_steps > 0 {
            return Err(Error::InvalidConfig(
                "need at least one warmup step to seed the replay buffer".into(),
            ));
        }
        if self.batch_size == 0 || self.eval_rollouts == 0 || self.eval_interval == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, eval_rollouts and eval_interval must be >= 1".into(),
            ));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::InvalidConfig("buffer_capacity must be >= 1".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("hidden sizes must be >= 1".into()));
        }
        env_by_name(&self.env)?;
        Ok(())
    }

    pub fn resolved_target_entropy(&self, action_dim: usize) -> f64 {
        self.target_entropy.unwrap_or(-(action_dim as f64))
    }
}

/// One learning-curve row. Losses and the entropy estimate come from the most
/// recent gradient step; they are empty during warmup. `loss_mu` stays empty
/// for the alpha variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub mean_return: f64,
    pub entropy: Option<f64>,
    pub alpha: f64,
    pub loss_q: Option<f64>,
    pub loss_va: Option<f64>,
    pub loss_pi: Option<f64>,
    pub loss_temp: Option<f64>,
    pub loss_mu: Option<f64>,
}

/// Losses of a single gradient step.
#[derive(Debug, Clone)]
pub struct StepLosses {
    pub q: f64,
    pub va: f64,
    pub pi: f64,
    pub temp: f64,
    pub mu: Option<f64>,
    pub entropy: f64,
}

impl StepLosses {
    fn first_non_finite(&self) -> Option<&'static str> {
        if !self.q.is_finite() {
            return Some("loss_q");
        }
        if !self.va.is_finite() {
            return Some("loss_va");
        }
        if !self.pi.is_finite() {
            return Some("loss_pi");
        }
        if !self.temp.is_finite() {
            return Some("loss_temp");
        }
        if let Some(mu) = self.mu {
            if !mu.is_finite() {
                return Some("loss_mu");
            }
        }
        None
    }
}

/// Which parameter set a gradient step touched, in application order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateEvent {
    Q,
    ValueAdvantage(usize),
    TargetSoft(usize),
    /// `applied` is false when the guide-head target set was empty and the
    /// update was skipped.
    Mu { applied: bool },
    Policy,
    Temperature,
}

#[derive(Debug, Clone)]
pub struct AbortInfo {
    pub step: u64,
    pub what: String,
}

/// Learning curve plus an abort marker when training stopped on a non-finite
/// loss. Aborted runs keep the records emitted so far, with one diagnostic
/// record appended at the abort step.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<EvalRecord>,
    pub abort: Option<AbortInfo>,
}

/// How the trainer picks environment actions.
enum ActionSource {
    Policy,
    /// Fixed action per environment step; used by the paired-run tests.
    Scripted(Vec<Vec<f64>>),
}

pub struct Trainer {
    config: AfuConfig,
    env: Box<dyn Environment>,
    ensemble: CriticEnsemble,
    policy: PolicyNet,
    temperature: Temperature,
    adam_q: AdamState,
    adam_value: [AdamState; 2],
    adam_advantage: [AdamState; 2],
    adam_policy: AdamState,
    adam_mu: Option<AdamState>,
    adam_temp: ScalarAdam,
    buffer: ReplayBuffer,
    rng_env: ChaCha8Rng,
    rng_batch: ChaCha8Rng,
    rng_noise: ChaCha8Rng,
    rng_eval: ChaCha8Rng,
    state: Vec<f64>,
    env_steps: u64,
    last_losses: Option<StepLosses>,
    update_trace: Vec<UpdateEvent>,
    actor_updates_enabled: bool,
    action_source: ActionSource,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Trainer {
    pub fn new(config: AfuConfig) -> Result<Self> {
        config.validate()?;
        let mut env = env_by_name(&config.env)?;
        let (state_dim, action_dim) = (env.spec().state_dim, env.spec().action_dim);

        let mut rng_init = stream_rng(config.seed, 0);
        let mut rng_env = stream_rng(config.seed, 1);
        let rng_batch = stream_rng(config.seed, 2);
        let rng_noise = stream_rng(config.seed, 3);
        let rng_eval = stream_rng(config.seed, 4);

        let ensemble = CriticEnsemble::new(
            state_dim,
            action_dim,
            &config.hidden,
            config.rho,
            config.gamma,
            &mut rng_init,
        )?;
        let variant = match config.variant {
            AfuVariant::Alpha => PolicyVariant::Alpha,
            AfuVariant::Beta => PolicyVariant::Beta,
        };
        let policy = PolicyNet::new(state_dim, action_dim, &config.hidden, variant, &mut rng_init);
        let temperature = Temperature::new(
            config.initial_temperature,
            config.resolved_target_entropy(action_dim),
        )?;

        let adam_q = AdamState::new("q", &ensemble.q, config.lr_q);
        let adam_value = [
            AdamState::new("value_1", &ensemble.pairs[0].value, config.lr_va),
            AdamState::new("value_2", &ensemble.pairs[1].value, config.lr_va),
        ];
        let adam_advantage = [
            AdamState::new("advantage_1", &ensemble.pairs[0].advantage, config.lr_va),
            AdamState::new("advantage_2", &ensemble.pairs[1].advantage, config.lr_va),
        ];
        let adam_policy = AdamState::new("policy", policy.net(), config.lr_pi);
        let adam_mu = match config.variant {
            AfuVariant::Beta => Some(AdamState::new("mu", policy.net(), config.lr_pi)),
            AfuVariant::Alpha => None,
        };
        let adam_temp = ScalarAdam::new(config.lr_temp);

        let buffer = ReplayBuffer::new(config.buffer_capacity);
        let state = env.reset(&mut rng_env);

        Ok(Trainer {
            config,
            env,
            ensemble,
            policy,
            temperature,
            adam_q,
            adam_value,
            adam_advantage,
            adam_policy,
            adam_mu,
            adam_temp,
            buffer,
            rng_env,
            rng_batch,
            rng_noise,
            rng_eval,
            state,
            env_steps: 0,
            last_losses: None,
            update_trace: Vec::new(),
            actor_updates_enabled: true,
            action_source: ActionSource::Policy,
        })
    }

    pub fn config(&self) -> &AfuConfig {
        &self.config
    }

    pub fn critic(&self) -> &CriticEnsemble {
        &self.ensemble
    }

    pub fn policy(&self) -> &PolicyNet {
        &self.policy
    }

    pub fn temperature(&self) -> &Temperature {
        &self.temperature
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn last_losses(&self) -> Option<&StepLosses> {
        self.last_losses.as_ref()
    }

    /// Update order of the most recent gradient step.
    pub fn last_update_trace(&self) -> &[UpdateEvent] {
        &self.update_trace
    }

    /// Disable policy, guide and temperature updates (critic-independence
    /// tests). Critic updates proceed normally.
    pub fn set_actor_updates_enabled(&mut self, enabled: bool) {
        self.actor_updates_enabled = enabled;
    }

    /// Force the environment action sequence, one action per step.
    pub fn set_scripted_actions(&mut self, actions: Vec<Vec<f64>>) {
        self.action_source = ActionSource::Scripted(actions);
    }

    fn pick_action(&mut self) -> Vec<f64> {
        let d = self.env.spec().action_dim;
        match &self.action_source {
            ActionSource::Scripted(script) => {
                script[self.env_steps as usize].clone()
            }
            ActionSource::Policy => {
                if self.env_steps < self.config.warmup_steps {
                    (0..d).map(|_| self.rng_env.random_range(-1.0..=1.0)).collect()
                } else {
                    let noise =
                        Array1::from_shape_fn(d, |_| StandardNormal.sample(&mut self.rng_env));
                    let state = Array1::from_vec(self.state.clone());
                    let (a, _) = self.policy.sample_action(state.view(), noise.view());
                    a.to_vec()
                }
            }
        }
    }

    /// One environment step followed, after warmup, by one gradient step.
    /// Returns the gradient-step losses when one ran.
    pub fn step(&mut self) -> Result<Option<StepLosses>> {
        let action = self.pick_action();
        let outcome = self.env.step(&action);
        self.buffer.insert(Transition {
            state: std::mem::take(&mut self.state),
            action,
            reward: outcome.reward,
            next_state: outcome.next_state.clone(),
            terminal: outcome.terminal,
        })?;
        self.state = if outcome.terminal || outcome.truncated {
            self.env.reset(&mut self.rng_env)
        } else {
            outcome.next_state
        };
        self.env_steps += 1;

        if self.env_steps <= self.config.warmup_steps {
            return Ok(None);
        }
        let losses = self.gradient_step()?;
        self.last_losses = Some(losses.clone());
        Ok(Some(losses))
    }

    fn gradient_step(&mut self) -> Result<StepLosses> {
        self.update_trace.clear();
        let batch = self.buffer.sample(self.config.batch_size, &mut self.rng_batch)?;

        // Shared bootstrap targets, computed once per batch.
        let targets = self.ensemble.bootstrap_targets(&batch);

        let (loss_q, q_grads) =
            self.ensemble
                .critic_loss(batch.states.view(), batch.actions.view(), &targets)?;
        self.adam_q.step(&mut self.ensemble.q, &q_grads)?;
        self.update_trace.push(UpdateEvent::Q);

        let mut loss_va = 0.0;
        for i in 0..2 {
            let (loss, v_grads, a_grads) = crate::maxq::lambda_va_loss(
                &self.ensemble.pairs[i],
                batch.states.view(),
                batch.actions.view(),
                &targets,
            )?;
            loss_va += 0.5 * loss;
            self.adam_value[i].step(&mut self.ensemble.pairs[i].value, &v_grads)?;
            self.adam_advantage[i].step(&mut self.ensemble.pairs[i].advantage, &a_grads)?;
            self.update_trace.push(UpdateEvent::ValueAdvantage(i));
            soft_update(
                &mut self.ensemble.value_targets[i],
                &self.ensemble.pairs[i].value,
                self.config.tau,
            )?;
            self.update_trace.push(UpdateEvent::TargetSoft(i));
        }

        if !self.actor_updates_enabled {
            return Ok(StepLosses {
                q: loss_q,
                va: loss_va,
                pi: 0.0,
                temp: 0.0,
                mu: None,
                entropy: 0.0,
            });
        }

        // Actor phase: one resampling snapshot; gradients for the guide head,
        // policy and temperature are all computed from it, then applied in
        // order.
        let n = batch.len();
        let d = self.policy.action_dim();
        let noise = Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut self.rng_noise));
        let sample = self.policy.sample_batch(batch.states.view(), noise);

        let mut loss_mu = None;
        let mut mu_update = None;
        if self.config.variant == AfuVariant::Beta {
            let q_buffer: Vec<f64> = {
                let sa = concat_batch(batch.states.view(), batch.actions.view());
                self.ensemble.q.forward_batch(sa.view()).column(0).to_vec()
            };
            let q_resampled: Vec<f64> = {
                let sa = concat_batch(batch.states.view(), sample.actions.view());
                self.ensemble.q.forward_batch(sa.view()).column(0).to_vec()
            };
            let min_v = self.ensemble.min_online_values(batch.states.view());
            let targets = mu_targets(
                &q_buffer,
                &q_resampled,
                &min_v,
                batch.actions.view(),
                sample.actions.view(),
            );
            let out = mu_loss(&self.policy, &sample, &targets)?;
            loss_mu = Some(out.loss);
            mu_update = Some((out.grads, !targets.is_empty()));
        }

        let alpha = self.temperature.alpha();
        let actor_out = match self.config.variant {
            AfuVariant::Alpha => actor_loss_alpha(&self.policy, &sample, alpha, &self.ensemble.q)?,
            AfuVariant::Beta => actor_loss_beta(&self.policy, &sample, alpha, &self.ensemble)?,
        };
        let (loss_temp, temp_grad) = temperature_loss(&sample.log_probs, &self.temperature)?;

        if let Some((grads, apply)) = mu_update {
            if apply {
                self.adam_mu
                    .as_mut()
                    .expect("beta variant has a mu optimizer")
                    .step(self.policy.net_mut(), &grads)?;
            }
            self.update_trace.push(UpdateEvent::Mu { applied: apply });
        }
        self.adam_policy.step(self.policy.net_mut(), &actor_out.grads)?;
        self.update_trace.push(UpdateEvent::Policy);
        self.adam_temp.step(self.temperature.log_alpha_mut(), temp_grad)?;
        self.update_trace.push(UpdateEvent::Temperature);

        Ok(StepLosses {
            q: loss_q,
            va: loss_va,
            pi: actor_out.loss,
            temp: loss_temp,
            mu: loss_mu,
            entropy: -actor_out.mean_log_prob,
        })
    }

    fn eval_record(&mut self, step: u64) -> EvalRecord {
        let mean_return = evaluate(
            &self.policy,
            self.env.as_ref(),
            self.config.eval_rollouts,
            &mut self.rng_eval,
        );
        let (entropy, loss_q, loss_va, loss_pi, loss_temp, loss_mu) = match &self.last_losses {
            Some(l) => (
                Some(l.entropy),
                Some(l.q),
                Some(l.va),
                Some(l.pi),
                Some(l.temp),
                l.mu,
            ),
            None => (None, None, None, None, None, None),
        };
        EvalRecord {
            step,
            mean_return,
            entropy,
            alpha: self.temperature.alpha(),
            loss_q,
            loss_va,
            loss_pi,
            loss_temp,
            loss_mu,
        }
    }

    /// Run the configured number of steps, emitting one record per evaluation
    /// interval. Stops early with a diagnostic record if any loss or gradient
    /// stops being finite.
    pub fn run(&mut self) -> Result<TrainOutcome> {
        let mut records = Vec::new();
        while self.env_steps < self.config.total_steps {
            match self.step() {
                Ok(losses) => {
                    if let Some(what) = losses.as_ref().and_then(|l| l.first_non_finite()) {
                        let mut rec = self.eval_record(self.env_steps);
                        rec.mean_return = f64::NAN;
                        records.push(rec);
                        return Ok(TrainOutcome {
                            records,
                            abort: Some(AbortInfo {
                                step: self.env_steps,
                                what: what.to_string(),
                            }),
                        });
                    }
                }
                Err(Error::NonFinite { what, .. }) => {
                    let mut rec = self.eval_record(self.env_steps);
                    rec.mean_return = f64::NAN;
                    records.push(rec);
                    return Ok(TrainOutcome {
                        records,
                        abort: Some(AbortInfo {
                            step: self.env_steps,
                            what,
                        }),
                    });
                }
                Err(e) => return Err(e),
            }
            if self.env_steps % self.config.eval_interval == 0 {
                records.push(self.eval_record(self.env_steps));
            }
        }
        Ok(TrainOutcome {
            records,
            abort: None,
        })
    }
}

/// Train from a config; the one-call entry point behind the CLI.
pub fn train(config: AfuConfig) -> Result<TrainOutcome> {
    Trainer::new(config)?.run()
}

/// Deterministic-mode rollouts: the policy emits the squashed distribution
/// mean (no noise); returns the mean undiscounted return. Rollouts use a fresh
/// copy of the environment.
pub fn evaluate(
    policy: &PolicyNet,
    env: &dyn Environment,
    n_rollouts: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    assert!(n_rollouts >= 1, "need at least one rollout");
    let mut total = 0.0;
    for _ in 0..n_rollouts {
        let mut e = env.fresh();
        let mut s = e.reset(rng);
        loop {
            let state = Array1::from_vec(s);
            let a = policy.deterministic_action(state.view());
            let out = e.step(a.as_slice().unwrap());
            total += out.reward;
            if out.terminal || out.truncated {
                break;
            }
            s = out.next_state;
        }
    }
    total / n_rollouts as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{PointReachEnv, SfmEnv, POINT_REACH_HORIZON};
    use crate::nn::{Activation, MlpNet};
    use ndarray::array;

    fn tiny_config(variant: AfuVariant) -> AfuConfig {
        let mut cfg = AfuConfig::sfm_desk(variant, 7);
        cfg.hidden = vec![8, 8];
        cfg.total_steps = 60;
        cfg.warmup_steps = 20;
        cfg.eval_interval = 20;
        cfg.eval_rollouts = 2;
        cfg.batch_size = 16;
        cfg
    }

    #[test]
    fn reference_defaults_match_published_values() {
        let cfg = AfuConfig::new("sfm", AfuVariant::Alpha);
        assert_eq!(cfg.gamma, 0.99);
        assert_eq!(cfg.tau, 0.01);
        assert_eq!(cfg.lr_q, 3e-4);
        assert_eq!(cfg.lr_va, 3e-4);
        assert_eq!(cfg.lr_pi, 3e-4);
        assert_eq!(cfg.lr_temp, 3e-4);
        assert_eq!(cfg.batch_size, 256);
        assert_eq!(cfg.hidden, vec![256, 256]);
        assert_eq!(cfg.buffer_capacity, 1_000_000);
        assert_eq!(cfg.warmup_steps, 10_000);
        assert_eq!(cfg.initial_temperature, 1.0);
        // Target entropy defaults to minus the action dimension.
        assert_eq!(cfg.resolved_target_entropy(1), -1.0);
        assert_eq!(cfg.resolved_target_entropy(6), -6.0);
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let mut cfg = tiny_config(AfuVariant::Alpha);
        cfg.rho = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_config(AfuVariant::Alpha);
        cfg.tau = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_config(AfuVariant::Alpha);
        cfg.warmup_steps = cfg.total_steps + 1;
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_config(AfuVariant::Alpha);
        cfg.env = "nope".into();
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_config(AfuVariant::Alpha);
        cfg.lr_q = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_roundtrip_is_flat_and_lossless() {
        let cfg = AfuConfig::sfm_desk(AfuVariant::Beta, 3);
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        assert!(json.contains("\"variant\": \"beta\""));
        assert!(json.contains("\"lr_q\""));
        let back: AfuConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.seed, 3);
        assert_eq!(back.variant, AfuVariant::Beta);
        assert_eq!(back.hidden, cfg.hidden);
    }

    #[test]
    fn warmup_only_run_keeps_parameters_untouched() {
        let mut cfg = tiny_config(AfuVariant::Alpha);
        cfg.total_steps = 20;
        cfg.warmup_steps = 20;
        let mut trainer = Trainer::new(cfg).unwrap();
        let q_before = trainer.critic().q.params_flat();
        let pi_before = trainer.policy().net().params_flat();
        let outcome = trainer.run().unwrap();
        assert!(outcome.abort.is_none());
        assert_eq!(trainer.critic().q.params_flat(), q_before);
        assert_eq!(trainer.policy().net().params_flat(), pi_before);
        assert_eq!(trainer.buffer().len(), 20);
        // Warmup records carry no losses.
        assert!(outcome.records.iter().all(|r| r.loss_q.is_none()));
    }

    #[test]
    fn update_order_matches_algorithm_trace() {
        let mut trainer = Trainer::new(tiny_config(AfuVariant::Beta)).unwrap();
        for _ in 0..30 {
            trainer.step().unwrap();
        }
        let trace = trainer.last_update_trace();
        assert_eq!(trace[0], UpdateEvent::Q);
        assert_eq!(trace[1], UpdateEvent::ValueAdvantage(0));
        assert_eq!(trace[2], UpdateEvent::TargetSoft(0));
        assert_eq!(trace[3], UpdateEvent::ValueAdvantage(1));
        assert_eq!(trace[4], UpdateEvent::TargetSoft(1));
        assert!(matches!(trace[5], UpdateEvent::Mu { .. }));
        assert_eq!(trace[6], UpdateEvent::Policy);
        assert_eq!(trace[7], UpdateEvent::Temperature);
        assert_eq!(trace.len(), 8);

        let mut trainer = Trainer::new(tiny_config(AfuVariant::Alpha)).unwrap();
        for _ in 0..30 {
            trainer.step().unwrap();
        }
        let trace = trainer.last_update_trace();
        assert_eq!(trace.len(), 7, "alpha variant has no mu update");
        assert_eq!(trace[5], UpdateEvent::Policy);
    }

    #[test]
    fn identical_seeds_reproduce_identical_runs() {
        let cfg = tiny_config(AfuVariant::Beta);
        let a = train(cfg.clone()).unwrap();
        let b = train(cfg).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.step, rb.step);
            assert_eq!(ra.mean_return, rb.mean_return);
            assert_eq!(ra.alpha, rb.alpha);
            assert_eq!(ra.loss_q, rb.loss_q);
        }
    }

    #[test]
    fn record_steps_strictly_increase() {
        let outcome = train(tiny_config(AfuVariant::Alpha)).unwrap();
        assert!(!outcome.records.is_empty());
        for w in outcome.records.windows(2) {
            assert!(w[0].step < w[1].step);
        }
    }

    #[test]
    fn evaluate_sfm_with_rigged_policy_modes() {
        // Mode at 0.1: return exactly 5. Mode saturated at -1: return 0.
        let mut policy = PolicyNet::zeros(1, 1, &[4], PolicyVariant::Alpha);
        let n_layers = policy.net().sizes().len() - 1;
        {
            let (_, b) = policy.net_mut().layer_mut(n_layers - 1);
            b[0] = 0.1f64.atanh();
        }
        let env = SfmEnv::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(evaluate(&policy, &env, 4, &mut rng), 5.0);

        {
            let (_, b) = policy.net_mut().layer_mut(n_layers - 1);
            b[0] = -40.0;
        }
        assert_eq!(evaluate(&policy, &env, 4, &mut rng), 0.0);
    }

    #[test]
    fn zero_policy_from_origin_stays_at_zero_return() {
        let policy = PolicyNet::zeros(1, 1, &[4], PolicyVariant::Alpha);
        let mut env = PointReachEnv::new();
        env.reset_to(0.0);
        let mut total = 0.0;
        for _ in 0..POINT_REACH_HORIZON {
            let a = policy.deterministic_action(array![0.0].view());
            let out = env.step(a.as_slice().unwrap());
            total += out.reward;
            if out.truncated {
                break;
            }
        }
        assert_eq!(total, 0.0);
    }

    #[test]
    fn critic_trajectory_is_independent_of_actor_updates() {
        // Paired run: same scripted actions, actor updates on vs off. The
        // critic parameter trajectories must match bit for bit.
        let cfg = tiny_config(AfuVariant::Alpha);
        let mut script_rng = ChaCha8Rng::seed_from_u64(99);
        let script: Vec<Vec<f64>> = (0..cfg.total_steps)
            .map(|_| vec![script_rng.random_range(-1.0..1.0)])
            .collect();

        let mut with_actor = Trainer::new(cfg.clone()).unwrap();
        with_actor.set_scripted_actions(script.clone());
        let mut without_actor = Trainer::new(cfg.clone()).unwrap();
        without_actor.set_scripted_actions(script);
        without_actor.set_actor_updates_enabled(false);

        for _ in 0..cfg.total_steps {
            with_actor.step().unwrap();
            without_actor.step().unwrap();
            assert_eq!(
                with_actor.critic().q.params_flat(),
                without_actor.critic().q.params_flat()
            );
            for i in 0..2 {
                assert_eq!(
                    with_actor.critic().pairs[i].value.params_flat(),
                    without_actor.critic().pairs[i].value.params_flat()
                );
                assert_eq!(
                    with_actor.critic().pairs[i].advantage.params_flat(),
                    without_actor.critic().pairs[i].advantage.params_flat()
                );
                assert_eq!(
                    with_actor.critic().value_targets[i].params_flat(),
                    without_actor.critic().value_targets[i].params_flat()
                );
            }
        }
        // And the actor did actually move in the enabled run.
        assert_ne!(
            with_actor.policy().net().params_flat(),
            without_actor.policy().net().params_flat()
        );
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic_record() {
        let mut trainer = Trainer::new(tiny_config(AfuVariant::Alpha)).unwrap();
        // Poison the Q network mid-run.
        for _ in 0..25 {
            trainer.step().unwrap();
        }
        let mut poisoned = MlpNet::zeros(trainer.critic().q.sizes(), Activation::Relu);
        let mut params = poisoned.params_flat();
        // Poison the output bias; a NaN upstream of a ReLU would be masked.
        let last = params.len() - 1;
        params[last] = f64::INFINITY;
        poisoned.set_params_flat(&params);
        trainer.ensemble.q = poisoned;
        let outcome = trainer.run().unwrap();
        let abort = outcome.abort.expect("run must abort");
        assert!(abort.step > 25);
        let last = outcome.records.last().unwrap();
        assert_eq!(last.step, abort.step);
        assert!(last.mean_return.is_nan());
    }

    #[test]
    fn scripted_warmup_inserts_bounded_actions() {
        let mut trainer = Trainer::new(tiny_config(AfuVariant::Alpha)).unwrap();
        for _ in 0..40 {
            trainer.step().unwrap();
        }
        for i in 0..trainer.buffer().len() {
            let t = trainer.buffer().get(i);
            assert!(t.action[0].abs() <= 1.0);
        }
    }

    #[test]
    fn variant_parses_from_str() {
        assert_eq!("alpha".parse::<AfuVariant>().unwrap(), AfuVariant::Alpha);
        assert_eq!("beta".parse::<AfuVariant>().unwrap(), AfuVariant::Beta);
        assert!("gamma".parse::<AfuVariant>().is_err());
    }
}
