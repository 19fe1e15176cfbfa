//! Squashed-Gaussian stochastic policy with entropy-temperature adaptation,
//! plus the deterministic guide head and gradient projection used by the
//! `beta` variant.
//!
//! The policy backbone maps a state to per-dimension Gaussian parameters
//! (mean, pre-squash log-std); actions are `tanh(mean + std * noise)` with the
//! exact change-of-variables density. In the `beta` variant the same backbone
//! grows a third head, a deterministic guide `mu(s)` trained by regression
//! toward actions whose Q-value beats the minimum online value estimate. The
//! guide supplies a direction estimate toward the argmax; critic action
//! gradients that point away from it (outside the vicinity of the argmax) are
//! projected onto its orthogonal complement before entering the chain rule, so
//! deceptive gradients cannot trap the actor.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::critic::CriticEnsemble;
use crate::error::{Error, Result};
use crate::maxq::{concat_batch, concat_rows};
use crate::nn::{Activation, MlpGrads, MlpNet, Trace};

/// Clamp bounds for the pre-squash log standard deviation.
pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Squashed actions are kept strictly inside the open interval.
const ACTION_SQUASH_LIMIT: f64 = 1.0 - 1e-12;

/// Directions shorter than this are uninformative; the projection passes
/// gradients through unchanged.
const PROJECTION_DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyVariant {
    /// Mean and log-std heads only.
    Alpha,
    /// Adds the deterministic guide head.
    Beta,
}

impl PolicyVariant {
    fn heads(self) -> usize {
        match self {
            PolicyVariant::Alpha => 2,
            PolicyVariant::Beta => 3,
        }
    }
}

/// Policy backbone. Output layout per sample: `[mean(d), log_std_raw(d)]`,
/// plus `[mu_raw(d)]` for the beta variant; the heads share every other
/// parameter.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    net: MlpNet,
    state_dim: usize,
    action_dim: usize,
    variant: PolicyVariant,
}

/// State-conditional distribution parameters (single state).
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub mean: Array1<f64>,
    /// Clamped into [`LOG_STD_MIN`], [`LOG_STD_MAX`].
    pub log_std: Array1<f64>,
    /// Squashed guide-head output; beta variant only.
    pub mu: Option<Array1<f64>>,
}

/// Everything produced by one batched resampling pass: the forward trace (for
/// backprop), pre- and post-squash actions, the frozen noise, and per-sample
/// log-probabilities.
pub struct PolicySample {
    pub states: Array2<f64>,
    pub trace: Trace,
    pub noise: Array2<f64>,
    pub pre_tanh: Array2<f64>,
    pub actions: Array2<f64>,
    pub means: Array2<f64>,
    pub log_std_raw: Array2<f64>,
    pub log_std: Array2<f64>,
    pub stds: Array2<f64>,
    pub log_probs: Vec<f64>,
    /// Squashed guide outputs; beta variant only.
    pub mus: Option<Array2<f64>>,
}

impl PolicySample {
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn mean_log_prob(&self) -> f64 {
        self.log_probs.iter().sum::<f64>() / self.log_probs.len() as f64
    }
}

/// Per-dimension squashed-Gaussian log-density evaluated along the sampling
/// path: `u` is the pre-squash value, `noise = (u - mean) / std`.
///
/// `log N(u; mean, std) - log(1 - tanh(u)^2)` with the Jacobian term computed
/// stably through `u` rather than the squashed action.
#[inline]
pub fn squashed_log_prob_dim(log_std: f64, noise: f64, u: f64) -> f64 {
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
    -HALF_LN_2PI - log_std - 0.5 * noise * noise - log1m_tanh_sq(u)
}

/// `log(1 - tanh(u)^2)`, stable for large |u|.
#[inline]
fn log1m_tanh_sq(u: f64) -> f64 {
    let au = u.abs();
    2.0 * (std::f64::consts::LN_2 - au - (-2.0 * au).exp().ln_1p())
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        variant: PolicyVariant,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(variant.heads() * action_dim);
        PolicyNet {
            net: MlpNet::new(&sizes, Activation::Relu, rng),
            state_dim,
            action_dim,
            variant,
        }
    }

    /// Zero-parameter policy (mean 0, log-std 0, mu 0); used in tests.
    pub fn zeros(state_dim: usize, action_dim: usize, hidden: &[usize], variant: PolicyVariant) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(variant.heads() * action_dim);
        PolicyNet {
            net: MlpNet::zeros(&sizes, Activation::Relu),
            state_dim,
            action_dim,
            variant,
        }
    }

    pub fn variant(&self) -> PolicyVariant {
        self.variant
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn net(&self) -> &MlpNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut MlpNet {
        &mut self.net
    }

    /// Distribution parameters for one state.
    pub fn policy_output(&self, state: ArrayView1<f64>) -> PolicyOutput {
        let out = self.net.forward(state);
        let d = self.action_dim;
        let mean = out.slice(ndarray::s![..d]).to_owned();
        let log_std = out
            .slice(ndarray::s![d..2 * d])
            .mapv(|t| t.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let mu = match self.variant {
            PolicyVariant::Alpha => None,
            PolicyVariant::Beta => Some(
                out.slice(ndarray::s![2 * d..3 * d])
                    .mapv(|m| m.tanh()),
            ),
        };
        PolicyOutput { mean, log_std, mu }
    }

    /// Reparameterized sample for one state with caller-supplied standard
    /// normal noise. Returns the squashed action and its exact log-density.
    pub fn sample_action(&self, state: ArrayView1<f64>, noise: ArrayView1<f64>) -> (Array1<f64>, f64) {
        assert_eq!(noise.len(), self.action_dim, "noise dimension mismatch");
        let out = self.policy_output(state);
        let mut action = Array1::zeros(self.action_dim);
        let mut log_prob = 0.0;
        for j in 0..self.action_dim {
            let std = out.log_std[j].exp();
            let u = out.mean[j] + std * noise[j];
            action[j] = u.tanh().clamp(-ACTION_SQUASH_LIMIT, ACTION_SQUASH_LIMIT);
            log_prob += squashed_log_prob_dim(out.log_std[j], noise[j], u);
        }
        (action, log_prob)
    }

    /// Evaluation-mode action: the squashed distribution mean, no noise.
    pub fn deterministic_action(&self, state: ArrayView1<f64>) -> Array1<f64> {
        let out = self.policy_output(state);
        out.mean
            .mapv(|m| m.tanh().clamp(-ACTION_SQUASH_LIMIT, ACTION_SQUASH_LIMIT))
    }

    /// Batched resampling pass used by every actor-side loss. One noise row
    /// per state; the trace is kept so losses can backpropagate through the
    /// shared backbone.
    pub fn sample_batch(&self, states: ArrayView2<f64>, noise: Array2<f64>) -> PolicySample {
        let n = states.nrows();
        let d = self.action_dim;
        assert_eq!(noise.dim(), (n, d), "noise batch shape mismatch");
        let trace = self.net.forward_trace(states);
        let out = trace.output();

        let means = out.slice(ndarray::s![.., ..d]).to_owned();
        let log_std_raw = out.slice(ndarray::s![.., d..2 * d]).to_owned();
        let log_std = log_std_raw.mapv(|t| t.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let stds = log_std.mapv(f64::exp);
        let mus = match self.variant {
            PolicyVariant::Alpha => None,
            PolicyVariant::Beta => Some(out.slice(ndarray::s![.., 2 * d..3 * d]).mapv(f64::tanh)),
        };

        let mut pre_tanh = Array2::zeros((n, d));
        let mut actions = Array2::zeros((n, d));
        let mut log_probs = vec![0.0; n];
        for i in 0..n {
            for j in 0..d {
                let u = means[[i, j]] + stds[[i, j]] * noise[[i, j]];
                pre_tanh[[i, j]] = u;
                actions[[i, j]] = u.tanh().clamp(-ACTION_SQUASH_LIMIT, ACTION_SQUASH_LIMIT);
                log_probs[i] += squashed_log_prob_dim(log_std[[i, j]], noise[[i, j]], u);
            }
        }
        PolicySample {
            states: states.to_owned(),
            trace,
            noise,
            pre_tanh,
            actions,
            means,
            log_std_raw,
            log_std,
            stds,
            log_probs,
            mus,
        }
    }
}

/// Entropy temperature, optimized in log space so it stays positive.
#[derive(Debug, Clone)]
pub struct Temperature {
    log_alpha: f64,
    target_entropy: f64,
}

impl Temperature {
    pub fn new(initial_alpha: f64, target_entropy: f64) -> Result<Self> {
        if !(initial_alpha > 0.0 && initial_alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "initial temperature must be positive and finite, got {initial_alpha}"
            )));
        }
        Ok(Temperature {
            log_alpha: initial_alpha.ln(),
            target_entropy,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    pub fn log_alpha_mut(&mut self) -> &mut f64 {
        &mut self.log_alpha
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }
}

/// Temperature loss `Mean[-alpha * log_prob - alpha * target_entropy]` and its
/// gradient with respect to the log-temperature. Policy parameters are
/// constants here: only the sampled log-probabilities enter.
pub fn temperature_loss(log_probs: &[f64], temp: &Temperature) -> Result<(f64, f64)> {
    if log_probs.is_empty() {
        return Err(Error::EmptyBatch("temperature_loss"));
    }
    let mean_lp = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
    let alpha = temp.alpha();
    let loss = -alpha * (mean_lp + temp.target_entropy());
    // d/d(log alpha) of -exp(log alpha) * c is the loss itself.
    Ok((loss, loss))
}

/// Actor loss value, parameter gradients, and the batch-mean log-probability
/// (reused by the temperature update and entropy reporting).
pub struct ActorLossOutput {
    pub loss: f64,
    pub grads: MlpGrads,
    pub mean_log_prob: f64,
}

/// Plain stochastic-actor loss `Mean[alpha * log pi(a_s|s) - Q(s, a_s)]` with
/// reparameterized gradients. Critic parameters receive no gradient; the
/// temperature is a constant.
pub fn actor_loss_alpha(
    policy: &PolicyNet,
    sample: &PolicySample,
    alpha: f64,
    q: &MlpNet,
) -> Result<ActorLossOutput> {
    actor_loss_impl(policy, sample, alpha, q, None)
}

/// Beta-variant actor loss: identical loss value to [`actor_loss_alpha`], but
/// the critic's action gradient is passed through the projection operator
/// before entering the chain rule. The entropy-term gradient is untouched.
pub fn actor_loss_beta(
    policy: &PolicyNet,
    sample: &PolicySample,
    alpha: f64,
    ensemble: &CriticEnsemble,
) -> Result<ActorLossOutput> {
    let mus = sample
        .mus
        .as_ref()
        .expect("beta actor loss needs a guide-head sample");
    let min_v = ensemble.min_online_values(sample.states.view());
    actor_loss_impl(policy, sample, alpha, &ensemble.q, Some((mus, &min_v)))
}

fn actor_loss_impl(
    policy: &PolicyNet,
    sample: &PolicySample,
    alpha: f64,
    q: &MlpNet,
    guide: Option<(&Array2<f64>, &[f64])>,
) -> Result<ActorLossOutput> {
    let n = sample.len();
    if n == 0 {
        return Err(Error::EmptyBatch("actor_loss"));
    }
    let d = policy.action_dim;
    let s_dim = policy.state_dim;

    let sa = concat_batch(sample.states.view(), sample.actions.view());
    let q_trace = q.forward_trace(sa.view());
    let q_vals: Vec<f64> = q_trace.output().column(0).to_vec();
    let ones = Array2::ones((n, 1));
    let q_in_grads = q.input_gradients(&q_trace, ones.view());

    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut og = Array2::zeros((n, policy.net.output_dim()));
    let mut g_row = vec![0.0; d];
    for i in 0..n {
        loss += (alpha * sample.log_probs[i] - q_vals[i]) * inv_n;
        for j in 0..d {
            g_row[j] = q_in_grads[[i, s_dim + j]];
        }
        if let Some((mus, min_v)) = guide {
            let mu_row: Vec<f64> = mus.row(i).to_vec();
            let a_row: Vec<f64> = sample.actions.row(i).to_vec();
            g_row = project_gradient(&g_row, &a_row, &mu_row, q_vals[i], min_v[i]);
        }
        for j in 0..d {
            let a = sample.actions[[i, j]];
            let sech2 = 1.0 - a * a;
            let se = sample.stds[[i, j]] * sample.noise[[i, j]];
            let raw = sample.log_std_raw[[i, j]];
            let clamp_mask = if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
                1.0
            } else {
                0.0
            };
            og[[i, j]] = (alpha * 2.0 * a - g_row[j] * sech2) * inv_n;
            og[[i, d + j]] =
                (alpha * (-1.0 + 2.0 * a * se) - g_row[j] * sech2 * se) * inv_n * clamp_mask;
        }
    }
    let (grads, _) = policy.net.backward_trace(&sample.trace, og.view());
    Ok(ActorLossOutput {
        loss,
        grads,
        mean_log_prob: sample.mean_log_prob(),
    })
}

/// Remove from `v` its component along `mu - a_s` when `v` points away from
/// the guide (`v . (mu - a_s) < 0`) and the sampled action is not already in
/// the vicinity of the argmax (`q_val < min_v`). Never increases the norm.
/// Near-zero directions (norm below 1e-12) are uninformative and leave `v`
/// unchanged.
pub fn project_gradient(v: &[f64], a_s: &[f64], mu: &[f64], q_val: f64, min_v: f64) -> Vec<f64> {
    assert_eq!(v.len(), a_s.len(), "gradient/action dimension mismatch");
    assert_eq!(v.len(), mu.len(), "gradient/guide dimension mismatch");
    let dir: Vec<f64> = mu.iter().zip(a_s).map(|(m, a)| m - a).collect();
    let norm_sq: f64 = dir.iter().map(|x| x * x).sum();
    if norm_sq < PROJECTION_DEGENERATE_NORM * PROJECTION_DEGENERATE_NORM {
        return v.to_vec();
    }
    let dot: f64 = v.iter().zip(&dir).map(|(a, b)| a * b).sum();
    if dot < 0.0 && q_val < min_v {
        let coeff = dot / norm_sq;
        v.iter().zip(&dir).map(|(a, b)| a - coeff * b).collect()
    } else {
        v.to_vec()
    }
}

/// One regression target for the guide head: a batch row and the action to
/// pull `mu(s)` toward.
#[derive(Debug, Clone, PartialEq)]
pub struct MuTarget {
    pub row: usize,
    pub action: Vec<f64>,
}

/// The guide-head target set: for every batch row, the buffer action and/or
/// the resampled action whose Q-value strictly exceeds the minimum ONLINE
/// value estimate. Duplicates are kept; the result may be empty.
pub fn mu_targets(
    q_buffer: &[f64],
    q_resampled: &[f64],
    min_v: &[f64],
    buffer_actions: ArrayView2<f64>,
    resampled_actions: ArrayView2<f64>,
) -> Vec<MuTarget> {
    let n = min_v.len();
    assert_eq!(q_buffer.len(), n);
    assert_eq!(q_resampled.len(), n);
    let mut targets = Vec::new();
    for i in 0..n {
        if q_buffer[i] > min_v[i] {
            targets.push(MuTarget {
                row: i,
                action: buffer_actions.row(i).to_vec(),
            });
        }
        if q_resampled[i] > min_v[i] {
            targets.push(MuTarget {
                row: i,
                action: resampled_actions.row(i).to_vec(),
            });
        }
    }
    targets
}

/// Mean squared error of the guide head over the target set. Gradients flow
/// through the mu head and shared backbone only; target actions (including
/// resampled ones) are constants. An empty target set yields zero loss and
/// zero gradients, and the caller skips the update entirely.
pub fn mu_loss(
    policy: &PolicyNet,
    sample: &PolicySample,
    targets: &[MuTarget],
) -> Result<ActorLossOutput> {
    assert_eq!(
        policy.variant,
        PolicyVariant::Beta,
        "mu_loss needs the beta head"
    );
    let mus = sample.mus.as_ref().expect("beta sample");
    let d = policy.action_dim;
    if targets.is_empty() {
        return Ok(ActorLossOutput {
            loss: 0.0,
            grads: MlpGrads::zeros_like(&policy.net),
            mean_log_prob: sample.mean_log_prob(),
        });
    }
    let inv_m = 1.0 / targets.len() as f64;
    let mut loss = 0.0;
    let mut og = Array2::zeros((sample.len(), policy.net.output_dim()));
    for t in targets {
        for j in 0..d {
            let mu = mus[[t.row, j]];
            let diff = mu - t.action[j];
            loss += diff * diff * inv_m;
            // d tanh = 1 - mu^2
            og[[t.row, 2 * d + j]] += 2.0 * diff * (1.0 - mu * mu) * inv_m;
        }
    }
    let (grads, _) = policy.net.backward_trace(&sample.trace, og.view());
    Ok(ActorLossOutput {
        loss,
        grads,
        mean_log_prob: sample.mean_log_prob(),
    })
}

/// Convenience for single-state critic queries in tests and rollouts.
pub fn q_value(q: &MlpNet, state: ArrayView1<f64>, action: ArrayView1<f64>) -> f64 {
    let sa = concat_rows(state, action);
    q.forward(sa.view())[0]
}
