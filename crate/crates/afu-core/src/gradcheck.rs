//! Central finite-difference verification of every gradient path.
//!
//! Each suite builds small random instances, computes analytic gradients
//! through the library's backward passes, and compares them against central
//! finite differences of the corresponding loss *value*, evaluated by forward
//! passes only. Losses with stop-gradient semantics are differenced through
//! an equivalent surrogate that freezes the stop-gradient quantities at the
//! base point (indicator branches, no-grad value copies, guide directions,
//! projected critic coefficients, regression targets), which is exactly what
//! the analytic gradient treats as constant.
//!
//! Instances are rejected and redrawn when any branch point (ReLU kink,
//! indicator or Z-branch boundary, log-std clamp edge) sits within the
//! finite-difference step's reach, where two-sided differences are invalid.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::actor::{
    actor_loss_alpha, actor_loss_beta, mu_loss, project_gradient, temperature_loss, MuTarget,
    PolicyNet, PolicyVariant, Temperature, LOG_STD_MAX, LOG_STD_MIN,
};
use crate::critic::CriticEnsemble;
use crate::maxq::{concat_batch, indicator, lambda_va_loss, z_loss, MaxQPair};
use crate::nn::{Activation, MlpNet};

/// Acceptance tolerance on the relative error of any single gradient entry.
pub const GRADCHECK_TOL: f64 = 1e-5;

const FD_STEP: f64 = 1e-5;
/// Minimum distance from any branch point, in pre-activation units.
const KINK_MARGIN: f64 = 1e-3;
const STATE_DIM: usize = 3;
const ACTION_DIM: usize = 2;
const HIDDEN: [usize; 2] = [8, 8];
const BATCH: usize = 4;

/// Outcome of one finite-difference suite.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<22} {:>3} instances  max rel err {:>12.3e}  tol {:.0e}  {}",
            self.name,
            self.instances,
            self.max_rel_err,
            self.tol,
            if self.passed() { "ok" } else { "FAILED" }
        )
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs()).max(1e-4);
    diff / scale
}

/// Central differences over an indexed parameter family. `probe(i, delta)`
/// must evaluate the loss with parameter `i` offset by `delta` and restore it.
fn fd_max_rel_err(
    count: usize,
    analytic: &[f64],
    mut probe: impl FnMut(usize, f64) -> f64,
) -> f64 {
    assert_eq!(analytic.len(), count);
    let mut worst = 0.0f64;
    for i in 0..count {
        let plus = probe(i, FD_STEP);
        let minus = probe(i, -FD_STEP);
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

fn probe_net<'a>(
    net: &'a mut MlpNet,
    mut value: impl FnMut(&MlpNet) -> f64 + 'a,
) -> impl FnMut(usize, f64) -> f64 + 'a {
    move |idx, delta| {
        let base = net.param(idx);
        net.set_param(idx, base + delta);
        let v = value(net);
        net.set_param(idx, base);
        v
    }
}

fn draw<T>(rng: &mut ChaCha8Rng, mut gen: impl FnMut(&mut ChaCha8Rng) -> Option<T>) -> T {
    for _ in 0..500 {
        if let Some(t) = gen(rng) {
            return t;
        }
    }
    panic!("could not draw a margin-satisfying gradcheck instance")
}

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn relu_margin_ok(net: &MlpNet, input: &Array2<f64>) -> bool {
    net.forward_trace(input.view()).min_hidden_preact_abs() > KINK_MARGIN
}

/// Network backward pass (parameter and input gradients) against finite
/// differences of `sum(output * og)`.
pub fn check_backward(seed: u64, instances: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (mut net, x, og) = draw(&mut rng, |r| {
            let net = MlpNet::new(&[STATE_DIM, HIDDEN[0], HIDDEN[1], 2], Activation::Relu, r);
            let x = random_batch(r, BATCH, STATE_DIM);
            let og = random_batch(r, BATCH, 2);
            relu_margin_ok(&net, &x).then_some((net, x, og))
        });
        let trace = net.forward_trace(x.view());
        let (grads, input_grads) = net.backward_trace(&trace, og.view());
        let analytic = grads.flat();

        let value = |n: &MlpNet| (&n.forward_batch(x.view()) * &og).sum();
        worst = worst.max(fd_max_rel_err(
            net.param_count(),
            &analytic,
            probe_net(&mut net, value),
        ));

        // Input gradients, differenced through the input batch.
        let mut xp = x.clone();
        let flat_input: Vec<f64> = input_grads.iter().copied().collect();
        let n_inputs = xp.len();
        let probe_input = |idx: usize, delta: f64, xp: &mut Array2<f64>| {
            let (r, c) = (idx / STATE_DIM, idx % STATE_DIM);
            let base = xp[[r, c]];
            xp[[r, c]] = base + delta;
            let v = (&net.forward_batch(xp.view()) * &og).sum();
            xp[[r, c]] = base;
            v
        };
        worst = worst.max(fd_max_rel_err(n_inputs, &flat_input, |i, d| {
            probe_input(i, d, &mut xp)
        }));
    }
    CheckReport {
        name: "nn_backward",
        instances,
        max_rel_err: worst,
        tol: GRADCHECK_TOL,
    }
}

/// Critic loss gradient (mean squared bootstrap error) over the Q parameters.
pub fn check_critic_loss(seed: u64, instances: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (ensemble, states, actions, targets) = draw(&mut rng, |r| {
            let e = CriticEnsemble::new(STATE_DIM, ACTION_DIM, &HIDDEN, 0.3, 0.99, r).ok()?;
            let states = random_batch(r, BATCH, STATE_DIM);
            let actions = random_batch(r, BATCH, ACTION_DIM);
            let targets: Vec<f64> = (0..BATCH).map(|_| r.random_range(-1.0..1.0)).collect();
            let sa = concat_batch(states.view(), actions.view());
            relu_margin_ok(&e.q, &sa).then_some((e, states, actions, targets))
        });
        let (_, grads) = ensemble
            .critic_loss(states.view(), actions.view(), &targets)
            .unwrap();
        let analytic = grads.flat();
        let mut q = ensemble.q.clone();
        let sa = concat_batch(states.view(), actions.view());
        let value = |n: &MlpNet| {
            let out = n.forward_batch(sa.view());
            (0..BATCH)
                .map(|i| {
                    let d = out[[i, 0]] - targets[i];
                    d * d
                })
                .sum::<f64>()
                / BATCH as f64
        };
        worst = worst.max(fd_max_rel_err(
            q.param_count(),
            &analytic,
            probe_net(&mut q, value),
        ));
    }
    CheckReport {
        name: "critic_loss",
        instances,
        max_rel_err: worst,
        tol: GRADCHECK_TOL,
    }
}

/// Value/advantage loss with the conditional gradient scaling treated as a
/// stop-gradient mixture: the finite-difference surrogate freezes the
/// indicator and the no-grad value copy at the base point.
pub fn check_value_advantage_loss(seed: u64, instances: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = 0.3;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (pair, states, actions, targets) = draw(&mut rng, |r| {
            let value = MlpNet::new(&[STATE_DIM, HIDDEN[0], HIDDEN[1], 1], Activation::Relu, r);
            let advantage = MlpNet::new(
                &[STATE_DIM + ACTION_DIM, HIDDEN[0], HIDDEN[1], 1],
                Activation::Relu,
                r,
            );
            let pair = MaxQPair::new(value, advantage, rho).ok()?;
            let states = random_batch(r, BATCH, STATE_DIM);
            let actions = random_batch(r, BATCH, ACTION_DIM);
            let targets: Vec<f64> = (0..BATCH).map(|_| r.random_range(-0.5..0.5)).collect();
            let sa = concat_batch(states.view(), actions.view());
            if !relu_margin_ok(&pair.value, &states) || !relu_margin_ok(&pair.advantage, &sa) {
                return None;
            }
            // Stay away from the Z branch (x = 0) and the indicator boundary.
            let v_out = pair.value.forward_batch(states.view());
            let a_out = pair.advantage.forward_batch(sa.view());
            for i in 0..BATCH {
                let x = v_out[[i, 0]] - targets[i];
                let joint = v_out[[i, 0]] + a_out[[i, 0]] - targets[i];
                if x.abs() < KINK_MARGIN || joint.abs() < KINK_MARGIN {
                    return None;
                }
            }
            Some((pair, states, actions, targets))
        });

        let (_, v_grads, a_grads) =
            lambda_va_loss(&pair, states.view(), actions.view(), &targets).unwrap();

        // Freeze the stop-gradient quantities at the base point.
        let sa = concat_batch(states.view(), actions.view());
        let v0 = pair.value.forward_batch(states.view());
        let a0 = pair.advantage.forward_batch(sa.view());
        let frozen: Vec<(f64, f64)> = (0..BATCH)
            .map(|i| {
                let ind = indicator(v0[[i, 0]], a0[[i, 0]], targets[i]);
                (if ind { 1.0 } else { 0.0 }, v0[[i, 0]])
            })
            .collect();

        let mut value_net = pair.value.clone();
        let adv_fixed = pair.advantage.clone();
        let surrogate_v = |vn: &MlpNet| {
            let v = vn.forward_batch(states.view());
            let a = adv_fixed.forward_batch(sa.view());
            (0..BATCH)
                .map(|i| {
                    let (ind, v_nograd) = frozen[i];
                    let upsilon = (1.0 - rho * ind) * v[[i, 0]] + rho * ind * v_nograd;
                    z_loss(upsilon - targets[i], a[[i, 0]])
                })
                .sum::<f64>()
                / BATCH as f64
        };
        worst = worst.max(fd_max_rel_err(
            value_net.param_count(),
            &v_grads.flat(),
            probe_net(&mut value_net, surrogate_v),
        ));

        let mut adv_net = pair.advantage.clone();
        let value_fixed = pair.value.clone();
        let surrogate_a = |an: &MlpNet| {
            let v = value_fixed.forward_batch(states.view());
            let a = an.forward_batch(sa.view());
            (0..BATCH)
                .map(|i| {
                    let (ind, v_nograd) = frozen[i];
                    let upsilon = (1.0 - rho * ind) * v[[i, 0]] + rho * ind * v_nograd;
                    z_loss(upsilon - targets[i], a[[i, 0]])
                })
                .sum::<f64>()
                / BATCH as f64
        };
        worst = worst.max(fd_max_rel_err(
            adv_net.param_count(),
            &a_grads.flat(),
            probe_net(&mut adv_net, surrogate_a),
        ));
    }
    CheckReport {
        name: "value_advantage_loss",
        instances,
        max_rel_err: worst,
        tol: GRADCHECK_TOL,
    }
}

struct ActorInstance {
    policy: PolicyNet,
    ensemble: CriticEnsemble,
    states: Array2<f64>,
    noise: Array2<f64>,
}

fn draw_actor_instance(
    rng: &mut ChaCha8Rng,
    variant: PolicyVariant,
    lift_values: bool,
) -> ActorInstance {
    draw(rng, |r| {
        let policy = PolicyNet::new(STATE_DIM, ACTION_DIM, &HIDDEN, variant, r);
        let mut ensemble = CriticEnsemble::new(STATE_DIM, ACTION_DIM, &HIDDEN, 0.3, 0.99, r).ok()?;
        if lift_values {
            // Shift the online value heads up so the vicinity condition
            // q < min_v holds often and the projection actually fires.
            for pair in &mut ensemble.pairs {
                let layers = pair.value.sizes().len() - 1;
                let (_, b) = pair.value.layer_mut(layers - 1);
                b[0] += 0.5;
            }
        }
        let states = random_batch(r, BATCH, STATE_DIM);
        let noise = Array2::from_shape_fn((BATCH, ACTION_DIM), |_| StandardNormal.sample(r));
        if !relu_margin_ok(policy.net(), &states) {
            return None;
        }
        let sample = policy.sample_batch(states.view(), noise.clone());
        // Log-std clamp edges and pre-squash saturation are branch points.
        for i in 0..BATCH {
            for j in 0..ACTION_DIM {
                let raw = sample.log_std_raw[[i, j]];
                if (raw - LOG_STD_MIN).abs() < KINK_MARGIN
                    || (raw - LOG_STD_MAX).abs() < KINK_MARGIN
                    || raw < LOG_STD_MIN
                    || raw > LOG_STD_MAX
                    || sample.pre_tanh[[i, j]].abs() > 5.0
                {
                    return None;
                }
            }
        }
        let sa = concat_batch(states.view(), sample.actions.view());
        if !relu_margin_ok(&ensemble.q, &sa) {
            return None;
        }
        Some(ActorInstance {
            policy,
            ensemble,
            states,
            noise,
        })
    })
}

/// Reparameterized actor loss under frozen noise.
pub fn check_actor_loss_alpha(seed: u64, instances: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = 0.37;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let mut inst = draw_actor_instance(&mut rng, PolicyVariant::Alpha, false);
        let sample = inst.policy.sample_batch(inst.states.view(), inst.noise.clone());
        let out = actor_loss_alpha(&inst.policy, &sample, alpha, &inst.ensemble.q).unwrap();
        let analytic = out.grads.flat();

        let q = inst.ensemble.q.clone();
        let states = inst.states.clone();
        let noise = inst.noise.clone();
        let param_count = inst.policy.net().param_count();
        let policy = &mut inst.policy;
        let probe = |idx: usize, delta: f64| {
            let base = policy.net().param(idx);
            policy.net_mut().set_param(idx, base + delta);
            let s = policy.sample_batch(states.view(), noise.clone());
            let sa = concat_batch(states.view(), s.actions.view());
            let q_vals = q.forward_batch(sa.view());
            let v = (0..BATCH)
                .map(|i| alpha * s.log_probs[i] - q_vals[[i, 0]])
                .sum::<f64>()
                / BATCH as f64;
            policy.net_mut().set_param(idx, base);
            v
        };
        worst = worst.max(fd_max_rel_err(param_count, &analytic, probe));
    }
    CheckReport {
        name: "actor_loss_alpha",
        instances,
        max_rel_err: worst,
        tol: GRADCHECK_TOL,
    }
}

/// Modified actor gradient of the beta variant, differenced through a
/// surrogate that freezes the projected critic coefficients at the base
/// point (they are stop-gradient inputs to the chain rule).
pub fn check_actor_loss_beta(seed: u64, instances: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = 0.37;
    let mut worst = 0.0f64;
    let mut fired_total = 0usize;
    for _ in 0..instances {
        let mut inst = draw_actor_instance(&mut rng, PolicyVariant::Beta, true);
        let sample = inst.policy.sample_batch(inst.states.view(), inst.noise.clone());
        let out = actor_loss_beta(&inst.policy, &sample, alpha, &inst.ensemble).unwrap();
        let analytic = out.grads.flat();

        // Frozen projected coefficients, recomputed here from first
        // principles: raw input gradients of Q, then the projection.
        let sa = concat_batch(inst.states.view(), sample.actions.view());
        let q_trace = inst.ensemble.q.forward_trace(sa.view());
        let q_vals = q_trace.output().column(0).to_vec();
        let ones = Array2::ones((BATCH, 1));
        let q_in = inst.ensemble.q.input_gradients(&q_trace, ones.view());
        let min_v = inst.ensemble.min_online_values(inst.states.view());
        let mus = sample.mus.as_ref().unwrap();
        let mut coeffs = Array2::zeros((BATCH, ACTION_DIM));
        for i in 0..BATCH {
            let g: Vec<f64> = (0..ACTION_DIM).map(|j| q_in[[i, STATE_DIM + j]]).collect();
            let a_row: Vec<f64> = sample.actions.row(i).to_vec();
            let mu_row: Vec<f64> = mus.row(i).to_vec();
            let projected = project_gradient(&g, &a_row, &mu_row, q_vals[i], min_v[i]);
            if projected != g {
                fired_total += 1;
            }
            for j in 0..ACTION_DIM {
                coeffs[[i, j]] = projected[j];
            }
        }

        let states = inst.states.clone();
        let noise = inst.noise.clone();
        let param_count = inst.policy.net().param_count();
        let policy = &mut inst.policy;
        let probe = |idx: usize, delta: f64| {
            let base = policy.net().param(idx);
            policy.net_mut().set_param(idx, base + delta);
            let s = policy.sample_batch(states.view(), noise.clone());
            // alpha * log pi - <frozen projected coeffs, a>
            let v = (0..BATCH)
                .map(|i| {
                    let lin: f64 = (0..ACTION_DIM)
                        .map(|j| coeffs[[i, j]] * s.actions[[i, j]])
                        .sum();
                    alpha * s.log_probs[i] - lin
                })
                .sum::<f64>()
                / BATCH as f64;
            policy.net_mut().set_param(idx, base);
            v
        };
        worst = worst.max(fd_max_rel_err(param_count, &analytic, probe));
    }
    assert!(
        fired_total > 0,
        "beta gradcheck never exercised the projection"
    );
    CheckReport {
        name: "actor_loss_beta",
        instances,
        max_rel_err: worst,
        tol: GRADCHECK_TOL,
    }
}

/// Temperature loss over the log-temperature scalar.
pub fn check_temperature_loss(seed: u64, instances: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let log_probs: Vec<f64> = (0..BATCH).map(|_| rng.random_range(-3.0..1.0)).collect();
        let target = rng.random_range(-3.0..0.0);
        let alpha0 = rng.random_range(0.1..2.0);
        let temp = Temperature::new(alpha0, target).unwrap();
        let (_, grad) = temperature_loss(&log_probs, &temp).unwrap();
        let base = temp.log_alpha();
        let mean_lp = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
        let probe = |_idx: usize, delta: f64| -> f64 {
            let la = base + delta;
            -(la.exp()) * (mean_lp + target)
        };
        worst = worst.max(fd_max_rel_err(1, &[grad], probe));
    }
    CheckReport {
        name: "temperature_loss",
        instances,
        max_rel_err: worst,
        tol: GRADCHECK_TOL,
    }
}

/// Guide-head regression loss with a frozen target set.
pub fn check_mu_loss(seed: u64, instances: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let mut inst = draw_actor_instance(&mut rng, PolicyVariant::Beta, false);
        let sample = inst.policy.sample_batch(inst.states.view(), inst.noise.clone());
        // Frozen targets: a mix of rows, some duplicated, actions fixed.
        let targets: Vec<MuTarget> = (0..BATCH + 1)
            .map(|k| MuTarget {
                row: k % BATCH,
                action: (0..ACTION_DIM)
                    .map(|_| rng.random_range(-0.9..0.9))
                    .collect(),
            })
            .collect();
        let out = mu_loss(&inst.policy, &sample, &targets).unwrap();
        let analytic = out.grads.flat();

        let states = inst.states.clone();
        let noise = inst.noise.clone();
        let m = targets.len() as f64;
        let param_count = inst.policy.net().param_count();
        let policy = &mut inst.policy;
        let probe = |idx: usize, delta: f64| {
            let base = policy.net().param(idx);
            policy.net_mut().set_param(idx, base + delta);
            let s = policy.sample_batch(states.view(), noise.clone());
            let mus = s.mus.as_ref().unwrap();
            let v = targets
                .iter()
                .map(|t| {
                    (0..ACTION_DIM)
                        .map(|j| {
                            let d = mus[[t.row, j]] - t.action[j];
                            d * d
                        })
                        .sum::<f64>()
                })
                .sum::<f64>()
                / m;
            policy.net_mut().set_param(idx, base);
            v
        };
        worst = worst.max(fd_max_rel_err(param_count, &analytic, probe));
    }
    CheckReport {
        name: "mu_loss",
        instances,
        max_rel_err: worst,
        tol: GRADCHECK_TOL,
    }
}

/// Every finite-difference suite at the standard instance count.
pub fn run_all(seed: u64, instances: usize) -> Vec<CheckReport> {
    vec![
        check_backward(seed, instances),
        check_critic_loss(seed.wrapping_add(1), instances),
        check_value_advantage_loss(seed.wrapping_add(2), instances),
        check_actor_loss_alpha(seed.wrapping_add(3), instances),
        check_actor_loss_beta(seed.wrapping_add(4), instances),
        check_temperature_loss(seed.wrapping_add(5), instances),
        check_mu_loss(seed.wrapping_add(6), instances),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    // The full 20-instance suites run in the acceptance tests; these smoke
    // checks keep unit runs fast while still exercising every path.
    #[test]
    fn all_suites_pass_at_small_instance_counts() {
        for report in run_all(12345, 3) {
            assert!(report.passed(), "{report}");
        }
    }

    #[test]
    fn rel_err_floors_small_magnitudes() {
        assert!(rel_err(0.0, 1e-10) < 1e-5);
        assert!(rel_err(1.0, 1.0 + 1e-4) > 1e-5);
    }
}
