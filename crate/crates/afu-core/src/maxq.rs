//! Solving the continuous-action max-Q problem by regression with
//! conditional gradient scaling.
//!
//! A [`MaxQPair`] trains a state-value network `V` jointly with an advantage
//! network `A` so that `V(s) + A(s,a)` regresses onto targets `Q(s,a)` while
//! `V(s)` is pushed toward `max_a Q(s,·)`. Two mechanisms make this work:
//!
//! * **Conditional gradient scaling**: whenever the joint estimate sits below
//!   its target (so plain regression would push `V` up), only a `(1 - rho)`
//!   fraction of the value-network gradient is applied. Downward updates get
//!   the full gradient. The loss *value* is unchanged — the scaling acts as a
//!   stop-gradient mixture of the value output with itself.
//! * **Soft sign constraint** via [`z_loss`]: when the residual target for the
//!   advantage would be positive (impossible for an optimal advantage), the
//!   squared term splits so both the residual and the raw advantage are pushed
//!   to zero instead.
//!
//! The module also carries the toy max-Q benchmark harness used to compare
//! this solver against an expectile-regression baseline on a closed-form
//! oracle, where the true per-state maximum is known analytically.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::Serialize;

use crate::envs::toy_oracle;
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, MlpGrads, MlpNet};

/// Value network, advantage network, and the gradient-scaling coefficient.
#[derive(Debug, Clone)]
pub struct MaxQPair {
    pub value: MlpNet,
    pub advantage: MlpNet,
    rho: f64,
}

impl MaxQPair {
    /// `value` maps states to a scalar, `advantage` maps state ++ action to a
    /// scalar. `rho` must lie strictly in (0, 1).
    pub fn new(value: MlpNet, advantage: MlpNet, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gradient scaling coefficient rho must be in (0, 1), got {rho}"
            )));
        }
        if value.output_dim() != 1 || advantage.output_dim() != 1 {
            return Err(Error::InvalidConfig(
                "value and advantage networks must have scalar outputs".into(),
            ));
        }
        Ok(MaxQPair {
            value,
            advantage,
            rho,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Forward value plus the gradient scale the value network would receive
    /// for this (state, action, target) triple. The returned value is always
    /// exactly `V(s)`; the scale is `1 - rho` when the indicator fires and 1
    /// otherwise.
    pub fn upsilon(&self, state: ArrayView1<f64>, action: ArrayView1<f64>, target: f64) -> (f64, f64) {
        let v = self.value.forward(state)[0];
        let sa = concat_rows(state, action);
        let adv = self.advantage.forward(sa.view())[0];
        let scale = if indicator(v, adv, target) {
            1.0 - self.rho
        } else {
            1.0
        };
        (v, scale)
    }
}

/// 1 iff the joint estimate `v + adv` is strictly below its target; ties fall
/// into the "otherwise" branch.
#[inline]
pub fn indicator(v: f64, adv: f64, target: f64) -> bool {
    v + adv < target
}

/// Piecewise regression term: `(x + y)^2` when `x >= 0`, else `x^2 + y^2`.
///
/// `x` is the residual of the value estimate against its target and `y` the
/// raw advantage output; the split branch keeps advantage targets non-positive
/// without constraining the network output.
#[inline]
pub fn z_loss(x: f64, y: f64) -> f64 {
    if x >= 0.0 {
        let s = x + y;
        s * s
    } else {
        x * x + y * y
    }
}

/// Partial derivatives of [`z_loss`] with respect to both arguments.
#[inline]
pub fn z_grad(x: f64, y: f64) -> (f64, f64) {
    if x >= 0.0 {
        let s = 2.0 * (x + y);
        (s, s)
    } else {
        (2.0 * x, 2.0 * y)
    }
}

/// Batch loss and gradients for one value/advantage pair against fixed
/// targets: `Mean[ Z(V(s) - target, A(s,a)) ]` with the value gradient scaled
/// by `1 - rho` on items whose indicator fires. Gradients are already divided
/// by the batch size.
pub fn lambda_va_loss(
    pair: &MaxQPair,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    targets: &[f64],
) -> Result<(f64, MlpGrads, MlpGrads)> {
    let n = states.nrows();
    if n == 0 {
        return Err(Error::EmptyBatch("lambda_va_loss"));
    }
    assert_eq!(actions.nrows(), n, "state/action batch mismatch");
    assert_eq!(targets.len(), n, "state/target batch mismatch");

    let v_trace = pair.value.forward_trace(states);
    let sa = concat_batch(states, actions);
    let a_trace = pair.advantage.forward_trace(sa.view());

    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut v_og = Array2::zeros((n, 1));
    let mut a_og = Array2::zeros((n, 1));
    {
        let v_out = v_trace.output();
        let a_out = a_trace.output();
        for i in 0..n {
            let v = v_out[[i, 0]];
            let adv = a_out[[i, 0]];
            let x = v - targets[i];
            loss += z_loss(x, adv) * inv_n;
            let (dx, dy) = z_grad(x, adv);
            let scale = if indicator(v, adv, targets[i]) {
                1.0 - pair.rho
            } else {
                1.0
            };
            v_og[[i, 0]] = dx * scale * inv_n;
            a_og[[i, 0]] = dy * inv_n;
        }
    }
    let (v_grads, _) = pair.value.backward_trace(&v_trace, v_og.view());
    let (a_grads, _) = pair.advantage.backward_trace(&a_trace, a_og.view());
    Ok((loss, v_grads, a_grads))
}

/// Expectile regression baseline: `Mean[ |tau_e - 1(u < 0)| * u^2 ]` with
/// `u = target - V(s)`. `tau_e = 0.5` reduces to half the mean squared error.
pub fn expectile_loss(
    value: &MlpNet,
    states: ArrayView2<f64>,
    targets: &[f64],
    tau_e: f64,
) -> Result<(f64, MlpGrads)> {
    if !(tau_e > 0.0 && tau_e < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "expectile parameter must be in (0, 1), got {tau_e}"
        )));
    }
    let n = states.nrows();
    if n == 0 {
        return Err(Error::EmptyBatch("expectile_loss"));
    }
    assert_eq!(targets.len(), n, "state/target batch mismatch");

    let trace = value.forward_trace(states);
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut og = Array2::zeros((n, 1));
    {
        let out = trace.output();
        for i in 0..n {
            let u = targets[i] - out[[i, 0]];
            let w = if u < 0.0 { 1.0 - tau_e } else { tau_e };
            loss += w * u * u * inv_n;
            og[[i, 0]] = -2.0 * w * u * inv_n;
        }
    }
    let (grads, _) = value.backward_trace(&trace, og.view());
    Ok((loss, grads))
}

/// Which solver the toy benchmark trains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToyMethod {
    /// Joint V/A regression with gradient scaling coefficient `rho`.
    Afu { rho: f64 },
    /// Expectile regression on V alone with expectile `tau`.
    Expectile { tau: f64 },
}

impl ToyMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ToyMethod::Afu { .. } => "afu",
            ToyMethod::Expectile { .. } => "expectile",
        }
    }

    pub fn hyper(&self) -> f64 {
        match self {
            ToyMethod::Afu { rho } => *rho,
            ToyMethod::Expectile { tau } => *tau,
        }
    }
}

/// Toy max-Q benchmark protocol. The defaults mirror the reference protocol:
/// 3000 Adam steps on batches of 256 uniformly drawn (s, a) pairs, networks
/// with two hidden layers of 256 units, evaluation on 201 evenly spaced
/// states.
#[derive(Debug, Clone)]
pub struct ToyConfig {
    pub method: ToyMethod,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub grid_points: usize,
}

impl ToyConfig {
    pub fn new(method: ToyMethod) -> Self {
        ToyConfig {
            method,
            steps: 3000,
            batch: 256,
            seed: 0,
            hidden: vec![256, 256],
            learning_rate: 3e-4,
            grid_points: 201,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::InvalidConfig("toy benchmark needs steps >= 1".into()));
        }
        if self.batch < 1 {
            return Err(Error::InvalidConfig("toy benchmark needs batch >= 1".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidConfig("toy grid needs >= 2 points".into()));
        }
        match self.method {
            ToyMethod::Afu { rho } if !(rho > 0.0 && rho < 1.0) => Err(Error::InvalidConfig(
                format!("toy afu rho must be in (0, 1), got {rho}"),
            )),
            ToyMethod::Expectile { tau } if !(tau > 0.0 && tau < 1.0) => Err(Error::InvalidConfig(
                format!("toy expectile tau must be in (0, 1), got {tau}"),
            )),
            _ => Ok(()),
        }
    }
}

/// One row of the toy benchmark's evaluation grid.
#[derive(Debug, Clone, Serialize)]
pub struct ToyRow {
    pub s: f64,
    pub v_estimate: f64,
    pub true_max: f64,
    pub residual: f64,
}

/// Residual statistics over the evaluation grid.
#[derive(Debug, Clone, Serialize)]
pub struct ToySummary {
    pub method: String,
    pub hyper: f64,
    pub seed: u64,
    pub mean_abs_residual: f64,
    pub mean_residual: f64,
    pub max_abs_residual: f64,
}

pub struct ToyResult {
    pub rows: Vec<ToyRow>,
    pub summary: ToySummary,
    pub value: MlpNet,
    /// Present for the AFU method only.
    pub advantage: Option<MlpNet>,
}

/// Train a fresh value estimator against the closed-form oracle
/// `Q_toy(s, a) = sin(4s) + 0.7 cos(4a)` on uniform (s, a) in [-1, 1]^2 and
/// report per-state residuals `V(s) - (sin(4s) + 0.7)` on an evaluation grid.
pub fn run_toy_benchmark(cfg: &ToyConfig) -> Result<ToyResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut v_sizes = vec![1];
    v_sizes.extend_from_slice(&cfg.hidden);
    v_sizes.push(1);
    let mut a_sizes = vec![2];
    a_sizes.extend_from_slice(&cfg.hidden);
    a_sizes.push(1);

    let mut value = MlpNet::new(&v_sizes, Activation::Relu, &mut rng);
    let mut value_adam = AdamState::new("toy_value", &value, cfg.learning_rate);

    let mut pair_state = match cfg.method {
        ToyMethod::Afu { rho } => {
            let advantage = MlpNet::new(&a_sizes, Activation::Relu, &mut rng);
            let adam = AdamState::new("toy_advantage", &advantage, cfg.learning_rate);
            Some((advantage, adam, rho))
        }
        ToyMethod::Expectile { .. } => None,
    };

    let mut states = Array2::zeros((cfg.batch, 1));
    let mut actions = Array2::zeros((cfg.batch, 1));
    let mut targets = vec![0.0; cfg.batch];
    for _ in 0..cfg.steps {
        for i in 0..cfg.batch {
            let s = rng.random_range(-1.0..=1.0);
            let a = rng.random_range(-1.0..=1.0);
            states[[i, 0]] = s;
            actions[[i, 0]] = a;
            targets[i] = toy_oracle(s, a);
        }
        match (&cfg.method, &mut pair_state) {
            (ToyMethod::Afu { .. }, Some((advantage, adv_adam, rho))) => {
                let pair = MaxQPair::new(value.clone(), advantage.clone(), *rho)?;
                let (_, v_grads, a_grads) =
                    lambda_va_loss(&pair, states.view(), actions.view(), &targets)?;
                value_adam.step(&mut value, &v_grads)?;
                adv_adam.step(advantage, &a_grads)?;
            }
            (ToyMethod::Expectile { tau }, _) => {
                let (_, v_grads) = expectile_loss(&value, states.view(), &targets, *tau)?;
                value_adam.step(&mut value, &v_grads)?;
            }
            _ => unreachable!(),
        }
    }

    let rows: Vec<ToyRow> = (0..cfg.grid_points)
        .map(|k| {
            let s = -1.0 + 2.0 * k as f64 / (cfg.grid_points - 1) as f64;
            let v = value.forward(Array1::from_elem(1, s).view())[0];
            let true_max = (4.0 * s).sin() + 0.7;
            ToyRow {
                s,
                v_estimate: v,
                true_max,
                residual: v - true_max,
            }
        })
        .collect();

    let n = rows.len() as f64;
    let mean_residual = rows.iter().map(|r| r.residual).sum::<f64>() / n;
    let mean_abs_residual = rows.iter().map(|r| r.residual.abs()).sum::<f64>() / n;
    let max_abs_residual = rows
        .iter()
        .map(|r| r.residual.abs())
        .fold(0.0f64, f64::max);

    Ok(ToyResult {
        rows,
        summary: ToySummary {
            method: cfg.method.name().to_string(),
            hyper: cfg.method.hyper(),
            seed: cfg.seed,
            mean_abs_residual,
            mean_residual,
            max_abs_residual,
        },
        value,
        advantage: pair_state.map(|(a, _, _)| a),
    })
}

pub(crate) fn concat_rows(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(a.len() + b.len());
    out.slice_mut(ndarray::s![..a.len()]).assign(&a);
    out.slice_mut(ndarray::s![a.len()..]).assign(&b);
    out
}

pub(crate) fn concat_batch(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a, b]).expect("batch row counts must match")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_pair(seed: u64, rho: f64) -> MaxQPair {
        let mut r = rng(seed);
        let value = MlpNet::new(&[2, 8, 1], Activation::Relu, &mut r);
        let advantage = MlpNet::new(&[3, 8, 1], Activation::Relu, &mut r);
        MaxQPair::new(value, advantage, rho).unwrap()
    }

    #[test]
    fn indicator_examples() {
        assert!(indicator(1.0, -0.5, 1.2)); // 0.5 < 1.2
        assert!(!indicator(1.0, -0.5, 0.3)); // 0.5 >= 0.3
        assert!(!indicator(1.0, -0.5, 0.5)); // equality is "otherwise"
    }

    #[test]
    fn z_loss_examples() {
        assert_relative_eq!(z_loss(0.7, -0.5), 0.04, max_relative = 1e-12);
        assert_relative_eq!(z_loss(-0.2, -0.5), 0.29, max_relative = 1e-12);
        assert_eq!(z_loss(0.0, 0.0), 0.0);
    }

    #[test]
    fn z_grad_matches_piecewise_derivative() {
        // x >= 0 branch d/dx = d/dy = 2(x+y); x < 0 branch splits.
        let (dx, dy) = z_grad(0.7, -0.5);
        assert_relative_eq!(dx, 0.4, max_relative = 1e-12);
        assert_relative_eq!(dy, 0.4, max_relative = 1e-12);
        let (dx, dy) = z_grad(-0.2, -0.5);
        assert_relative_eq!(dx, -0.4, max_relative = 1e-12);
        assert_relative_eq!(dy, -1.0, max_relative = 1e-12);
    }

    #[test]
    fn rho_outside_open_interval_is_rejected() {
        let mut r = rng(0);
        for rho in [0.0, 1.0, -0.1, 1.5] {
            let value = MlpNet::new(&[1, 4, 1], Activation::Relu, &mut r);
            let advantage = MlpNet::new(&[2, 4, 1], Activation::Relu, &mut r);
            assert!(MaxQPair::new(value, advantage, rho).is_err(), "rho {rho}");
        }
    }

    #[test]
    fn upsilon_value_and_scale() {
        let pair = small_pair(3, 0.3);
        let s = array![0.2, -0.4];
        let a = array![0.1];
        let v = pair.value.forward(s.view())[0];
        let adv = pair.advantage.forward(array![0.2, -0.4, 0.1].view())[0];

        // Indicator off: target well below the joint estimate.
        let (val, scale) = pair.upsilon(s.view(), a.view(), v + adv - 1.0);
        assert_eq!(val, v);
        assert_eq!(scale, 1.0);

        // Indicator on: target above, scale is 1 - rho.
        let (val, scale) = pair.upsilon(s.view(), a.view(), v + adv + 1.0);
        assert_eq!(val, v);
        assert_relative_eq!(scale, 0.7, max_relative = 1e-12);
    }

    #[test]
    fn lambda_va_single_item_worked_cases() {
        // Nets rigged to output exactly V = 1 and A = -0.5 regardless of input.
        let mut value = MlpNet::zeros(&[1, 1], Activation::Relu);
        value.set_params_flat(&[0.0, 1.0]);
        let mut advantage = MlpNet::zeros(&[2, 1], Activation::Relu);
        advantage.set_params_flat(&[0.0, 0.0, -0.5]);
        let pair = MaxQPair::new(value, advantage, 0.3).unwrap();

        let states = array![[0.7]];
        let actions = array![[0.2]];

        // x = 0.7 >= 0, indicator off (0.5 >= 0.3): full V gradient.
        let (loss, v_grads, _) =
            lambda_va_loss(&pair, states.view(), actions.view(), &[0.3]).unwrap();
        assert_relative_eq!(loss, 0.04, max_relative = 1e-12);
        // dZ/dx = 2(x+y) = 0.4, bias grad of V is dx * scale = 0.4.
        assert_relative_eq!(v_grads.flat()[1], 0.4, max_relative = 1e-12);

        // x = -0.2 < 0, indicator on (0.5 < 1.2): V gradient scaled by 1 - rho.
        let (loss, v_grads, a_grads) =
            lambda_va_loss(&pair, states.view(), actions.view(), &[1.2]).unwrap();
        assert_relative_eq!(loss, 0.29, max_relative = 1e-12);
        // dZ/dx = 2x = -0.4 scaled by 0.7.
        assert_relative_eq!(v_grads.flat()[1], -0.4 * 0.7, max_relative = 1e-12);
        // dZ/dy = 2y = -1.0, never scaled.
        assert_relative_eq!(a_grads.flat()[2], -1.0, max_relative = 1e-12);
    }

    #[test]
    fn lambda_va_rejects_empty_batch() {
        let pair = small_pair(1, 0.5);
        let states = Array2::<f64>::zeros((0, 2));
        let actions = Array2::<f64>::zeros((0, 1));
        assert!(matches!(
            lambda_va_loss(&pair, states.view(), actions.view(), &[]),
            Err(Error::EmptyBatch(_))
        ));
    }

    #[test]
    fn loss_value_is_independent_of_rho() {
        // Forward-value invariance: the scaling never changes the loss value.
        let pair_a = small_pair(9, 0.2);
        let pair_b = MaxQPair::new(pair_a.value.clone(), pair_a.advantage.clone(), 0.9).unwrap();
        let mut r = rng(10);
        let states = Array2::from_shape_fn((16, 2), |_| r.random_range(-1.0..1.0));
        let actions = Array2::from_shape_fn((16, 1), |_| r.random_range(-1.0..1.0));
        let targets: Vec<f64> = (0..16).map(|_| r.random_range(-2.0..2.0)).collect();
        let (la, _, _) = lambda_va_loss(&pair_a, states.view(), actions.view(), &targets).unwrap();
        let (lb, _, _) = lambda_va_loss(&pair_b, states.view(), actions.view(), &targets).unwrap();
        assert_eq!(la, lb);
    }

    #[test]
    fn downward_pressure_scales_value_gradient_exactly() {
        // All-indicator batch: V gradients for two rho values differ by the
        // exact factor (1 - rho_a) / (1 - rho_b), component-wise.
        let pair_a = small_pair(21, 0.3);
        let pair_b = MaxQPair::new(pair_a.value.clone(), pair_a.advantage.clone(), 0.6).unwrap();
        let mut r = rng(22);
        let states = Array2::from_shape_fn((8, 2), |_| r.random_range(-1.0..1.0));
        let actions = Array2::from_shape_fn((8, 1), |_| r.random_range(-1.0..1.0));
        // Targets far above any initial output force the indicator on everywhere.
        let targets = vec![100.0; 8];
        let (_, ga, _) = lambda_va_loss(&pair_a, states.view(), actions.view(), &targets).unwrap();
        let (_, gb, _) = lambda_va_loss(&pair_b, states.view(), actions.view(), &targets).unwrap();
        let (fa, fb) = (ga.flat(), gb.flat());
        let ratio = (1.0 - 0.3) / (1.0 - 0.6);
        for (a, b) in fa.iter().zip(&fb) {
            if *b == 0.0 {
                assert_eq!(*a, 0.0);
            } else {
                assert_relative_eq!(a / b, ratio, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn tiny_rho_approaches_unscaled_regression_gradient() {
        // As rho -> 0 the scaling disappears and the gradient matches the
        // plain Z-regression gradient computed by hand on a single item.
        let mut value = MlpNet::zeros(&[1, 1], Activation::Relu);
        value.set_params_flat(&[0.5, 0.2]); // V(s) = 0.5 s + 0.2
        let mut advantage = MlpNet::zeros(&[2, 1], Activation::Relu);
        advantage.set_params_flat(&[0.0, 0.0, -0.3]);
        let pair = MaxQPair::new(value, advantage, 1e-12).unwrap();

        let states = array![[0.8]];
        let actions = array![[0.0]];
        let target = 2.0; // far above: indicator on, x < 0
        let (_, v_grads, _) = lambda_va_loss(&pair, states.view(), actions.view(), &[target]).unwrap();
        // Unscaled: dZ/dx = 2x with x = V - target = 0.6 - 2.0; dV/dw = s.
        let x = 0.6 - target;
        assert_relative_eq!(v_grads.flat()[0], 2.0 * x * 0.8, max_relative = 1e-9);
        assert_relative_eq!(v_grads.flat()[1], 2.0 * x, max_relative = 1e-9);
    }

    #[test]
    fn expectile_examples() {
        // Single item, V rigged to 0, target u.
        let mut value = MlpNet::zeros(&[1, 1], Activation::Relu);
        value.set_params_flat(&[0.0, 0.0]);
        let states = array![[0.3]];

        let (loss, _) = expectile_loss(&value, states.view(), &[2.0], 0.5).unwrap();
        assert_relative_eq!(loss, 2.0, max_relative = 1e-12); // 0.5 * 4

        let (above, _) = expectile_loss(&value, states.view(), &[1.0], 0.9).unwrap();
        let (below, _) = expectile_loss(&value, states.view(), &[-1.0], 0.9).unwrap();
        assert_relative_eq!(above, 0.9, max_relative = 1e-12);
        assert_relative_eq!(below, 0.1, max_relative = 1e-12);
    }

    #[test]
    fn expectile_rejects_bad_tau_and_empty_batch() {
        let value = MlpNet::zeros(&[1, 1], Activation::Relu);
        let states = array![[0.0]];
        for tau in [0.0, 1.0, -0.2, 1.2] {
            assert!(expectile_loss(&value, states.view(), &[0.0], tau).is_err());
        }
        let empty = Array2::<f64>::zeros((0, 1));
        assert!(matches!(
            expectile_loss(&value, empty.view(), &[], 0.5),
            Err(Error::EmptyBatch(_))
        ));
    }

    #[test]
    fn toy_benchmark_rejects_unknown_settings() {
        let mut cfg = ToyConfig::new(ToyMethod::Afu { rho: 1.7 });
        assert!(run_toy_benchmark(&cfg).is_err());
        cfg = ToyConfig::new(ToyMethod::Afu { rho: 0.3 });
        cfg.steps = 0;
        assert!(run_toy_benchmark(&cfg).is_err());
    }

    #[test]
    fn toy_benchmark_smoke_run_is_deterministic() {
        let mut cfg = ToyConfig::new(ToyMethod::Afu { rho: 0.3 });
        cfg.steps = 20;
        cfg.batch = 16;
        cfg.hidden = vec![8, 8];
        cfg.seed = 5;
        let a = run_toy_benchmark(&cfg).unwrap();
        let b = run_toy_benchmark(&cfg).unwrap();
        assert_eq!(a.rows.len(), 201);
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.v_estimate, rb.v_estimate);
        }
        // true max at any s is sin(4s) + 0.7
        for row in &a.rows {
            assert_relative_eq!(row.true_max, (4.0 * row.s).sin() + 0.7, max_relative = 1e-12);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn expectile_half_is_half_mse(
                seed in 0u64..500,
                n in 1usize..12,
            ) {
                let mut r = rng(seed);
                let value = MlpNet::new(&[1, 6, 1], Activation::Relu, &mut r);
                let states = Array2::from_shape_fn((n, 1), |_| r.random_range(-1.0..1.0));
                let targets: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
                let (loss, _) = expectile_loss(&value, states.view(), &targets, 0.5).unwrap();
                let out = value.forward_batch(states.view());
                let mse: f64 = (0..n)
                    .map(|i| {
                        let u = targets[i] - out[[i, 0]];
                        u * u
                    })
                    .sum::<f64>() / n as f64;
                prop_assert!((loss - 0.5 * mse).abs() <= 1e-12 * mse.max(1.0));
            }

            #[test]
            fn z_loss_is_nonnegative_and_zero_only_at_origin_of_branch(
                x in -3.0f64..3.0,
                y in -3.0f64..3.0,
            ) {
                let z = z_loss(x, y);
                prop_assert!(z >= 0.0);
                if x >= 0.0 {
                    prop_assert!((z - (x + y) * (x + y)).abs() < 1e-12);
                } else {
                    prop_assert!((z - (x * x + y * y)).abs() < 1e-12);
                }
            }
        }
    }
}
