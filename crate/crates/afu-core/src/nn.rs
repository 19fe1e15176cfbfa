//! Feed-forward networks with exact reverse-mode gradients.
//!
//! Everything downstream (critic, value/advantage pairs, policy) is built on
//! [`MlpNet`]: dense layers with a rectified-linear hidden activation and a
//! linear output layer, stored as `f64` end to end. Gradients are computed by
//! hand-rolled backpropagation and are exact up to floating point — the test
//! suites check them against central finite differences.
//!
//! Networks are plain value objects: cloning snapshots the parameters, and all
//! mutation goes through explicit update operations ([`AdamState::step`],
//! [`soft_update`]).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer activation. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative as a function of the pre-activation. ReLU uses 0 at z == 0.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Dense {
    /// Row-major, shape (out_dim, in_dim).
    w: Array2<f64>,
    b: Array1<f64>,
}

/// A dense feed-forward network: `sizes[0]` inputs, hidden layers with the
/// given activation, linear output of `sizes.last()` units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpNet {
    sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<Dense>,
}

/// Scale applied to the output layer at initialization so fresh value and
/// policy heads start near zero.
const FINAL_LAYER_INIT_SCALE: f64 = 1e-2;

impl MlpNet {
    /// Fan-in-scaled uniform initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    /// for weights and biases, with the output layer scaled down by 1e-2.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        let n_layers = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let scale = if l == n_layers - 1 {
                FINAL_LAYER_INIT_SCALE
            } else {
                1.0
            };
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                scale * rng.random_range(-bound..bound)
            });
            let b = Array1::from_shape_fn(fan_out, |_| scale * rng.random_range(-bound..bound));
            layers.push(Dense { w, b });
        }
        MlpNet {
            sizes: sizes.to_vec(),
            activation,
            layers,
        }
    }

    /// All-zero parameters; useful for tests and degenerate policies.
    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = (0..sizes.len() - 1)
            .map(|l| Dense {
                w: Array2::zeros((sizes[l + 1], sizes[l])),
                b: Array1::zeros(sizes[l + 1]),
            })
            .collect();
        MlpNet {
            sizes: sizes.to_vec(),
            activation,
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Forward pass for one input vector.
    pub fn forward(&self, input: ArrayView1<f64>) -> Array1<f64> {
        assert_eq!(
            input.len(),
            self.input_dim(),
            "input length {} does not match net input dim {}",
            input.len(),
            self.input_dim()
        );
        let mut a = input.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.w.dot(&a) + &layer.b;
            if l < last {
                z.mapv_inplace(|v| self.activation.apply(v));
            }
            a = z;
        }
        a
    }

    /// Forward pass for a batch (one sample per row).
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Array2<f64> {
        self.forward_trace(input).into_output()
    }

    /// Forward pass that keeps the per-layer pre-activations needed by
    /// [`MlpNet::backward_trace`].
    pub fn forward_trace(&self, input: ArrayView2<f64>) -> Trace {
        assert_eq!(
            input.ncols(),
            self.input_dim(),
            "input width {} does not match net input dim {}",
            input.ncols(),
            self.input_dim()
        );
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut a = input.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.w.t()) + &layer.b;
            if l < last {
                a = z.mapv(|v| self.activation.apply(v));
            }
            preacts.push(z);
        }
        Trace {
            input: input.to_owned(),
            preacts,
        }
    }

    /// Reverse-mode pass. Returns the gradient of `sum_rows(output · output_grad)`
    /// with respect to every parameter, plus the gradient with respect to the
    /// input (one row per sample). Gradients are summed over the batch; callers
    /// scale by 1/n for means.
    pub fn backward_trace(&self, trace: &Trace, output_grad: ArrayView2<f64>) -> (MlpGrads, Array2<f64>) {
        self.backward_impl(trace, output_grad, true)
    }

    /// Like [`MlpNet::backward_trace`] but skips parameter gradients; used when
    /// only the input gradient is needed (e.g. the critic's action gradient).
    pub fn input_gradients(&self, trace: &Trace, output_grad: ArrayView2<f64>) -> Array2<f64> {
        self.backward_impl(trace, output_grad, false).1
    }

    fn backward_impl(
        &self,
        trace: &Trace,
        output_grad: ArrayView2<f64>,
        with_params: bool,
    ) -> (MlpGrads, Array2<f64>) {
        let n_layers = self.layers.len();
        assert_eq!(trace.preacts.len(), n_layers, "trace does not match net");
        assert_eq!(
            output_grad.dim(),
            trace.preacts[n_layers - 1].dim(),
            "output_grad shape mismatch"
        );
        let mut grads = if with_params {
            MlpGrads::zeros_like(self)
        } else {
            MlpGrads { layers: Vec::new() }
        };
        let mut delta = output_grad.to_owned();
        let mut input_grad = Array2::zeros((0, 0));
        for l in (0..n_layers).rev() {
            if with_params {
                // Hidden activations are recomputed from the stored
                // pre-activations rather than cached.
                let act_holder: Array2<f64>;
                let a_prev = if l == 0 {
                    trace.input.view()
                } else {
                    act_holder = trace.preacts[l - 1].mapv(|v| self.activation.apply(v));
                    act_holder.view()
                };
                let gw = delta.t().dot(&a_prev);
                let gb = delta.sum_axis(Axis(0));
                grads.layers[l].0 += &gw;
                grads.layers[l].1 += &gb;
            }
            let d = delta.dot(&self.layers[l].w);
            if l == 0 {
                input_grad = d;
            } else {
                let z_prev = &trace.preacts[l - 1];
                delta = d;
                delta.zip_mut_with(z_prev, |dv, &z| *dv *= self.activation.derivative(z));
            }
        }
        (grads, input_grad)
    }

    /// Single-sample backward: gradient of `output · output_grad` with respect
    /// to the parameters and the input.
    pub fn backward(
        &self,
        input: ArrayView1<f64>,
        output_grad: ArrayView1<f64>,
    ) -> (MlpGrads, Array1<f64>) {
        assert_eq!(
            output_grad.len(),
            self.output_dim(),
            "output_grad length {} does not match net output dim {}",
            output_grad.len(),
            self.output_dim()
        );
        let x = input.insert_axis(Axis(0));
        let og = output_grad.insert_axis(Axis(0));
        let trace = self.forward_trace(x);
        let (grads, input_grads) = self.backward_trace(&trace, og);
        (grads, input_grads.row(0).to_owned())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat parameter vector, layer-major (weights row-major, then biases).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "parameter count mismatch");
        let mut it = params.iter();
        for l in &mut self.layers {
            for w in l.w.iter_mut() {
                *w = *it.next().unwrap();
            }
            for b in l.b.iter_mut() {
                *b = *it.next().unwrap();
            }
        }
    }

    /// Read one parameter by its flat index (finite-difference probes).
    pub fn param(&self, idx: usize) -> f64 {
        let (l, off) = self.locate(idx);
        let layer = &self.layers[l];
        if off < layer.w.len() {
            *layer.w.as_slice().unwrap().get(off).unwrap()
        } else {
            layer.b[off - layer.w.len()]
        }
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        let (l, off) = self.locate(idx);
        let layer = &mut self.layers[l];
        let wl = layer.w.len();
        if off < wl {
            layer.w.as_slice_mut().unwrap()[off] = value;
        } else {
            layer.b[off - wl] = value;
        }
    }

    fn locate(&self, idx: usize) -> (usize, usize) {
        let mut off = idx;
        for (l, layer) in self.layers.iter().enumerate() {
            let n = layer.w.len() + layer.b.len();
            if off < n {
                return (l, off);
            }
            off -= n;
        }
        panic!("parameter index {idx} out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|v| v.is_finite()) && l.b.iter().all(|v| v.is_finite()))
    }

    /// Direct access to a layer's weight matrix and bias, for tests that pin
    /// exact parameter values.
    pub fn layer_mut(&mut self, l: usize) -> (&mut Array2<f64>, &mut Array1<f64>) {
        let layer = &mut self.layers[l];
        (&mut layer.w, &mut layer.b)
    }

    pub fn layer(&self, l: usize) -> (&Array2<f64>, &Array1<f64>) {
        let layer = &self.layers[l];
        (&layer.w, &layer.b)
    }
}

/// Cached forward pass: the input batch plus every layer's pre-activations.
pub struct Trace {
    input: Array2<f64>,
    preacts: Vec<Array2<f64>>,
}

impl Trace {
    /// The linear output of the last layer, one row per sample.
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.preacts.last().unwrap().view()
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.preacts.pop().unwrap()
    }

    pub fn batch_len(&self) -> usize {
        self.input.nrows()
    }

    /// Smallest |pre-activation| across hidden layers. Finite-difference
    /// checks use this to stay away from ReLU kinks.
    pub fn min_hidden_preact_abs(&self) -> f64 {
        let n = self.preacts.len();
        self.preacts[..n.saturating_sub(1)]
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |acc, &z| acc.min(z.abs()))
    }
}

/// Per-parameter gradient accumulators, shape-identical to an [`MlpNet`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    /// (weight grads, bias grads) per layer.
    layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl MlpGrads {
    pub fn zeros_like(net: &MlpNet) -> Self {
        MlpGrads {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.w.dim()), Array1::zeros(l.b.len())))
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            w.mapv_inplace(|v| v * factor);
            b.mapv_inplace(|v| v * factor);
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        assert_eq!(self.layers.len(), other.layers.len(), "grad shape mismatch");
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }
}

/// Default Adam constants; the artifact names only the optimizer, so the
/// conventional values are used.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam state for one network.
#[derive(Debug, Clone)]
pub struct AdamState {
    label: String,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
}

impl AdamState {
    pub fn new(label: impl Into<String>, net: &MlpNet, lr: f64) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| (Array2::zeros(l.w.dim()), Array1::zeros(l.b.len())))
                .collect::<Vec<_>>()
        };
        AdamState {
            label: label.into(),
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// One bias-corrected Adam update. Rejects non-finite gradients, naming
    /// the offending network.
    pub fn step(&mut self, net: &mut MlpNet, grads: &MlpGrads) -> Result<()> {
        assert_eq!(net.layers.len(), self.m.len(), "adam state does not match net");
        if !grads.all_finite() {
            return Err(Error::NonFinite {
                what: format!("gradient for network '{}'", self.label),
                step: self.t,
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[l];
            let (mw, mb) = &mut self.m[l];
            let (vw, vb) = &mut self.v[l];
            adam_update_slice(
                layer.w.as_slice_mut().unwrap(),
                gw.as_slice().unwrap(),
                mw.as_slice_mut().unwrap(),
                vw.as_slice_mut().unwrap(),
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
            adam_update_slice(
                layer.b.as_slice_mut().unwrap(),
                gb.as_slice().unwrap(),
                mb.as_slice_mut().unwrap(),
                vb.as_slice_mut().unwrap(),
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update_slice(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam for a single scalar (the log-temperature).
#[derive(Debug, Clone)]
pub struct ScalarAdam {
    lr: f64,
    t: u64,
    m: f64,
    v: f64,
}

impl ScalarAdam {
    pub fn new(lr: f64) -> Self {
        ScalarAdam {
            lr,
            t: 0,
            m: 0.0,
            v: 0.0,
        }
    }

    pub fn step(&mut self, param: &mut f64, grad: f64) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::NonFinite {
                what: "scalar gradient".to_string(),
                step: self.t,
            });
        }
        self.t += 1;
        self.m = ADAM_BETA1 * self.m + (1.0 - ADAM_BETA1) * grad;
        self.v = ADAM_BETA2 * self.v + (1.0 - ADAM_BETA2) * grad * grad;
        let m_hat = self.m / (1.0 - ADAM_BETA1.powi(self.t as i32));
        let v_hat = self.v / (1.0 - ADAM_BETA2.powi(self.t as i32));
        *param -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        Ok(())
    }
}

/// Exponential-moving-average target tracking:
/// `target <- tau * online + (1 - tau) * target`.
///
/// `tau` must lie in (0, 1]; `tau == 1` degenerates to an exact copy (used
/// when initializing targets from online networks).
pub fn soft_update(target: &mut MlpNet, online: &MlpNet, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "target smoothing coefficient must be in (0, 1], got {tau}"
        )));
    }
    assert_eq!(target.sizes, online.sizes, "soft_update on mismatched nets");
    if tau == 1.0 {
        target.layers.clone_from(&online.layers);
        return Ok(());
    }
    // Incremental form keeps target == online an exact fixed point.
    for (tl, ol) in target.layers.iter_mut().zip(&online.layers) {
        tl.w.zip_mut_with(&ol.w, |t, &o| *t += tau * (o - *t));
        tl.b.zip_mut_with(&ol.b, |t, &o| *t += tau * (o - *t));
    }
    Ok(())
}

const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SnapshotEnvelope {
    version: u32,
    net: MlpNet,
}

impl MlpNet {
    /// Versioned JSON snapshot. Round-trips are lossless for finite `f64`
    /// parameters (shortest-round-trip float formatting).
    pub fn snapshot_json(&self) -> Result<String> {
        let env = SnapshotEnvelope {
            version: SNAPSHOT_VERSION,
            net: self.clone(),
        };
        Ok(serde_json::to_string(&env)?)
    }

    pub fn from_snapshot_json(json: &str) -> Result<MlpNet> {
        let env: SnapshotEnvelope = serde_json::from_str(json)?;
        if env.version != SNAPSHOT_VERSION {
            return Err(Error::SnapshotVersion {
                found: env.version,
                expected: SNAPSHOT_VERSION,
            });
        }
        Ok(env.net)
    }

    pub fn save_snapshot(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.snapshot_json()?)?;
        Ok(())
    }

    pub fn load_snapshot(path: &std::path::Path) -> Result<MlpNet> {
        let json = std::fs::read_to_string(path)?;
        MlpNet::from_snapshot_json(&json)
    }
}
