//! Dense feed-forward networks with hand-derived reverse mode.
//!
//! Parameters are flattened layer by layer, weights row-major then bias; the
//! same ordering is used by [`ParameterVector`], gradients, and optimizers.

use std::ops::{Deref, DerefMut};

use ndarray::{Array1, Array2, ArrayView1};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => util::sigmoid(x),
        }
    }

    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
            Activation::Sigmoid => out * (1.0 - out),
        }
    }
}

/// Flat view of every parameter of a model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn zeros(len: usize) -> Self {
        ParameterVector(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn add_scaled(&mut self, other: &[f64], scale: f64) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += scale * b;
        }
    }

    pub fn concat(parts: &[&[f64]]) -> Self {
        ParameterVector(parts.iter().flat_map(|p| p.iter().copied()).collect())
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        ParameterVector(v)
    }
}

impl Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParameterVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Array2<f64>,
    bias: Array1<f64>,
    activation: Activation,
}

impl DenseLayer {
    /// `weights` is `out x in`.
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::shape(format!(
                "weights have {} rows but bias has {} entries",
                weights.nrows(),
                bias.len()
            )));
        }
        if weights.ncols() == 0 || weights.nrows() == 0 {
            return Err(Error::shape("layer dimensions must be positive"));
        }
        if !util::all_finite(weights.iter().chain(bias.iter())) {
            return Err(Error::NumericInput("layer parameters must be finite".into()));
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Intermediate values of one forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    inputs: Vec<Array1<f64>>,
    pre: Vec<Array1<f64>>,
    output: Array1<f64>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array1<f64> {
        &self.output
    }

    pub fn input(&self) -> &Array1<f64> {
        &self.inputs[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetCheckpoint", into = "NetCheckpoint")]
pub struct FeedForwardNet {
    layers: Vec<DenseLayer>,
}

impl FeedForwardNet {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(format!(
                    "layer output {} does not feed layer input {}",
                    pair[0].output_dim(),
                    pair[1].input_dim()
                )));
            }
        }
        Ok(FeedForwardNet { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::output_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::shape(format!(
                "network expects {} inputs, got {len}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_input(input.len())?;
        let mut x = input.to_owned();
        for layer in &self.layers {
            let mut z = layer.weights.dot(&x) + &layer.bias;
            z.mapv_inplace(|v| layer.activation.apply(v));
            x = z;
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: ArrayView1<f64>) -> Result<ForwardTrace> {
        self.check_input(input.len())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        for layer in &self.layers {
            let z = layer.weights.dot(&x) + &layer.bias;
            let y = z.mapv(|v| layer.activation.apply(v));
            inputs.push(x);
            pre.push(z);
            x = y;
        }
        Ok(ForwardTrace {
            inputs,
            pre,
            output: x,
        })
    }

    /// Accumulates parameter gradients into `grad` (length [`param_count`])
    /// and returns the gradient with respect to the network input.
    ///
    /// [`param_count`]: FeedForwardNet::param_count
    pub fn backward_trace(&self, trace: &ForwardTrace, upstream: ArrayView1<f64>, grad: &mut [f64]) -> Array1<f64> {
        assert_eq!(upstream.len(), self.output_dim(), "upstream gradient length");
        assert_eq!(grad.len(), self.param_count(), "gradient buffer length");
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for layer in &self.layers {
            offsets.push(at);
            at += layer.param_count();
        }

        let mut g_out = upstream.to_owned();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let pre = &trace.pre[li];
            let out = if li + 1 == self.layers.len() {
                &trace.output
            } else {
                &trace.inputs[li + 1]
            };
            let g_pre: Array1<f64> = g_out
                .iter()
                .zip(pre.iter().zip(out.iter()))
                .map(|(g, (&z, &y))| g * layer.activation.derivative(z, y))
                .collect();
            let x = &trace.inputs[li];
            let (in_dim, out_dim) = (layer.input_dim(), layer.output_dim());
            let base = offsets[li];
            for r in 0..out_dim {
                let gr = g_pre[r];
                if gr != 0.0 {
                    let row = &mut grad[base + r * in_dim..base + (r + 1) * in_dim];
                    for (g, &xv) in row.iter_mut().zip(x.iter()) {
                        *g += gr * xv;
                    }
                }
                grad[base + out_dim * in_dim + r] += gr;
            }
            g_out = layer.weights.t().dot(&g_pre);
        }
        g_out
    }

    /// Parameter gradient and input gradient for `upstream` at `input`.
    pub fn backward(&self, input: ArrayView1<f64>, upstream: ArrayView1<f64>) -> Result<(ParameterVector, Array1<f64>)> {
        if upstream.len() != self.output_dim() {
            return Err(Error::shape(format!(
                "upstream gradient has {} entries, network outputs {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let trace = self.forward_trace(input)?;
        let mut grad = ParameterVector::zeros(self.param_count());
        let g_in = self.backward_trace(&trace, upstream, &mut grad);
        Ok((grad, g_in))
    }

    pub fn to_vector(&self) -> ParameterVector {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.bias.iter());
        }
        ParameterVector(out)
    }

    pub fn set_from_slice(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(format!(
                "{} parameters for a network with {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut() {
                *w = params[at];
                at += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = params[at];
                at += 1;
            }
        }
        Ok(())
    }

    /// A copy of this network's architecture carrying `params`.
    pub fn with_parameters(&self, params: &[f64]) -> Result<Self> {
        let mut net = self.clone();
        net.set_from_slice(params)?;
        Ok(net)
    }
}

/// Builds a net with `dims.len() - 1` layers. Hidden layers use `hidden`,
/// the last layer uses `output`. Weights are uniform in
/// `+-sqrt(6 / (fan_in + fan_out))`, biases zero.
pub fn init_net(dims: &[usize], hidden: Activation, output: Activation, seed: u64) -> Result<FeedForwardNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_net_with(dims, hidden, output, &mut rng)
}

pub(crate) fn init_net_with(
    dims: &[usize],
    hidden: Activation,
    output: Activation,
    rng: &mut ChaCha8Rng,
) -> Result<FeedForwardNet> {
    if dims.len() < 2 {
        return Err(Error::config("a network needs at least two dims"));
    }
    if dims.contains(&0) {
        return Err(Error::config(format!("network dims must be positive, got {dims:?}")));
    }
    let last = dims.len() - 2;
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng));
            let activation = if i == last { output } else { hidden };
            DenseLayer::new(weights, Array1::zeros(fan_out), activation)
        })
        .collect::<Result<Vec<_>>>()?;
    FeedForwardNet::new(layers)
}

/// Largest per-coordinate relative error between the analytic gradient
/// returned by `loss_fn` and central differences of its value:
/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, ParameterVector)>,
{
    let (value, analytic) = loss_fn(params)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value} at the base point")));
    }
    if analytic.len() != params.len() {
        return Err(Error::shape(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        probe[i] = params[i] + eps;
        let (plus, _) = loss_fn(&probe)?;
        probe[i] = params[i] - eps;
        let (minus, _) = loss_fn(&probe)?;
        probe[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("loss is not finite around coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[derive(Serialize, Deserialize)]
struct NetCheckpoint {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

impl From<FeedForwardNet> for NetCheckpoint {
    fn from(net: FeedForwardNet) -> Self {
        NetCheckpoint {
            dims: net.dims(),
            activations: net.layers.iter().map(|l| l.activation).collect(),
            weights: net
                .layers
                .iter()
                .map(|l| l.weights.outer_iter().map(|r| r.to_vec()).collect())
                .collect(),
            biases: net.layers.iter().map(|l| l.bias.to_vec()).collect(),
        }
    }
}

impl TryFrom<NetCheckpoint> for FeedForwardNet {
    type Error = Error;

    fn try_from(ck: NetCheckpoint) -> Result<Self> {
        let n = ck.dims.len().saturating_sub(1);
        if n == 0 || ck.activations.len() != n || ck.weights.len() != n || ck.biases.len() != n {
            return Err(Error::config("checkpoint layer lists disagree with dims"));
        }
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let (fan_in, fan_out) = (ck.dims[i], ck.dims[i + 1]);
            let rows = &ck.weights[i];
            if rows.len() != fan_out || rows.iter().any(|r| r.len() != fan_in) {
                return Err(Error::config(format!("checkpoint layer {i} weights are not {fan_out}x{fan_in}")));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let weights = Array2::from_shape_vec((fan_out, fan_in), flat).expect("shape checked");
            layers.push(DenseLayer::new(weights, Array1::from(ck.biases[i].clone()), ck.activations[i])?);
        }
        FeedForwardNet::new(layers)
    }
}
