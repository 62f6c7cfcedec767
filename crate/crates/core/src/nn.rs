//! Tanh multi-layer perceptrons for the policy and value heads, with exact
//! reverse-mode gradients.
//!
//! Weights are stored input-major (`w[k * outputs + j]` maps input `k` to
//! output `j`). Every row of a batch is computed by the same loop in the
//! same order, so a batched forward pass is bit-identical to one row at a
//! time.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign};

use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::substream;

pub trait Scalar: Float + Default + Debug + Send + Sync + AddAssign + MulAssign + std::iter::Sum + 'static {
    /// Bytes per value.
    const WIDTH: usize;
    fn from_real(v: f64) -> Self;
    fn to_real(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// `bytes.len()` must equal `WIDTH`.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const WIDTH: usize = 4;
    fn from_real(v: f64) -> Self {
        v as f32
    }
    fn to_real(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const WIDTH: usize = 8;
    fn from_real(v: f64) -> Self {
        v
    }
    fn to_real(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Affine layer `y = x W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<F> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Dense<F> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![F::zero(); inputs * outputs], bias: vec![F::zero(); outputs] }
    }

    /// Uniform in `+-gain / sqrt(inputs)` for weights and biases.
    pub fn init_uniform(inputs: usize, outputs: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let bound = gain / (inputs as f64).sqrt();
        let mut draw = || F::from_real(bound * (2.0 * rng.random::<f64>() - 1.0));
        let weight = (0..inputs * outputs).map(|_| draw()).collect();
        let bias = (0..outputs).map(|_| draw()).collect();
        Self { inputs, outputs, weight, bias }
    }

    fn forward_row(&self, x: &[F], y: &mut [F]) {
        y.copy_from_slice(&self.bias);
        for (k, &xk) in x.iter().enumerate() {
            let row = &self.weight[k * self.outputs..(k + 1) * self.outputs];
            for (yj, &w) in y.iter_mut().zip(row) {
                *yj += xk * w;
            }
        }
    }
}

/// Tanh hidden layers and a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<F> {
    pub layers: Vec<Dense<F>>,
}

/// Layer inputs and outputs kept from a batched forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache<F> {
    /// `acts[0]` is the input; `acts[l + 1]` is the output of layer `l`
    /// (after tanh for hidden layers).
    pub acts: Vec<Vec<F>>,
    pub rows: usize,
}

impl<F: Scalar> MlpCache<F> {
    pub fn output(&self) -> &[F] {
        self.acts.last().expect("at least the input")
    }
}

impl<F: Scalar> Mlp<F> {
    /// `sizes = [input, hidden.., output]`.
    pub fn zeros(sizes: &[usize]) -> Self {
        Self { layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect() }
    }

    pub fn init(sizes: &[usize], output_gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| Dense::init_uniform(w[0], w[1], if l + 1 == n { output_gain } else { 1.0 }, rng))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    /// Forward pass of `rows` inputs stored row-major in `input`.
    pub fn forward_batch(&self, input: &[F], rows: usize) -> Result<MlpCache<F>> {
        if input.len() != rows * self.input_dim() {
            return Err(Error::shape(rows * self.input_dim(), input.len()));
        }
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let x = acts.last().expect("input pushed");
            let mut y = vec![F::zero(); rows * layer.outputs];
            for i in 0..rows {
                let yi = &mut y[i * layer.outputs..(i + 1) * layer.outputs];
                layer.forward_row(&x[i * layer.inputs..(i + 1) * layer.inputs], yi);
                if l != last {
                    yi.iter_mut().for_each(|v| *v = v.tanh());
                }
            }
            acts.push(y);
        }
        Ok(MlpCache { acts, rows })
    }

    pub fn forward(&self, input: &[F]) -> Result<Vec<F>> {
        Ok(self.forward_batch(input, 1)?.acts.pop().expect("output"))
    }

    /// Accumulates into `grad` the gradient of a loss whose derivative with
    /// respect to the batch output is `d_out` (row-major, same shape).
    pub fn backward(&self, cache: &MlpCache<F>, d_out: &[F], grad: &mut Mlp<F>) {
        let rows = cache.rows;
        debug_assert_eq!(d_out.len(), rows * self.output_dim());
        let last = self.layers.len() - 1;
        let mut delta = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (n_in, n_out) = (layer.inputs, layer.outputs);
            if l != last {
                // Through tanh: dy/dz = 1 - y^2.
                for (d, y) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                    *d *= F::one() - *y * *y;
                }
            }
            let x = &cache.acts[l];
            let g = &mut grad.layers[l];
            for i in 0..rows {
                let di = &delta[i * n_out..(i + 1) * n_out];
                for (gb, &d) in g.bias.iter_mut().zip(di) {
                    *gb += d;
                }
                for (k, &xk) in x[i * n_in..(i + 1) * n_in].iter().enumerate() {
                    let gw = &mut g.weight[k * n_out..(k + 1) * n_out];
                    for (w, &d) in gw.iter_mut().zip(di) {
                        *w += xk * d;
                    }
                }
            }
            if l > 0 {
                let mut prev = vec![F::zero(); rows * n_in];
                for i in 0..rows {
                    let di = &delta[i * n_out..(i + 1) * n_out];
                    for k in 0..n_in {
                        let w = &layer.weight[k * n_out..(k + 1) * n_out];
                        prev[i * n_in + k] = w.iter().zip(di).map(|(a, b)| *a * *b).sum();
                    }
                }
                delta = prev;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    /// Initial policy standard deviation in pre-squash action units.
    pub init_std: f64,
    /// Scale of the policy output layer's init bound relative to fan-in.
    pub policy_output_gain: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { hidden: vec![256, 128], init_std: 0.3, policy_output_gain: 0.01 }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid_config("network.hidden must be non-empty with positive widths"));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::invalid_config("network.init_std must be positive"));
        }
        if !(self.policy_output_gain > 0.0 && self.policy_output_gain <= 1.0) {
            return Err(Error::invalid_config("network.policy_output_gain must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Gaussian policy mean network, value network and a state-independent
/// log standard deviation. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<F> {
    pub policy: Mlp<F>,
    pub value: Mlp<F>,
    pub log_std: Vec<F>,
}

/// Batched forward pass of both heads.
#[derive(Clone, Debug)]
pub struct ForwardCache<F> {
    pub policy: MlpCache<F>,
    pub value: MlpCache<F>,
}

impl<F: Scalar> ForwardCache<F> {
    pub fn means(&self) -> &[F] {
        self.policy.output()
    }

    pub fn values(&self) -> &[F] {
        self.value.output()
    }
}

impl<F: Scalar> PolicyParams<F> {
    pub fn init(seed: u64, obs_dim: usize, action_dim: usize, cfg: &NetworkConfig) -> Self {
        let mut rng = substream(seed, &[0x6e6e]);
        let mut sizes = vec![obs_dim];
        sizes.extend(&cfg.hidden);
        let mut policy_sizes = sizes.clone();
        policy_sizes.push(action_dim);
        sizes.push(1);
        let policy = Mlp::init(&policy_sizes, cfg.policy_output_gain, &mut rng);
        let value = Mlp::init(&sizes, 1.0, &mut rng);
        Self { policy, value, log_std: vec![F::from_real(cfg.init_std.ln()); action_dim] }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            policy: Mlp::zeros(&self.policy.sizes()),
            value: Mlp::zeros(&self.value.sizes()),
            log_std: vec![F::zero(); self.log_std.len()],
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    /// Action mean and value for one observation.
    pub fn forward(&self, input: &[F]) -> Result<(Vec<F>, F)> {
        let mean = self.policy.forward(input)?;
        let value = self.value.forward(input)?[0];
        Ok((mean, value))
    }

    pub fn forward_batch(&self, input: &[F], rows: usize) -> Result<ForwardCache<F>> {
        Ok(ForwardCache { policy: self.policy.forward_batch(input, rows)?, value: self.value.forward_batch(input, rows)? })
    }

    /// Gradient of a loss given its derivatives with respect to the batch
    /// means, the batch values and the log-std.
    pub fn backward(&self, cache: &ForwardCache<F>, d_mean: &[F], d_value: &[F], d_log_std: &[F]) -> Result<Self> {
        let mut grad = self.zeros_like();
        self.policy.backward(&cache.policy, d_mean, &mut grad.policy);
        self.value.backward(&cache.value, d_value, &mut grad.value);
        grad.log_std.copy_from_slice(d_log_std);
        if !grad.is_finite() {
            return Err(Error::NonFiniteGradient(grad.first_non_finite().unwrap_or_default()));
        }
        Ok(grad)
    }

    /// Named flat tensors in a fixed order, with their shapes.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[F])> {
        let mut out = Vec::new();
        for (head, mlp) in [("policy", &self.policy), ("value", &self.value)] {
            for (l, layer) in mlp.layers.iter().enumerate() {
                out.push((format!("{head}.{l}.weight"), vec![layer.inputs, layer.outputs], layer.weight.as_slice()));
                out.push((format!("{head}.{l}.bias"), vec![layer.outputs], layer.bias.as_slice()));
            }
        }
        out.push(("log_std".to_string(), vec![self.log_std.len()], self.log_std.as_slice()));
        out
    }

    /// Mutable views in the same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        for mlp in [&mut self.policy, &mut self.value] {
            for layer in mlp.layers.iter_mut() {
                out.push(layer.weight.as_mut_slice());
                out.push(layer.bias.as_mut_slice());
            }
        }
        out.push(self.log_std.as_mut_slice());
        out
    }

    /// Rebuilds parameters from tensors in [`Self::tensors`] order, checking
    /// names and shapes.
    pub fn from_tensors(tensors: Vec<(String, Vec<usize>, Vec<F>)>) -> Result<Self> {
        let mut heads: [Vec<Dense<F>>; 2] = [Vec::new(), Vec::new()];
        let mut log_std = None;
        let mut iter = tensors.into_iter().peekable();
        while let Some((name, shape, data)) = iter.next() {
            let bad = |m: &str| Error::Checkpoint(format!("tensor {name}: {m}"));
            if shape.iter().product::<usize>() != data.len() {
                return Err(bad("data length does not match shape"));
            }
            if name == "log_std" {
                log_std = Some(data);
                continue;
            }
            let parts: Vec<&str> = name.split('.').collect();
            let head = match parts.as_slice() {
                ["policy", _, "weight"] => 0,
                ["value", _, "weight"] => 1,
                _ => return Err(bad("unexpected tensor")),
            };
            let index: usize = parts[1].parse().map_err(|_| bad("bad layer index"))?;
            if index != heads[head].len() || shape.len() != 2 {
                return Err(bad("layers out of order or not a matrix"));
            }
            let Some((bias_name, bias_shape, bias)) = iter.next() else {
                return Err(bad("missing bias"));
            };
            if bias_name != format!("{}.{}.bias", parts[0], index) || bias_shape != vec![shape[1]] || bias.len() != shape[1] {
                return Err(bad("bias missing or mismatched"));
            }
            if let Some(prev) = heads[head].last() {
                if prev.outputs != shape[0] {
                    return Err(bad("layer sizes do not chain"));
                }
            }
            heads[head].push(Dense { inputs: shape[0], outputs: shape[1], weight: data, bias });
        }
        let [policy, value] = heads;
        let log_std = log_std.ok_or_else(|| Error::Checkpoint("missing log_std".into()))?;
        if policy.is_empty() || value.is_empty() {
            return Err(Error::Checkpoint("missing network layers".into()));
        }
        let params = Self { policy: Mlp { layers: policy }, value: Mlp { layers: value }, log_std };
        if params.policy.input_dim() != params.value.input_dim()
            || params.policy.output_dim() != params.log_std.len()
            || params.value.output_dim() != 1
        {
            return Err(Error::Checkpoint("head shapes are inconsistent".into()));
        }
        Ok(params)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.2.iter().all(|v| v.is_finite()))
    }

    fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|t| t.2.iter().any(|v| !v.is_finite()))
            .map(|t| t.0)
    }

    pub fn norm_squared(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.2.iter()).map(|v| v.to_real() * v.to_real()).sum()
    }

    /// Element-wise conversion to another precision.
    pub fn cast<G: Scalar>(&self) -> PolicyParams<G> {
        let conv = |m: &Mlp<F>| Mlp {
            layers: m
                .layers
                .iter()
                .map(|l| Dense {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weight: l.weight.iter().map(|v| G::from_real(v.to_real())).collect(),
                    bias: l.bias.iter().map(|v| G::from_real(v.to_real())).collect(),
                })
                .collect(),
        };
        PolicyParams {
            policy: conv(&self.policy),
            value: conv(&self.value),
            log_std: self.log_std.iter().map(|v| G::from_real(v.to_real())).collect(),
        }
    }
}
