//! Fully connected networks with hand-written backpropagation.
//!
//! Weights are stored row-major per layer (`n_out × n_in`). A forward pass
//! can keep a [`Cache`] of layer inputs and pre-activations, from which
//! [`DenseNet::backward`] accumulates parameter gradients and returns the
//! gradient with respect to the network input.

mod loss;
mod optim;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use loss::{quantile_huber, quantile_huber_grad, QuantileSpec};
pub use optim::{optimizer_step, Adam, Optimizer, Sgd};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {found}")]
    Shape { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid network document: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(n_in: usize, n_out: usize, activation: Activation) -> Self {
        Self {
            n_in,
            n_out,
            activation,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    fn check(&self) -> Result<(), NnError> {
        if self.weights.len() != self.n_in * self.n_out {
            return Err(NnError::Shape {
                expected: self.n_in * self.n_out,
                found: self.weights.len(),
            });
        }
        if self.bias.len() != self.n_out {
            return Err(NnError::Shape {
                expected: self.n_out,
                found: self.bias.len(),
            });
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("parameters"));
        }
        Ok(())
    }

    fn affine(&self, x: &[f64], z: &mut Vec<f64>) {
        z.clear();
        z.extend(
            self.weights
                .chunks_exact(self.n_in)
                .zip(&self.bias)
                .map(|(row, b)| b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()),
        );
    }
}

const FORMAT_TAG: &str = "densenet-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    format: String,
    layers: Vec<Layer>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Parameter gradients with the same layout as the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grads {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        self.weights
            .iter_mut()
            .chain(self.bias.iter_mut())
            .for_each(|v| v.iter_mut().for_each(|x| *x = 0.0));
    }

    pub fn scale(&mut self, s: f64) {
        self.weights
            .iter_mut()
            .chain(self.bias.iter_mut())
            .for_each(|v| v.iter_mut().for_each(|x| *x *= s));
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).flatten().all(|v| v.is_finite())
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend(w);
            out.extend(b);
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.bias)
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

impl DenseNet {
    /// Network with layer widths `sizes`, `hidden` activations between layers
    /// and `output` on the last one. Weights are drawn uniformly from
    /// `±1/√fan_in`, biases start at zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output widths");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == sizes.len() { output } else { hidden };
                let bound = 1.0 / (w[0].max(1) as f64).sqrt();
                let mut l = Layer::zeros(w[0], w[1], act);
                l.weights.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
                l
            })
            .collect();
        Self {
            format: FORMAT_TAG.into(),
            layers,
        }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        let net = Self {
            format: FORMAT_TAG.into(),
            layers,
        };
        net.check()?;
        Ok(net)
    }

    /// Single linear layer computing `y = x`.
    pub fn identity(n: usize) -> Self {
        let mut l = Layer::zeros(n, n, Activation::Identity);
        for i in 0..n {
            l.weights[i * n + i] = 1.0;
        }
        Self {
            format: FORMAT_TAG.into(),
            layers: vec![l],
        }
    }

    fn check(&self) -> Result<(), NnError> {
        if self.format != FORMAT_TAG {
            return Err(NnError::Format(format!("unknown format tag {:?}", self.format)));
        }
        if self.layers.is_empty() {
            return Err(NnError::Format("no layers".into()));
        }
        for l in &self.layers {
            l.check()?;
        }
        for w in self.layers.windows(2) {
            if w[0].n_out != w[1].n_in {
                return Err(NnError::Shape {
                    expected: w[0].n_out,
                    found: w[1].n_in,
                });
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().expect("non-empty").n_out
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.n_inputs() {
            return Err(NnError::Shape {
                expected: self.n_inputs(),
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        let mut z = Vec::new();
        for l in &self.layers {
            l.affine(&a, &mut z);
            a.clear();
            a.extend(z.iter().map(|&v| l.activation.apply(v)));
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<Cache, NnError> {
        self.check_input(x)?;
        let mut cache = Cache::default();
        let mut a = x.to_vec();
        for l in &self.layers {
            let mut z = Vec::with_capacity(l.n_out);
            l.affine(&a, &mut z);
            let next = z.iter().map(|&v| l.activation.apply(v)).collect();
            cache.inputs.push(std::mem::replace(&mut a, next));
            cache.pre.push(z);
        }
        cache.output = a;
        Ok(cache)
    }

    /// Adds `∂L/∂θ` to `grads` given `upstream = ∂L/∂output`, and returns `∂L/∂input`.
    pub fn backward(&self, cache: &Cache, upstream: &[f64], grads: &mut Grads) -> Result<Vec<f64>, NnError> {
        if upstream.len() != self.n_outputs() {
            return Err(NnError::Shape {
                expected: self.n_outputs(),
                found: upstream.len(),
            });
        }
        let mut delta = upstream.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            for (d, &z) in delta.iter_mut().zip(&cache.pre[i]) {
                *d *= l.activation.derivative(z);
            }
            let input = &cache.inputs[i];
            let gw = &mut grads.weights[i];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    let row = &mut gw[o * l.n_in..(o + 1) * l.n_in];
                    for (g, x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            for (g, d) in grads.bias[i].iter_mut().zip(&delta) {
                *g += d;
            }
            let mut prev = vec![0.0; l.n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (p, w) in prev.iter_mut().zip(&l.weights[o * l.n_in..(o + 1) * l.n_in]) {
                        *p += d * w;
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(&l.weights);
            out.extend(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), NnError> {
        if p.len() != self.n_params() {
            return Err(NnError::Shape {
                expected: self.n_params(),
                found: p.len(),
            });
        }
        let mut it = p.iter();
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|v| *v = *it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, NnError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let net: Self = serde_json::from_str(text)?;
        net.check()?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
