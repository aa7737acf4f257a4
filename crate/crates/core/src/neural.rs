//! Small fully connected networks with hand-written gradients.
//!
//! Parameters live in one flat vector (layer by layer, weights row-major
//! then biases) so that the optimiser and checkpoints never need to know the
//! architecture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HIDDEN_UNITS: usize = 32;
pub const SIGMA_FLOOR: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("expected {what} of length {expected}, got {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("target {0} outside [0, 1]")]
    InvalidTarget(f64),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("checkpoint: {0}")]
    Json(#[from] serde_json::Error),
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), NeuralError> {
    if expected == found {
        Ok(())
    } else {
        Err(NeuralError::Shape {
            what,
            expected,
            found,
        })
    }
}

/// Multi-layer perceptron with rectified-linear hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, needed for [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input, the last entry the output.
    activations: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least input and output")
    }

    /// Pre-activations of hidden layers (the ones passed through the rectifier).
    pub fn hidden_pre_activations(&self) -> &[Vec<f64>] {
        &self.pre[..self.pre.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

impl Mlp {
    /// `in_dim -> 32 -> 32 -> out_dim`, Glorot-uniform weights and zero biases.
    pub fn standard(in_dim: usize, out_dim: usize, seed: u64) -> Result<Self, NeuralError> {
        Self::new(&[in_dim, HIDDEN_UNITS, HIDDEN_UNITS, out_dim], seed)
    }

    pub fn new(sizes: &[usize], seed: u64) -> Result<Self, NeuralError> {
        let mut mlp = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut mlp.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-limit..=limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(mlp)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, NeuralError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NeuralError::Architecture(format!("layer sizes {sizes:?}")));
        }
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; count],
        })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self, NeuralError> {
        let mut mlp = Self::zeros(sizes)?;
        check_len("parameter vector", mlp.params.len(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NeuralError::NonFinite("parameters"));
        }
        mlp.params = params;
        Ok(mlp)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().expect("validated")
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(weights, biases)` of layer `l`; weights are `out x in`, row-major.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (start, fan_in, fan_out) = self.layer_offset(l);
        let w_end = start + fan_in * fan_out;
        (
            &self.params[start..w_end],
            &self.params[w_end..w_end + fan_out],
        )
    }

    fn layer_offset(&self, l: usize) -> (usize, usize, usize) {
        let start = self.sizes[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        (start, self.sizes[l], self.sizes[l + 1])
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NeuralError> {
        Ok(self
            .forward_cached(input)?
            .activations
            .pop()
            .expect("output layer"))
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache, NeuralError> {
        check_len("input", self.in_dim(), input.len())?;
        let layers = self.sizes.len() - 1;
        let mut activations = Vec::with_capacity(layers + 1);
        let mut pre = Vec::with_capacity(layers);
        activations.push(input.to_vec());
        for l in 0..layers {
            let (w, b) = self.layer(l);
            let x = &activations[l];
            let z: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(i, &bi)| {
                    bi + w[i * x.len()..(i + 1) * x.len()]
                        .iter()
                        .zip(x)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                })
                .collect();
            let out = if l + 1 < layers {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            activations.push(out);
        }
        Ok(ForwardCache { activations, pre })
    }

    /// Gradients of a scalar loss given `d loss / d output`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
    ) -> Result<Gradients, NeuralError> {
        check_len("output gradient", self.out_dim(), grad_output.len())?;
        check_len("cached layers", self.sizes.len(), cache.activations.len())?;
        let layers = self.sizes.len() - 1;
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = grad_output.to_vec();
        for l in (0..layers).rev() {
            if l + 1 < layers {
                for (d, &z) in delta.iter_mut().zip(&cache.pre[l]) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let (start, fan_in, fan_out) = self.layer_offset(l);
            let x = &cache.activations[l];
            for i in 0..fan_out {
                for j in 0..fan_in {
                    grads[start + i * fan_in + j] = delta[i] * x[j];
                }
                grads[start + fan_in * fan_out + i] = delta[i];
            }
            let (w, _) = self.layer(l);
            delta = (0..fan_in)
                .map(|j| (0..fan_out).map(|i| w[i * fan_in + j] * delta[i]).sum())
                .collect();
        }
        Ok(Gradients {
            params: grads,
            input: delta,
        })
    }

    pub fn to_checkpoint(
        &self,
        metadata: serde_json::Map<String, serde_json::Value>,
    ) -> MlpCheckpoint {
        let layers = (0..self.sizes.len() - 1)
            .map(|l| {
                let (w, b) = self.layer(l);
                LayerRecord {
                    weights: w.to_vec(),
                    biases: b.to_vec(),
                }
            })
            .collect();
        MlpCheckpoint {
            layer_sizes: self.sizes.clone(),
            activation: "relu".into(),
            layers,
            metadata,
        }
    }

    pub fn from_checkpoint(checkpoint: &MlpCheckpoint) -> Result<Self, NeuralError> {
        if checkpoint.activation != "relu" {
            return Err(NeuralError::Architecture(format!(
                "activation {}",
                checkpoint.activation
            )));
        }
        let params = checkpoint
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect();
        Self::from_params(&checkpoint.layer_sizes, params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    /// Row-major `out x in`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// JSON form of an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub layer_sizes: Vec<usize>,
    pub activation: String,
    pub layers: Vec<LayerRecord>,
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Parameters are untouched on error.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NeuralError> {
        check_len("parameters", self.m.len(), params.len())?;
        check_len("gradients", self.m.len(), grads.len())?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(NeuralError::NonFinite("gradient"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Positive scale from an unconstrained network output.
pub fn sigma_from_pre(pre: f64) -> f64 {
    softplus(pre) + SIGMA_FLOOR
}

/// Binary cross-entropy on logits, summed over entries, with its gradient.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>), NeuralError> {
    check_len("targets", logits.len(), targets.len())?;
    if let Some(&t) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(NeuralError::InvalidTarget(t));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(NeuralError::NonFinite("logit"));
    }
    let loss = logits
        .iter()
        .zip(targets)
        .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
        .sum();
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&z, &t)| sigmoid(z) - t)
        .collect();
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNll {
    pub loss: f64,
    pub sigma: Vec<f64>,
    pub grad_mu: Vec<f64>,
    /// Gradient with respect to the unconstrained scale outputs.
    pub grad_pre_sigma: Vec<f64>,
}

/// Negative log-density of `target` under a diagonal Gaussian whose scale is
/// `softplus(pre_sigma) + floor`.
pub fn gaussian_nll(
    mu: &[f64],
    pre_sigma: &[f64],
    target: &[f64],
) -> Result<GaussianNll, NeuralError> {
    check_len("scale", mu.len(), pre_sigma.len())?;
    check_len("target", mu.len(), target.len())?;
    if mu
        .iter()
        .chain(pre_sigma)
        .chain(target)
        .any(|v| !v.is_finite())
    {
        return Err(NeuralError::NonFinite("Gaussian input"));
    }
    let half_log_two_pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let sigma: Vec<f64> = pre_sigma.iter().map(|&p| sigma_from_pre(p)).collect();
    let mut loss = 0.0;
    let mut grad_mu = Vec::with_capacity(mu.len());
    let mut grad_pre_sigma = Vec::with_capacity(mu.len());
    for i in 0..mu.len() {
        let d = mu[i] - target[i];
        let s = sigma[i];
        loss += s.ln() + half_log_two_pi + 0.5 * d * d / (s * s);
        grad_mu.push(d / (s * s));
        let dloss_dsigma = 1.0 / s - d * d / (s * s * s);
        grad_pre_sigma.push(dloss_dsigma * sigmoid(pre_sigma[i]));
    }
    Ok(GaussianNll {
        loss,
        sigma,
        grad_mu,
        grad_pre_sigma,
    })
}

/// Gaussian NLL taking the scale directly; used where the scale is not a network output.
pub fn gaussian_nll_sigma(mu: &[f64], sigma: &[f64], target: &[f64]) -> Result<f64, NeuralError> {
    check_len("scale", mu.len(), sigma.len())?;
    check_len("target", mu.len(), target.len())?;
    if sigma.iter().any(|&s| !(s >= SIGMA_FLOOR) || !s.is_finite()) {
        return Err(NeuralError::NonFinite("scale"));
    }
    let half_log_two_pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    Ok((0..mu.len())
        .map(|i| sigma[i].ln() + half_log_two_pi + 0.5 * ((mu[i] - target[i]) / sigma[i]).powi(2))
        .sum())
}
