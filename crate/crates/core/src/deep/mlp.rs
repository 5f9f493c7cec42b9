//! Dense feed-forward network with analytic backpropagation.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (row-major, one row per output unit) followed by the bias vector.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z`; ReLU uses 0 at the kink.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => (z > 0.0) as u8 as f64,
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlpError {
    #[error("expected a vector of length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid network shape: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Per-layer inputs and pre-activations from one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl Mlp {
    /// All-zero network. `sizes` lists input, hidden and output widths;
    /// `activations` has one entry per layer.
    pub fn zeros(sizes: &[usize], activations: &[Activation]) -> Result<Self, MlpError> {
        if sizes.len() < 2 {
            return Err(MlpError::Shape("need at least input and output sizes".into()));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(MlpError::Shape("layer widths must be positive".into()));
        }
        if activations.len() != sizes.len() - 1 {
            return Err(MlpError::Shape(format!(
                "{} activations for {} layers",
                activations.len(),
                sizes.len() - 1
            )));
        }
        Ok(Self {
            params: vec![0.0; param_count(sizes)],
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
        })
    }

    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng>(sizes: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self, MlpError> {
        let mut net = Self::zeros(sizes, activations)?;
        let mut off = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for p in &mut net.params[off..off + (w[0] + 1) * w[1]] {
                *p = rng.gen_range(-bound..=bound);
            }
            off += (w[0] + 1) * w[1];
        }
        Ok(net)
    }

    /// `hidden` layers with one shared activation and an identity output.
    pub fn with_hidden<R: Rng>(
        input: usize,
        hidden: &[usize],
        output: usize,
        act: Activation,
        rng: &mut R,
    ) -> Result<Self, MlpError> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![act; hidden.len()];
        acts.push(Activation::Identity);
        Self::new(&sizes, &acts, rng)
    }

    pub fn from_params(sizes: &[usize], activations: &[Activation], params: Vec<f64>) -> Result<Self, MlpError> {
        let mut net = Self::zeros(sizes, activations)?;
        net.set_params(&params)?;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), MlpError> {
        check_len(params, self.params.len())?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// `params += scale * direction`.
    pub fn add_scaled(&mut self, direction: &[f64], scale: f64) -> Result<(), MlpError> {
        check_len(direction, self.params.len())?;
        for (p, d) in self.params.iter_mut().zip(direction) {
            *p += scale * d;
        }
        Ok(())
    }

    /// Offsets of the weight block and bias block of layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let w_off: usize = self.sizes[..=l].windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        (w_off, w_off + self.sizes[l] * self.sizes[l + 1])
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, MlpError> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<Forward, MlpError> {
        check_len(x, self.input_size())?;
        let layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        let mut h = x.to_vec();
        for l in 0..layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let w = &self.params[w_off..b_off];
            let b = &self.params[b_off..b_off + fan_out];
            let z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    b[o] + row.iter().zip(&h).map(|(a, c)| a * c).sum::<f64>()
                })
                .collect();
            let act = self.activations[l];
            let next: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(z);
        }
        Ok(Forward {
            inputs,
            pre,
            output: h,
        })
    }

    /// Gradients of `upstream . output` with respect to parameters and input.
    pub fn backward(&self, fwd: &Forward, upstream: &[f64]) -> Result<Gradients, MlpError> {
        check_len(upstream, self.output_size())?;
        let layers = self.sizes.len() - 1;
        let mut grad = vec![0.0; self.params.len()];
        let mut delta: Vec<f64> = upstream
            .iter()
            .zip(&fwd.pre[layers - 1])
            .map(|(u, &z)| u * self.activations[layers - 1].derivative(z))
            .collect();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let input = &fwd.inputs[l];
            let mut d_in = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = w_off + o * fan_in;
                for k in 0..fan_in {
                    grad[row + k] += d * input[k];
                    d_in[k] += self.params[row + k] * d;
                }
                grad[b_off + o] += d;
            }
            delta = if l > 0 {
                d_in.iter()
                    .zip(&fwd.pre[l - 1])
                    .map(|(g, &z)| g * self.activations[l - 1].derivative(z))
                    .collect()
            } else {
                d_in
            };
        }
        Ok(Gradients {
            params: grad,
            input: delta,
        })
    }
}

fn check_len(v: &[f64], expected: usize) -> Result<(), MlpError> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(MlpError::Dimension {
            expected,
            got: v.len(),
        })
    }
}

/// Rescales `g` in place so its Euclidean norm is at most `max_norm`.
pub fn clip_global_norm(g: &mut [f64], max_norm: f64) -> f64 {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        g.iter_mut().for_each(|x| *x *= s);
    }
    norm
}
