use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::error::{Error, Result};

/// Fully connected network with rectifier hidden layers and a softmax output.
///
/// Parameters are stored layer by layer: the `out x in` weight matrix in
/// row-major order, then the `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxMlp {
    pub layer_dims: Vec<usize>,
    pub params: Vec<f64>,
}

pub const DEFAULT_HIDDEN: usize = 32;

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl SoftmaxMlp {
    pub fn zeros(layer_dims: Vec<usize>) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.iter().any(|d| *d == 0) {
            return Err(Error::invalid(format!("invalid layer dims {layer_dims:?}")));
        }
        if *layer_dims.last().unwrap() < 2 {
            return Err(Error::invalid("softmax output needs at least two classes"));
        }
        let params = vec![0.0; param_count(&layer_dims)];
        Ok(Self { layer_dims, params })
    }

    pub fn from_params(layer_dims: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(layer_dims)?;
        crate::error::check_len("mlp params", m.params.len(), params.len())?;
        m.params = params;
        Ok(m)
    }

    /// He-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(layer_dims: Vec<usize>, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(layer_dims)?;
        let mut offset = 0;
        for w in m.layer_dims.clone().windows(2) {
            let (inp, out) = (w[0], w[1]);
            let bound = (6.0 / inp as f64).sqrt();
            for p in &mut m.params[offset..offset + inp * out] {
                *p = rng.random_range(-bound..bound);
            }
            offset += inp * out + out;
        }
        Ok(m)
    }

    /// Pre-activations of every layer for one input.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layer_dims.len() - 1);
        let mut offset = 0;
        for (l, w) in self.layer_dims.windows(2).enumerate() {
            let (inp, out) = (w[0], w[1]);
            let input: Vec<f64> = if l == 0 {
                x.to_vec()
            } else {
                acts[l - 1].iter().map(|a| a.max(0.0)).collect()
            };
            let weights = &self.params[offset..offset + inp * out];
            let bias = &self.params[offset + inp * out..offset + inp * out + out];
            let z: Vec<f64> = (0..out)
                .map(|o| {
                    let row = &weights[o * inp..(o + 1) * inp];
                    row.iter().zip(&input).map(|(a, b)| a * b).sum::<f64>() + bias[o]
                })
                .collect();
            acts.push(z);
            offset += inp * out + out;
        }
        acts
    }
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

impl Classifier for SoftmaxMlp {
    fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let acts = self.forward(x);
        log_softmax(acts.last().unwrap()).iter().map(|v| v.exp()).collect()
    }

    fn loss_grad(&self, x: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let acts = self.forward(x);
        let logp = log_softmax(acts.last().unwrap());
        let loss = -target.iter().zip(&logp).map(|(t, l)| t * l).sum::<f64>();
        let t_sum: f64 = target.iter().sum();
        // d loss / d logits = t_sum * softmax - t.
        let mut delta: Vec<f64> = logp
            .iter()
            .zip(target)
            .map(|(l, t)| t_sum * l.exp() - t)
            .collect();
        let offsets: Vec<usize> = self
            .layer_dims
            .windows(2)
            .scan(0, |acc, w| {
                let start = *acc;
                *acc += w[0] * w[1] + w[1];
                Some(start)
            })
            .collect();
        for l in (0..self.layer_dims.len() - 1).rev() {
            let (inp, out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let offset = offsets[l];
            let input: Vec<f64> = if l == 0 {
                x.to_vec()
            } else {
                acts[l - 1].iter().map(|a| a.max(0.0)).collect()
            };
            for o in 0..out {
                let d = scale * delta[o];
                let row = &mut grad[offset + o * inp..offset + (o + 1) * inp];
                for (g, a) in row.iter_mut().zip(&input) {
                    *g += d * a;
                }
                grad[offset + inp * out + o] += d;
            }
            if l > 0 {
                let weights = &self.params[offset..offset + inp * out];
                delta = (0..inp)
                    .map(|i| {
                        if acts[l - 1][i] > 0.0 {
                            (0..out).map(|o| weights[o * inp + i] * delta[o]).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
        loss
    }

    fn loss(&self, x: &[f64], label: usize) -> f64 {
        let acts = self.forward(x);
        -log_softmax(acts.last().unwrap())[label]
    }
}
