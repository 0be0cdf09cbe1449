use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::numeric::{self, softplus};

/// Unregularised logistic regression with the bias as the last parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub omega: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            omega: vec![0.0; dim + 1],
        }
    }

    /// `omega . [x; 1]`.
    pub fn score(&self, x: &[f64]) -> f64 {
        let d = self.omega.len() - 1;
        numeric::dot(&self.omega[..d], x) + self.omega[d]
    }

    /// `y * omega . [x; 1]` with `y = +1` for class 1 and `-1` otherwise.
    pub fn margin(&self, x: &[f64], label: usize) -> f64 {
        let s = self.score(x);
        if label == 1 {
            s
        } else {
            -s
        }
    }
}

impl Classifier for LinearModel {
    fn num_classes(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        self.omega.len() - 1
    }

    fn params(&self) -> &[f64] {
        &self.omega
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.omega
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let p1 = numeric::sigmoid(self.score(x));
        vec![1.0 - p1, p1]
    }

    fn loss_grad(&self, x: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let z = self.score(x);
        let (t0, t1) = (target[0], target[1]);
        let dz = t0 * numeric::sigmoid(z) - t1 * numeric::sigmoid(-z);
        let d = x.len();
        for (g, xi) in grad[..d].iter_mut().zip(x) {
            *g += scale * dz * xi;
        }
        grad[d] += scale * dz;
        t0 * softplus(z) + t1 * softplus(-z)
    }

    fn loss(&self, x: &[f64], label: usize) -> f64 {
        softplus(-self.margin(x, label))
    }

    fn predict(&self, x: &[f64]) -> usize {
        usize::from(self.score(x) > 0.0)
    }
}
