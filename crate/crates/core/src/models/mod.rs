//! Tiny differentiable classifiers with per-sample losses and weighted gradients.
//!
//! Both models are trained on cross-entropy against a target distribution over
//! classes, which covers hard labels (one-hot) and mixup targets alike. The
//! logistic model treats class 1 as `y = +1` and class 0 as `y = -1`.

mod lbfgs;
mod linear;
mod mlp;
mod train;

use serde::{Deserialize, Serialize};

pub use lbfgs::Lbfgs;
pub use linear::LinearModel;
pub use mlp::{SoftmaxMlp, DEFAULT_HIDDEN};
pub use train::{train, EpochRecord, Scheme, TrainOutcome, TrainSetup};

use crate::datasets::LabeledDataset;
use crate::error::{check_len, Error, Result};
use crate::numeric;
use crate::scheduler::{LossVector, SampleWeights};

pub trait Classifier {
    fn num_classes(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn probabilities(&self, x: &[f64]) -> Vec<f64>;
    /// Cross-entropy of `target` against the prediction for `x`; adds
    /// `scale * d(loss)/d(params)` to `grad`.
    fn loss_grad(&self, x: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64;
    /// Cross-entropy for a hard label.
    fn loss(&self, x: &[f64], label: usize) -> f64;

    fn predict(&self, x: &[f64]) -> usize {
        let p = self.probabilities(x);
        let mut best = 0;
        for (c, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = c;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Logistic(LinearModel),
    Mlp(SoftmaxMlp),
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            Model::Logistic($m) => $e,
            Model::Mlp($m) => $e,
        }
    };
}

impl Classifier for Model {
    fn num_classes(&self) -> usize {
        delegate!(self, m => m.num_classes())
    }

    fn input_dim(&self) -> usize {
        delegate!(self, m => m.input_dim())
    }

    fn params(&self) -> &[f64] {
        delegate!(self, m => m.params())
    }

    fn params_mut(&mut self) -> &mut [f64] {
        delegate!(self, m => m.params_mut())
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        delegate!(self, m => m.probabilities(x))
    }

    fn loss_grad(&self, x: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        delegate!(self, m => m.loss_grad(x, target, scale, grad))
    }

    fn loss(&self, x: &[f64], label: usize) -> f64 {
        delegate!(self, m => m.loss(x, label))
    }
}

fn check_shapes<M: Classifier + ?Sized>(model: &M, ds: &LabeledDataset) -> Result<()> {
    check_len("model input dimension", model.input_dim(), ds.dim())?;
    if ds.num_classes > model.num_classes() {
        return Err(Error::invalid(format!(
            "dataset has {} classes, model predicts {}",
            ds.num_classes,
            model.num_classes()
        )));
    }
    Ok(())
}

/// Cross-entropy of every sample, in nats.
pub fn per_sample_losses<M: Classifier + ?Sized>(model: &M, ds: &LabeledDataset) -> Result<LossVector> {
    check_shapes(model, ds)?;
    LossVector::new((0..ds.len()).map(|i| model.loss(ds.x.row(i), ds.y[i])).collect())
}

pub fn predictions<M: Classifier + ?Sized>(model: &M, ds: &LabeledDataset) -> Vec<usize> {
    (0..ds.len()).map(|i| model.predict(ds.x.row(i))).collect()
}

pub fn one_hot(label: usize, num_classes: usize) -> Vec<f64> {
    let mut t = vec![0.0; num_classes];
    t[label] = 1.0;
    t
}

/// Gradient and value of `sum_k coefs[k] * CE(targets[k], f(inputs[k]))`.
pub fn objective_grad<M: Classifier + ?Sized>(
    model: &M,
    inputs: &[&[f64]],
    targets: &[Vec<f64>],
    coefs: &[f64],
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; model.params().len()];
    let mut value = numeric::Accumulator::new();
    for ((x, t), c) in inputs.iter().zip(targets).zip(coefs) {
        value.add(c * model.loss_grad(x, t, *c, &mut grad));
    }
    (value.value(), grad)
}

/// Gradient of `sum_n w_n L_n` over the whole dataset.
pub fn weighted_gradient<M: Classifier + ?Sized>(
    model: &M,
    ds: &LabeledDataset,
    weights: &SampleWeights,
) -> Result<Vec<f64>> {
    check_shapes(model, ds)?;
    check_len("weighted_gradient", ds.len(), weights.len())?;
    let inputs: Vec<&[f64]> = (0..ds.len()).map(|i| ds.x.row(i)).collect();
    let targets: Vec<Vec<f64>> = ds.y.iter().map(|&c| one_hot(c, model.num_classes())).collect();
    Ok(objective_grad(model, &inputs, &targets, weights.as_slice()).1)
}

pub const FD_STEP: f64 = 1e-6;

/// Largest deviation between the analytic gradient of the mean loss and central
/// differences with step [`FD_STEP`], relative to the largest gradient entry.
pub fn gradient_check<M: Classifier + Clone>(model: &M, ds: &LabeledDataset) -> Result<f64> {
    let w = SampleWeights::uniform(ds.len());
    let analytic = weighted_gradient(model, ds, &w)?;
    let mean_loss = |m: &M| -> Result<f64> { Ok(per_sample_losses(m, ds)?.mean()) };
    let mut probe = model.clone();
    let mut numeric_grad = vec![0.0; analytic.len()];
    for (j, slot) in numeric_grad.iter_mut().enumerate() {
        let orig = probe.params()[j];
        probe.params_mut()[j] = orig + FD_STEP;
        let up = mean_loss(&probe)?;
        probe.params_mut()[j] = orig - FD_STEP;
        let down = mean_loss(&probe)?;
        probe.params_mut()[j] = orig;
        *slot = (up - down) / (2.0 * FD_STEP);
    }
    let scale = numeric::max_abs(&analytic).max(numeric::max_abs(&numeric_grad));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let diff: Vec<f64> = analytic.iter().zip(&numeric_grad).map(|(a, b)| a - b).collect();
    Ok(numeric::max_abs(&diff) / scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    /// Samples with margin `y * w.x >= m_e` are exactly the easy ones.
    pub m_e: f64,
    /// Set when `e >= ln 2`: the band is empty.
    pub empty: bool,
}

/// Margin at which the logistic loss equals `e`: `M_e = -ln(exp(e) - 1)`.
pub fn confidence_band(e: f64) -> Result<ConfidenceBand> {
    if !(e > 0.0 && e.is_finite()) {
        return Err(Error::invalid(format!("threshold must be finite and > 0, got {e}")));
    }
    let m_e = -e.exp_m1().ln();
    Ok(ConfidenceBand {
        m_e,
        empty: m_e <= 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Lbfgs,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub step: f64,
    /// L-BFGS stops once the largest gradient entry is at most this.
    pub grad_tol: f64,
    /// L-BFGS iterations; every iteration is one epoch.
    pub max_iter: usize,
    pub lbfgs_history: usize,
    /// SGD epochs.
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::lbfgs()
    }
}

impl OptimizerConfig {
    pub fn lbfgs() -> Self {
        Self {
            kind: OptimizerKind::Lbfgs,
            step: 0.01,
            grad_tol: 1e-5,
            max_iter: 150,
            lbfgs_history: 10,
            epochs: 30,
            batch_size: 32,
        }
    }

    pub fn sgd() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            step: 0.05,
            ..Self::lbfgs()
        }
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::config(format!("optimizer step must be > 0, got {}", self.step)));
        }
        if self.max_iter == 0 || self.epochs == 0 {
            return Err(Error::config("optimizer needs at least one iteration"));
        }
        if self.batch_size == 0 || self.lbfgs_history == 0 {
            return Err(Error::config("batch size and L-BFGS history must be >= 1"));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::config("gradient tolerance must be >= 0"));
        }
        Ok(self)
    }

    pub fn epochs(&self) -> usize {
        match self.kind {
            OptimizerKind::Lbfgs => self.max_iter,
            OptimizerKind::Sgd => self.epochs,
        }
    }
}
