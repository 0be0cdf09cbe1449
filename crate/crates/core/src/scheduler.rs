//! Difficulty measurer and training scheduler.
//!
//! Given per-sample losses and an error threshold `e`, every sample is marked
//! easy (`+1`, loss `<= e`) or hard (`-1`). The weight carried by the hard
//! samples, `rho`, becomes a log-odds step
//!
//! ```text
//! alpha = (1/q) * [ ln((1 - rho) / rho) + ln(tau / (1 - tau)) ]
//! ```
//!
//! and each weight is multiplied by `exp(-alpha * beta)` and renormalised.
//! With `tau = 1/2` the second term vanishes. While `rho > tau` easy samples
//! gain weight, once `rho < tau` the hard samples do.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numeric;

pub const DEFAULT_RHO_CLIP: (f64, f64) = (1e-4, 1.0 - 1e-4);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    /// Error threshold in nats.
    pub e: f64,
    /// Stabiliser dividing the log-odds step.
    pub q: f64,
    /// Phase threshold.
    pub tau: f64,
    pub rho_clip: (f64, f64),
}

impl SchedulerConfig {
    pub fn new(e: f64, q: f64) -> Result<Self> {
        Self {
            e,
            q,
            tau: 0.5,
            rho_clip: DEFAULT_RHO_CLIP,
        }
        .validated()
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        self.tau = tau;
        self.validated()
    }

    pub fn with_rho_clip(mut self, lo: f64, hi: f64) -> Result<Self> {
        self.rho_clip = (lo, hi);
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.e.is_finite() && self.e > 0.0) {
            return Err(Error::config(format!("error threshold e must be > 0, got {}", self.e)));
        }
        if !(self.q.is_finite() && self.q >= 2.0) {
            return Err(Error::config(format!("stabiliser q must be >= 2, got {}", self.q)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        let (lo, hi) = self.rho_clip;
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return Err(Error::config(format!(
                "rho clip bounds must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"
            )));
        }
        Ok(self)
    }

    /// Largest possible `|alpha|` under this configuration.
    pub fn alpha_bound(&self) -> f64 {
        let (lo, hi) = self.rho_clip;
        let logit_tau = (self.tau / (1.0 - self.tau)).ln();
        let a = (((1.0 - lo) / lo).ln() + logit_tau).abs();
        let b = (((1.0 - hi) / hi).ln() + logit_tau).abs();
        a.max(b) / self.q
    }
}

/// Per-sample losses in nats; finite and non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LossVector(Vec<f64>);

impl LossVector {
    pub fn new(losses: Vec<f64>) -> Result<Self> {
        if let Some((i, l)) = losses
            .iter()
            .enumerate()
            .find(|(_, l)| !l.is_finite() || **l < 0.0)
        {
            return Err(Error::invalid(format!(
                "loss at index {i} is {l}; losses must be finite and non-negative"
            )));
        }
        Ok(Self(losses))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        numeric::mean(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for LossVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LossVector> for Vec<f64> {
    fn from(v: LossVector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Hard,
}

impl Difficulty {
    /// `+1` for easy, `-1` for hard.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Difficulty::Easy => 1.0,
            Difficulty::Hard => -1.0,
        }
    }

    pub fn is_hard(self) -> bool {
        self == Difficulty::Hard
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyVector(Vec<Difficulty>);

impl DifficultyVector {
    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        signs
            .iter()
            .map(|&s| match s {
                1 => Ok(Difficulty::Easy),
                -1 => Ok(Difficulty::Hard),
                other => Err(Error::invalid(format!("difficulty must be +1 or -1, got {other}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn signs(&self) -> Vec<i8> {
        self.0
            .iter()
            .map(|d| if d.is_hard() { -1 } else { 1 })
            .collect()
    }

    pub fn as_slice(&self) -> &[Difficulty] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn hard_count(&self) -> usize {
        self.0.iter().filter(|d| d.is_hard()).count()
    }
}

impl FromIterator<Difficulty> for DifficultyVector {
    fn from_iter<I: IntoIterator<Item = Difficulty>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Probability vector over the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SampleWeights(Vec<f64>);

pub const WEIGHT_SUM_TOL: f64 = 1e-12;

impl SampleWeights {
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// Wraps an already-normalised vector, rejecting it if it is not one.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("sample weights must be non-empty"));
        }
        if let Some((i, x)) = w.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x > 0.0)) {
            return Err(Error::invalid(format!("weight at index {i} is {x}; weights must be > 0")));
        }
        let s = numeric::sum(w.iter().copied());
        if (s - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("weights sum to {s}, expected 1")));
        }
        Ok(Self(w))
    }

    /// Normalises positive masses into a probability vector.
    pub fn from_unnormalized(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::invalid("sample weights must be non-empty"));
        }
        let z = numeric::sum(mass.iter().copied());
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::Numeric(format!("weight normaliser is {z}")));
        }
        Self::new(mass.into_iter().map(|m| m / z).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl TryFrom<Vec<f64>> for SampleWeights {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SampleWeights> for Vec<f64> {
    fn from(v: SampleWeights) -> Self {
        v.0
    }
}

/// Output of [`weight_change`]: the step before it is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightChange {
    pub rho_raw: f64,
    pub rho_clipped: f64,
    /// `1/2 - rho_clipped`.
    pub gamma: f64,
    pub alpha: f64,
    pub clipped: bool,
}

/// Full per-epoch scheduler record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochUpdate {
    pub rho_raw: f64,
    pub rho_clipped: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Normaliser of the multiplicative update.
    pub z: f64,
    pub clipped: bool,
}

impl EpochUpdate {
    pub fn from_change(change: WeightChange, z: f64) -> Self {
        Self {
            rho_raw: change.rho_raw,
            rho_clipped: change.rho_clipped,
            gamma: change.gamma,
            alpha: change.alpha,
            z,
            clipped: change.clipped,
        }
    }

    /// Record for an epoch in which the weights were left untouched.
    pub fn identity(rho_raw: f64, config: &SchedulerConfig) -> Self {
        let (lo, hi) = config.rho_clip;
        let rho_clipped = rho_raw.clamp(lo, hi);
        Self {
            rho_raw,
            rho_clipped,
            gamma: 0.5 - rho_clipped,
            alpha: 0.0,
            z: 1.0,
            clipped: rho_clipped != rho_raw,
        }
    }
}

/// Marks each sample easy (`loss <= e`) or hard.
pub fn mark_difficulty(losses: &[f64], e: f64) -> Result<DifficultyVector> {
    if !(e.is_finite() && e > 0.0) {
        return Err(Error::invalid(format!("error threshold must be > 0, got {e}")));
    }
    losses
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if !l.is_finite() {
                Err(Error::invalid(format!("loss at index {i} is not finite ({l})")))
            } else if l <= e {
                Ok(Difficulty::Easy)
            } else {
                Ok(Difficulty::Hard)
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(DifficultyVector)
}

/// Total weight carried by hard samples.
pub fn hard_mass(weights: &[f64], beta: &DifficultyVector) -> Result<f64> {
    check_len("hard_mass", weights.len(), beta.len())?;
    let rho = numeric::sum(
        weights
            .iter()
            .zip(beta.as_slice())
            .filter(|(_, d)| d.is_hard())
            .map(|(w, _)| *w),
    );
    Ok(rho.clamp(0.0, 1.0))
}

/// Clips `rho` and converts it into the log-odds weight change.
pub fn weight_change(rho: f64, config: &SchedulerConfig) -> Result<WeightChange> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("hard mass must lie in [0, 1], got {rho}")));
    }
    let (lo, hi) = config.rho_clip;
    let rho_clipped = rho.clamp(lo, hi);
    let mut log_odds = ((1.0 - rho_clipped) / rho_clipped).ln();
    if config.tau != 0.5 {
        log_odds += (config.tau / (1.0 - config.tau)).ln();
    }
    Ok(WeightChange {
        rho_raw: rho,
        rho_clipped,
        gamma: 0.5 - rho_clipped,
        alpha: log_odds / config.q,
        clipped: rho < lo || rho > hi,
    })
}

/// Applies `w_n * exp(-alpha * beta_n) / Z` and returns the new weights with `Z`.
pub fn update_weights(
    weights: &SampleWeights,
    beta: &DifficultyVector,
    alpha: f64,
) -> Result<(SampleWeights, f64)> {
    check_len("update_weights", weights.len(), beta.len())?;
    if !alpha.is_finite() {
        return Err(Error::Numeric(format!("weight change is not finite ({alpha})")));
    }
    let up = alpha.exp();
    let down = (-alpha).exp();
    let mass: Vec<f64> = weights
        .as_slice()
        .iter()
        .zip(beta.as_slice())
        .map(|(w, d)| match d {
            Difficulty::Easy => w * down,
            Difficulty::Hard => w * up,
        })
        .collect();
    let z = numeric::sum(mass.iter().copied());
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::Numeric(format!("weight normaliser is {z}")));
    }
    let updated = mass.into_iter().map(|m| m / z).collect();
    Ok((SampleWeights::new(updated)?, z))
}

/// `sum_n w_n * L_n`.
pub fn reweighted_loss(weights: &[f64], losses: &[f64]) -> Result<f64> {
    check_len("reweighted_loss", weights.len(), losses.len())?;
    Ok(numeric::dot(weights, losses))
}

/// One full scheduler step: difficulty, hard mass, weight change, update.
pub fn epoch_step(
    weights: &SampleWeights,
    losses: &LossVector,
    config: &SchedulerConfig,
) -> Result<(SampleWeights, EpochUpdate, DifficultyVector)> {
    let beta = mark_difficulty(losses.as_slice(), config.e)?;
    let rho = hard_mass(weights.as_slice(), &beta)?;
    let change = weight_change(rho, config)?;
    let (updated, z) = update_weights(weights, &beta, change.alpha)?;
    Ok((updated, EpochUpdate::from_change(change, z), beta))
}
