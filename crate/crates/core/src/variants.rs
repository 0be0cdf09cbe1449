//! Curriculum sampling (S-APW) and weighted mixup (M-APW).

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numeric::{self, Accumulator};
use crate::scheduler::SampleWeights;
use crate::weighting::WeightingMode;

pub const DEFAULT_SAMPLING_FRACTION: f64 = 0.05;

/// Growing training subset of the sampling curriculum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    included: Vec<bool>,
    /// Indices in the order they entered the subset.
    order: Vec<usize>,
    pub r_s: f64,
    pub done: bool,
    pub rounds: usize,
}

impl SamplerState {
    pub fn new(n: usize, r_s: f64) -> Result<Self> {
        if !(r_s > 0.0 && r_s <= 1.0) {
            return Err(Error::config(format!("sampling fraction must lie in (0, 1], got {r_s}")));
        }
        if ((r_s * n as f64).floor() as usize) == 0 {
            return Err(Error::config(format!(
                "sampling fraction {r_s} draws no samples from a set of {n}"
            )));
        }
        Ok(Self {
            included: vec![false; n],
            order: Vec::new(),
            r_s,
            done: false,
            rounds: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.included.len()
    }

    /// `floor(r_s * N)`.
    pub fn draws_per_round(&self) -> usize {
        (self.r_s * self.n() as f64).floor() as usize
    }

    pub fn remaining(&self) -> usize {
        self.n() - self.order.len()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.included.get(i).copied().unwrap_or(false)
    }

    /// Included indices in ascending order.
    pub fn included(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.included[i]).collect()
    }

    pub fn inclusion_order(&self) -> &[usize] {
        &self.order
    }

    /// Upper bound on the number of rounds, `ceil(1 / r_s)`.
    pub fn max_rounds(&self) -> usize {
        (1.0 / self.r_s).ceil() as usize
    }
}

/// Draws `floor(r_s * N)` uncovered samples without replacement, proportionally
/// to their current weights, and adds them to the subset.
pub fn sapw_round<R: Rng + ?Sized>(
    weights: &SampleWeights,
    state: &SamplerState,
    rng: &mut R,
) -> Result<SamplerState> {
    if state.done {
        return Err(Error::invalid("sampling curriculum already complete"));
    }
    check_len("sapw_round", state.n(), weights.len())?;
    let m = state.draws_per_round();
    if state.remaining() < m {
        return Err(Error::invalid("fewer uncovered samples than one round draws"));
    }
    let w = weights.as_slice();
    let mut next = state.clone();
    for _ in 0..m {
        let total = numeric::sum((0..w.len()).filter(|&i| !next.included[i]).map(|i| w[i]));
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Numeric(format!("uncovered weight mass is {total}")));
        }
        let target = rng.random::<f64>() * total;
        let mut acc = Accumulator::new();
        let mut pick = None;
        for i in (0..w.len()).filter(|&i| !next.included[i]) {
            acc.add(w[i]);
            pick = Some(i);
            if acc.value() > target {
                break;
            }
        }
        let i = pick.expect("remainder is non-empty");
        next.included[i] = true;
        next.order.push(i);
    }
    next.rounds += 1;
    next.done = next.remaining() < m;
    Ok(next)
}

/// Training mode once every sample has entered the subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompletionMode {
    /// Uniform average loss.
    Average,
    Weighted(WeightingMode),
}

impl FromStr for CompletionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("a") {
            Ok(CompletionMode::Average)
        } else {
            s.parse().map(CompletionMode::Weighted)
        }
    }
}

impl fmt::Display for CompletionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompletionMode::Average => f.write_str("A"),
            CompletionMode::Weighted(m) => m.fmt(f),
        }
    }
}

pub fn sapw_mode_after_completion(choice: &str) -> Result<CompletionMode> {
    choice.parse()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixCoefficients {
    pub lambda_i: f64,
    pub lambda_j: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixPair {
    pub i: usize,
    pub j: usize,
    pub lambda_i: f64,
    pub lambda_j: f64,
}

impl MixPair {
    pub fn new(i: usize, j: usize, c: MixCoefficients) -> Self {
        Self {
            i,
            j,
            lambda_i: c.lambda_i,
            lambda_j: c.lambda_j,
        }
    }
}

/// Normalised pair weights replacing the Beta-drawn mixing coefficient.
pub fn mapw_coefficients(w_i: f64, w_j: f64) -> Result<MixCoefficients> {
    if !(w_i > 0.0 && w_j > 0.0 && w_i.is_finite() && w_j.is_finite()) {
        return Err(Error::invalid(format!("mixup weights must be positive, got ({w_i}, {w_j})")));
    }
    let lambda_i = w_i / (w_i + w_j);
    Ok(MixCoefficients {
        lambda_i,
        lambda_j: 1.0 - lambda_i,
    })
}

/// `-sum_c t_c ln p_c`, skipping classes with zero target mass.
pub fn cross_entropy(target: &[f64], pred: &[f64]) -> Result<f64> {
    check_len("cross_entropy", pred.len(), target.len())?;
    validate_distribution(pred, "prediction")?;
    Ok(-numeric::sum(
        target
            .iter()
            .zip(pred)
            .filter(|(t, _)| **t != 0.0)
            .map(|(t, p)| t * p.ln()),
    ))
}

fn validate_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::invalid(format!("{what} is not a probability vector")));
    }
    let s = numeric::sum(p.iter().copied());
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("{what} sums to {s}, expected 1")));
    }
    Ok(())
}

pub fn mixup_loss(pred: &[f64], y_i: &[f64], y_j: &[f64], pair: &MixPair) -> Result<f64> {
    let a = cross_entropy(y_i, pred)?;
    let b = cross_entropy(y_j, pred)?;
    Ok(pair.lambda_i * a + pair.lambda_j * b)
}

/// Standard mixup coefficient `lambda ~ Beta(alpha_mix, alpha_mix)`.
pub fn standard_mixup_lambda<R: Rng + ?Sized>(alpha_mix: f64, rng: &mut R) -> Result<f64> {
    let beta = Beta::new(alpha_mix, alpha_mix)
        .map_err(|e| Error::invalid(format!("mixup alpha {alpha_mix}: {e}")))?;
    Ok(beta.sample(rng))
}

/// Partner index for each position of a batch of `len` samples.
pub fn pair_permutation<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..len).collect();
    p.shuffle(rng);
    p
}

pub fn one_hot(class: usize, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[class] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn six_hundred_samples_take_twenty_rounds_of_thirty() {
        let w = SampleWeights::uniform(600);
        let mut state = SamplerState::new(600, 0.05).unwrap();
        let mut rng = stream(1, Stream::Shuffle);
        let mut sizes = vec![];
        while !state.done {
            state = sapw_round(&w, &state, &mut rng).unwrap();
            sizes.push(state.included().len());
        }
        assert_eq!(state.rounds, 20);
        assert_eq!(sizes, (1..=20).map(|k| 30 * k).collect::<Vec<_>>());
        assert!(sapw_round(&w, &state, &mut rng).is_err());
    }

    #[test]
    fn partial_last_round_terminates() {
        // N = 70, r_s = 0.1: 7 per round, 10 rounds, remainder 0.
        let w = SampleWeights::uniform(70);
        let mut state = SamplerState::new(70, 0.1).unwrap();
        let mut rng = stream(2, Stream::Shuffle);
        while !state.done {
            state = sapw_round(&w, &state, &mut rng).unwrap();
        }
        assert!(state.rounds <= state.max_rounds());
        assert_eq!(state.remaining(), 0);
    }

    #[test]
    fn zero_draw_fraction_is_rejected() {
        assert!(SamplerState::new(10, 0.05).is_err());
        assert!(SamplerState::new(10, 0.0).is_err());
    }

    #[test]
    fn concentrated_weight_is_always_drawn_first() {
        let w = SampleWeights::from_unnormalized(vec![1e-15, 1.0, 1e-15]).unwrap();
        for seed in 0..500 {
            let state = SamplerState::new(3, 1.0 / 3.0).unwrap();
            let next = sapw_round(&w, &state, &mut stream(seed, Stream::Shuffle)).unwrap();
            assert_eq!(next.inclusion_order(), &[1]);
        }
    }

    #[test]
    fn two_draw_orderings_match_enumerated_probabilities() {
        // P(i then j) = w_i * w_j / (1 - w_i) for sequential draws without replacement.
        let w = [0.2, 0.5, 0.3];
        let weights = SampleWeights::new(w.to_vec()).unwrap();
        let mut counts = [[0usize; 3]; 3];
        let trials = 60_000;
        let mut rng = stream(11, Stream::Shuffle);
        for _ in 0..trials {
            let state = SamplerState::new(3, 2.0 / 3.0).unwrap();
            let next = sapw_round(&weights, &state, &mut rng).unwrap();
            let o = next.inclusion_order();
            counts[o[0]][o[1]] += 1;
        }
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    assert_eq!(counts[i][j], 0);
                    continue;
                }
                let p = w[i] * w[j] / (1.0 - w[i]);
                let freq = counts[i][j] as f64 / trials as f64;
                assert!((freq - p).abs() < 0.01, "({i},{j}) {freq} vs {p}");
            }
        }
    }

    #[test]
    fn completion_mode_parsing() {
        assert_eq!(sapw_mode_after_completion("A").unwrap(), CompletionMode::Average);
        assert_eq!(
            sapw_mode_after_completion("E").unwrap(),
            CompletionMode::Weighted(WeightingMode::E)
        );
        assert_eq!(
            sapw_mode_after_completion("ei").unwrap(),
            CompletionMode::Weighted(WeightingMode::EI)
        );
        assert!(sapw_mode_after_completion("B").is_err());
    }

    #[test]
    fn mapw_coefficient_examples() {
        let c = mapw_coefficients(0.2, 0.2).unwrap();
        assert_eq!((c.lambda_i, c.lambda_j), (0.5, 0.5));
        let c = mapw_coefficients(0.3, 0.1).unwrap();
        assert!((c.lambda_i - 0.75).abs() < 1e-15);
        assert!((c.lambda_j - 0.25).abs() < 1e-15);
        assert_eq!(mapw_coefficients(0.3 * 8.0, 0.1 * 8.0).unwrap(), mapw_coefficients(0.3, 0.1).unwrap());
        assert!(mapw_coefficients(0.0, 0.1).is_err());
        assert!(mapw_coefficients(0.1, -1.0).is_err());
    }

    #[test]
    fn mixup_loss_examples() {
        let pred = [0.6, 0.4];
        let y0 = one_hot(0, 2);
        let y1 = one_hot(1, 2);
        let pair = MixPair::new(0, 1, mapw_coefficients(0.3, 0.1).unwrap());
        let l = mixup_loss(&pred, &y0, &y1, &pair).unwrap();
        assert!((l - (0.75 * -(0.6f64.ln()) + 0.25 * -(0.4f64.ln()))).abs() < 1e-15);

        let same = mixup_loss(&pred, &y0, &y0, &pair).unwrap();
        assert!((same - -(0.6f64.ln())).abs() < 1e-15);

        let degenerate = MixPair { i: 0, j: 1, lambda_i: 1.0, lambda_j: 0.0 };
        assert_eq!(mixup_loss(&pred, &y0, &y1, &degenerate).unwrap(), -(0.6f64.ln()));

        assert!(mixup_loss(&[0.7, 0.7], &y0, &y1, &pair).is_err());
    }

    #[test]
    fn beta_lambda_rejects_nonpositive_alpha() {
        let mut rng = stream(0, Stream::Mixup);
        assert!(standard_mixup_lambda(0.0, &mut rng).is_err());
        assert!(standard_mixup_lambda(-1.0, &mut rng).is_err());
        let l = standard_mixup_lambda(0.4, &mut rng).unwrap();
        assert!((0.0..=1.0).contains(&l));
    }

    #[test]
    fn beta_one_moments() {
        let mut rng = stream(5, Stream::Mixup);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| standard_mixup_lambda(1.0, &mut rng).unwrap())
            .collect();
        let m = numeric::mean(&draws);
        let var = numeric::sum(draws.iter().map(|x| (x - m) * (x - m))) / draws.len() as f64;
        assert!((m - 0.5).abs() < 0.01);
        assert!((var - 1.0 / 12.0).abs() < 0.003);

        let draws: Vec<f64> = (0..100_000)
            .map(|_| standard_mixup_lambda(0.2, &mut rng).unwrap())
            .collect();
        assert!((numeric::mean(&draws) - 0.5).abs() < 0.01);
    }
}
