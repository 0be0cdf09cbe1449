//! When the scheduler update is applied inside an epoch.
//!
//! * `E`: the global vector is updated once from the full-set losses at the start
//!   of the epoch; each mini-batch only renormalises its slice of it.
//! * `I`: the epoch-start losses fix `alpha`, but the multiplicative update is
//!   applied per mini-batch from losses at the current parameters, starting
//!   from the previous epoch's vector. The batch results, rescaled by
//!   `N_batch / N`, are assembled and renormalised at epoch end.
//! * `EI`: the `E` update first, then the `I` update on top of it.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numeric;
use crate::scheduler::{
    self, Difficulty, DifficultyVector, EpochUpdate, LossVector, SampleWeights, SchedulerConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightingMode {
    E,
    I,
    EI,
}

impl fmt::Display for WeightingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightingMode::E => "E",
            WeightingMode::I => "I",
            WeightingMode::EI => "EI",
        })
    }
}

impl FromStr for WeightingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "E" => Ok(WeightingMode::E),
            "I" => Ok(WeightingMode::I),
            "EI" => Ok(WeightingMode::EI),
            other => Err(Error::config(format!("unknown weighting mode {other:?}"))),
        }
    }
}

/// Immutable per-epoch plan produced from the full-set losses.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPlan {
    pub alpha: f64,
    /// `E`/`EI`: the epoch-start updated vector. `I`: the previous vector.
    pub base_weights: SampleWeights,
    pub epoch_update: EpochUpdate,
    /// Difficulty of every sample at the epoch-start parameters.
    pub beta: DifficultyVector,
    pub mode: WeightingMode,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub indices: Vec<usize>,
    /// Losses of the batch samples at the current parameters, aligned with `indices`.
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchWeights {
    /// Sums to one over the batch.
    pub weights: Vec<f64>,
    /// Contribution of each batch sample to the epoch-end global vector.
    pub global_contrib: Vec<f64>,
}

pub fn prepare_epoch(
    full_losses: &LossVector,
    prev_weights: &SampleWeights,
    config: &SchedulerConfig,
    mode: WeightingMode,
) -> Result<EpochPlan> {
    check_len("prepare_epoch", prev_weights.len(), full_losses.len())?;
    let beta = scheduler::mark_difficulty(full_losses.as_slice(), config.e)?;
    let rho = scheduler::hard_mass(prev_weights.as_slice(), &beta)?;
    let change = scheduler::weight_change(rho, config)?;
    let (base_weights, epoch_update) = match mode {
        WeightingMode::E | WeightingMode::EI => {
            let (w, z) = scheduler::update_weights(prev_weights, &beta, change.alpha)?;
            (w, EpochUpdate::from_change(change, z))
        }
        WeightingMode::I => {
            // No global update happens; Z is the value it would have taken.
            let z = (1.0 - rho) * (-change.alpha).exp() + rho * change.alpha.exp();
            (prev_weights.clone(), EpochUpdate::from_change(change, z))
        }
    };
    Ok(EpochPlan {
        alpha: change.alpha,
        base_weights,
        epoch_update,
        beta,
        n: prev_weights.len(),
        mode,
    })
}

fn validate_batch(plan: &EpochPlan, batch: &MiniBatch) -> Result<()> {
    if batch.indices.is_empty() {
        return Err(Error::invalid("mini-batch is empty"));
    }
    check_len("mini-batch losses", batch.indices.len(), batch.losses.len())?;
    let mut seen = vec![false; plan.n];
    for &i in &batch.indices {
        if i >= plan.n {
            return Err(Error::invalid(format!("batch index {i} out of range for N = {}", plan.n)));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::invalid(format!("batch index {i} repeated")));
        }
    }
    Ok(())
}

pub fn batch_step_weights(plan: &EpochPlan, batch: &MiniBatch, e: f64) -> Result<BatchWeights> {
    validate_batch(plan, batch)?;
    let base = plan.base_weights.as_slice();
    match plan.mode {
        WeightingMode::E => {
            let total = numeric::sum(batch.indices.iter().map(|&i| base[i]));
            let weights: Vec<f64> = batch.indices.iter().map(|&i| base[i] / total).collect();
            let global_contrib = batch.indices.iter().map(|&i| base[i]).collect();
            Ok(BatchWeights {
                weights,
                global_contrib,
            })
        }
        WeightingMode::I | WeightingMode::EI => {
            let beta = scheduler::mark_difficulty(&batch.losses, e)?;
            let (up, down) = (plan.alpha.exp(), (-plan.alpha).exp());
            let mass: Vec<f64> = batch
                .indices
                .iter()
                .zip(beta.as_slice())
                .map(|(&i, d)| match d {
                    Difficulty::Easy => base[i] * down,
                    Difficulty::Hard => base[i] * up,
                })
                .collect();
            let z = numeric::sum(mass.iter().copied());
            if !(z.is_finite() && z > 0.0) {
                return Err(Error::Numeric(format!("batch normaliser is {z}")));
            }
            let weights: Vec<f64> = mass.iter().map(|m| m / z).collect();
            let scale = batch.indices.len() as f64 / plan.n as f64;
            let global_contrib = weights.iter().map(|w| scale * w).collect();
            Ok(BatchWeights {
                weights,
                global_contrib,
            })
        }
    }
}

/// Collects the per-sample contributions of one epoch's batches.
#[derive(Debug, Clone)]
pub struct EpochAssembly {
    slots: Vec<Option<f64>>,
}

impl EpochAssembly {
    pub fn new(n: usize) -> Self {
        Self {
            slots: vec![None; n],
        }
    }

    pub fn record(&mut self, indices: &[usize], contrib: &[f64]) -> Result<()> {
        check_len("epoch assembly", indices.len(), contrib.len())?;
        for (&i, &c) in indices.iter().zip(contrib) {
            let slot = self
                .slots
                .get_mut(i)
                .ok_or_else(|| Error::invalid(format!("index {i} out of range")))?;
            if slot.replace(c).is_some() {
                return Err(Error::invalid(format!("index {i} covered twice in one epoch")));
            }
        }
        Ok(())
    }
}

pub fn finalize_epoch(plan: &EpochPlan, assembly: &EpochAssembly) -> Result<SampleWeights> {
    match plan.mode {
        WeightingMode::E => Ok(plan.base_weights.clone()),
        WeightingMode::I | WeightingMode::EI => {
            check_len("finalize_epoch", plan.n, assembly.slots.len())?;
            let mass = assembly
                .slots
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    s.ok_or_else(|| Error::invalid(format!("index {i} never visited this epoch")))
                })
                .collect::<Result<Vec<_>>>()?;
            SampleWeights::from_unnormalized(mass)
        }
    }
}

/// Shuffles `0..n` once and cuts it into consecutive batches.
pub fn partition_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn cfg(q: f64) -> SchedulerConfig {
        SchedulerConfig::new(LN_2, q).unwrap()
    }

    fn losses(v: &[f64]) -> LossVector {
        LossVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn balanced_epoch_is_a_fixed_point() {
        let w = SampleWeights::uniform(4);
        let plan = prepare_epoch(&losses(&[0.1, 2.0, 0.2, 3.0]), &w, &cfg(2.0), WeightingMode::E)
            .unwrap();
        assert_eq!(plan.alpha, 0.0);
        assert_eq!(plan.base_weights, w);
    }

    #[test]
    fn i_mode_keeps_previous_vector() {
        let w = SampleWeights::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let plan = prepare_epoch(&losses(&[0.1, 2.0, 0.2, 0.1]), &w, &cfg(2.0), WeightingMode::I)
            .unwrap();
        assert_eq!(plan.base_weights, w);
        assert!(plan.alpha > 0.0);
    }

    #[test]
    fn ei_base_matches_scheduler_epoch_step() {
        let w = SampleWeights::new(vec![0.9, 0.1]).unwrap();
        let l = losses(&[0.1, 5.0]);
        let plan = prepare_epoch(&l, &w, &cfg(2.0), WeightingMode::EI).unwrap();
        let (expected, up, _) = scheduler::epoch_step(&w, &l, &cfg(2.0)).unwrap();
        assert_eq!(plan.base_weights, expected);
        assert_eq!(plan.epoch_update, up);
    }

    #[test]
    fn e_batch_is_renormalised_restriction() {
        let plan = prepare_epoch(&losses(&[0.1; 6]), &SampleWeights::uniform(6), &cfg(2.0), WeightingMode::E)
            .unwrap();
        let batch = MiniBatch {
            indices: vec![0, 3, 5],
            losses: vec![0.1, 0.1, 0.1],
        };
        let bw = batch_step_weights(&plan, &batch, LN_2).unwrap();
        for w in &bw.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(bw.global_contrib, vec![plan.base_weights.as_slice()[0]; 3]);
    }

    #[test]
    fn i_batch_with_zero_alpha_is_proportional() {
        let w = SampleWeights::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        // Two easy and two hard samples with equal mass: rho = 0.5, alpha = 0.
        let plan = prepare_epoch(&losses(&[0.1, 2.0, 2.0, 0.1]), &w, &cfg(2.0), WeightingMode::I)
            .unwrap();
        assert_eq!(plan.alpha, 0.0);
        let batch = MiniBatch {
            indices: vec![1, 2],
            losses: vec![0.1, 5.0],
        };
        let bw = batch_step_weights(&plan, &batch, LN_2).unwrap();
        assert!((bw.weights[0] - 0.4).abs() < 1e-15);
        assert!((bw.weights[1] - 0.6).abs() < 1e-15);
        assert!((bw.global_contrib[0] - 0.5 * 0.4).abs() < 1e-15);
        assert!((bw.global_contrib[1] - 0.5 * 0.6).abs() < 1e-15);
    }

    #[test]
    fn i_batch_hand_oracle() {
        let n = 4;
        let mut plan = prepare_epoch(&losses(&[0.1; 4]), &SampleWeights::uniform(n), &cfg(2.0), WeightingMode::I)
            .unwrap();
        plan.alpha = LN_2;
        let batch = MiniBatch {
            indices: vec![0, 1],
            losses: vec![0.1, 5.0],
        };
        let bw = batch_step_weights(&plan, &batch, LN_2).unwrap();
        assert!((bw.weights[0] - 0.2).abs() < 1e-15);
        assert!((bw.weights[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn empty_and_bad_batches_are_rejected() {
        let plan = prepare_epoch(&losses(&[0.1; 3]), &SampleWeights::uniform(3), &cfg(2.0), WeightingMode::I)
            .unwrap();
        let empty = MiniBatch {
            indices: vec![],
            losses: vec![],
        };
        assert!(batch_step_weights(&plan, &empty, LN_2).is_err());
        let dup = MiniBatch {
            indices: vec![1, 1],
            losses: vec![0.1, 0.1],
        };
        assert!(batch_step_weights(&plan, &dup, LN_2).is_err());
        let oob = MiniBatch {
            indices: vec![3],
            losses: vec![0.1],
        };
        assert!(batch_step_weights(&plan, &oob, LN_2).is_err());
    }

    #[test]
    fn finalize_e_mode_returns_base() {
        let w = SampleWeights::new(vec![0.25, 0.75]).unwrap();
        let plan = prepare_epoch(&losses(&[0.1, 5.0]), &w, &cfg(2.0), WeightingMode::E).unwrap();
        assert_eq!(finalize_epoch(&plan, &EpochAssembly::new(2)).unwrap(), plan.base_weights);
    }

    #[test]
    fn finalize_rejects_coverage_gap() {
        let plan = prepare_epoch(&losses(&[0.1, 5.0, 0.2]), &SampleWeights::uniform(3), &cfg(2.0), WeightingMode::I)
            .unwrap();
        let mut asm = EpochAssembly::new(3);
        asm.record(&[0, 2], &[0.3, 0.3]).unwrap();
        assert!(finalize_epoch(&plan, &asm).is_err());
        assert!(asm.record(&[2], &[0.1]).is_err());
    }

    #[test]
    fn two_identity_batches_preserve_uniform() {
        let plan = prepare_epoch(&losses(&[0.1, 5.0, 0.1, 5.0]), &SampleWeights::uniform(4), &cfg(2.0), WeightingMode::I)
            .unwrap();
        assert_eq!(plan.alpha, 0.0);
        let mut asm = EpochAssembly::new(4);
        for idx in [[0usize, 1], [2, 3]] {
            let batch = MiniBatch {
                indices: idx.to_vec(),
                losses: vec![0.1, 5.0],
            };
            let bw = batch_step_weights(&plan, &batch, LN_2).unwrap();
            asm.record(&batch.indices, &bw.global_contrib).unwrap();
        }
        let w = finalize_epoch(&plan, &asm).unwrap();
        for x in w.as_slice() {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    fn one_batch_epoch(w: &SampleWeights, l: &LossVector, mode: WeightingMode, q: f64) -> SampleWeights {
        let plan = prepare_epoch(l, w, &cfg(q), mode).unwrap();
        let batch = MiniBatch {
            indices: (0..w.len()).collect(),
            losses: l.as_slice().to_vec(),
        };
        let bw = batch_step_weights(&plan, &batch, LN_2).unwrap();
        let sum = numeric::sum(bw.weights.iter().copied());
        assert!((sum - 1.0).abs() < 1e-12);
        let mut asm = EpochAssembly::new(w.len());
        asm.record(&batch.indices, &bw.global_contrib).unwrap();
        finalize_epoch(&plan, &asm).unwrap()
    }

    proptest! {
        #[test]
        fn one_batch_equivalence(
            mass in prop::collection::vec(0.01f64..1.0, 2..30),
            raw in prop::collection::vec(0.0f64..2.0, 30),
            q in 2.0f64..20.0,
        ) {
            let n = mass.len();
            let w = SampleWeights::from_unnormalized(mass).unwrap();
            let l = losses(&raw[..n]);
            let c = cfg(q);
            let (once, _, _) = scheduler::epoch_step(&w, &l, &c).unwrap();
            let (twice, _) = {
                let beta = scheduler::mark_difficulty(l.as_slice(), c.e).unwrap();
                let rho = scheduler::hard_mass(w.as_slice(), &beta).unwrap();
                let a = scheduler::weight_change(rho, &c).unwrap().alpha;
                scheduler::update_weights(&once, &beta, a).unwrap()
            };
            let i_result = one_batch_epoch(&w, &l, WeightingMode::I, q);
            let ei_result = one_batch_epoch(&w, &l, WeightingMode::EI, q);
            for k in 0..n {
                prop_assert!((i_result.as_slice()[k] - once.as_slice()[k]).abs() <= 1e-10);
                prop_assert!((ei_result.as_slice()[k] - twice.as_slice()[k]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn partition_covers_every_index_once() {
        let mut rng = stream(3, Stream::Shuffle);
        let batches = partition_batches(103, 32, &mut rng);
        assert_eq!(batches.len(), 4);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
    }
}
