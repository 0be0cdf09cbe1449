use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{objective_grad, one_hot, per_sample_losses, predictions, Classifier, Lbfgs, Model, OptimizerConfig, OptimizerKind};
use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::numeric;
use crate::rng::{stream, Stream};
use crate::scheduler::{self, DifficultyVector, EpochUpdate, LossVector, SampleWeights, SchedulerConfig};
use crate::theory::{self, TheoryTrace};
use crate::variants::{self, CompletionMode, SamplerState};
use crate::weighting::{self, EpochAssembly, EpochPlan, MiniBatch, WeightingMode};

/// How sample weights enter training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Scheme {
    /// Uniform average loss.
    Vanilla,
    Apw { mode: WeightingMode },
    /// Weighted curriculum sampling, then `completion` on the full set.
    Sapw { completion: CompletionMode, r_s: f64 },
    /// Mixup with coefficients from the normalised pair weights.
    Mapw { mode: WeightingMode },
    /// Standard mixup with `lambda ~ Beta(alpha, alpha)` per batch.
    Mixup { alpha: f64 },
}

impl Scheme {
    /// Whether every global weight change is one epoch-level multiplicative update.
    pub fn chain_exact(&self) -> bool {
        match self {
            Scheme::Vanilla | Scheme::Mixup { .. } => true,
            Scheme::Apw { mode } | Scheme::Mapw { mode } => *mode == WeightingMode::E,
            Scheme::Sapw { completion, .. } => matches!(
                completion,
                CompletionMode::Average | CompletionMode::Weighted(WeightingMode::E)
            ),
        }
    }
}

pub struct TrainSetup<'a> {
    pub train: &'a LabeledDataset,
    pub test: Option<&'a LabeledDataset>,
    /// Enables best-epoch selection by mean validation loss.
    pub val: Option<&'a LabeledDataset>,
    pub optimizer: OptimizerConfig,
    pub scheme: Scheme,
    pub scheduler: SchedulerConfig,
    pub eval_threshold: f64,
    pub seed: u64,
    pub checkpoint_stride: usize,
}

/// One row of the per-epoch log. Scheduler quantities and `l_apw`/`l_mean` refer to
/// the epoch-start losses; E-Prop and T-ACC are measured after the epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub rho_raw: f64,
    pub rho_clipped: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub z: f64,
    pub a_k: f64,
    pub l_apw: f64,
    pub l_mean: f64,
    pub eprop_train: f64,
    pub eprop_test: Option<f64>,
    pub tacc_train: f64,
    pub tacc_test: Option<f64>,
    pub clipped: bool,
    pub w_min: f64,
    pub w_max: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub records: Vec<EpochRecord>,
    pub trace: TheoryTrace,
    pub weights: SampleWeights,
    pub checkpoints: Vec<Vec<f64>>,
    /// Mean training loss at each checkpoint.
    pub checkpoint_losses: Vec<f64>,
    /// Epoch at which the L-BFGS gradient tolerance was met.
    pub converged_epoch: Option<usize>,
    pub best_epoch: Option<usize>,
    /// Rounds until the sampling curriculum covered the set.
    pub sapw_rounds: Option<usize>,
}

fn losses_or_diverged<M: Classifier>(model: &M, ds: &LabeledDataset, epoch: usize) -> Result<LossVector> {
    per_sample_losses(model, ds).map_err(|e| match e {
        Error::InvalidInput(detail) | Error::Numeric(detail) => Error::Diverged { epoch, detail },
        other => other,
    })
}

/// One mini-batch objective: `sum_k coefs[k] * CE(targets[k], f(inputs[k]))`.
struct Objective {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    coefs: Vec<f64>,
}

impl Objective {
    fn rows(ds: &LabeledDataset, rows: &[usize], coefs: Vec<f64>, classes: usize) -> Self {
        Self {
            inputs: rows.iter().map(|&i| ds.x.row(i).to_vec()).collect(),
            targets: rows.iter().map(|&i| one_hot(ds.y[i], classes)).collect(),
            coefs,
        }
    }

    /// Pairs every batch position with a permuted partner and mixes inputs and
    /// targets with `lambda(a)`; the mixed losses are averaged.
    fn mixed(
        ds: &LabeledDataset,
        rows: &[usize],
        classes: usize,
        perm: &[usize],
        lambda: impl Fn(usize) -> Result<f64>,
    ) -> Result<Self> {
        let mut inputs = Vec::with_capacity(rows.len());
        let mut targets = Vec::with_capacity(rows.len());
        for (a, &b) in perm.iter().enumerate() {
            let (i, j) = (rows[a], rows[b]);
            let li = lambda(a)?;
            let lj = 1.0 - li;
            inputs.push(ds.x.row(i).iter().zip(ds.x.row(j)).map(|(u, v)| li * u + lj * v).collect());
            let (ti, tj) = (one_hot(ds.y[i], classes), one_hot(ds.y[j], classes));
            targets.push(ti.iter().zip(&tj).map(|(u, v)| li * u + lj * v).collect());
        }
        let n = rows.len();
        Ok(Self {
            inputs,
            targets,
            coefs: vec![1.0 / n as f64; n],
        })
    }

    fn grad<M: Classifier>(&self, model: &M) -> Vec<f64> {
        let inputs: Vec<&[f64]> = self.inputs.iter().map(Vec::as_slice).collect();
        objective_grad(model, &inputs, &self.targets, &self.coefs).1
    }
}

enum Optimizer {
    Sgd,
    Lbfgs(Lbfgs),
}

/// Applies one optimizer step; returns `true` when the gradient tolerance is met.
fn step(model: &mut Model, objective: &Objective, opt: &mut Optimizer, cfg: &OptimizerConfig) -> bool {
    let g = objective.grad(model);
    match opt {
        Optimizer::Sgd => {
            for (p, gi) in model.params_mut().iter_mut().zip(&g) {
                *p -= cfg.step * gi;
            }
            false
        }
        Optimizer::Lbfgs(state) => {
            if numeric::max_abs(&g) <= cfg.grad_tol {
                return true;
            }
            let s: Vec<f64> = state.direction(&g).iter().map(|d| cfg.step * d).collect();
            for (p, si) in model.params_mut().iter_mut().zip(&s) {
                *p += si;
            }
            let g_new = objective.grad(model);
            state.push(s, g_new.iter().zip(&g).map(|(a, b)| a - b).collect());
            false
        }
    }
}

fn uniform_update(losses: &LossVector, weights: &SampleWeights, cfg: &SchedulerConfig) -> Result<(EpochUpdate, DifficultyVector)> {
    let beta = scheduler::mark_difficulty(losses.as_slice(), cfg.e)?;
    let rho = scheduler::hard_mass(weights.as_slice(), &beta)?;
    Ok((EpochUpdate::identity(rho, cfg), beta))
}

fn batches<R: Rng + ?Sized>(rows: &[usize], cfg: &OptimizerConfig, rng: &mut R) -> Vec<Vec<usize>> {
    match cfg.kind {
        OptimizerKind::Lbfgs => vec![rows.to_vec()],
        OptimizerKind::Sgd => weighting::partition_batches(rows.len(), cfg.batch_size, rng)
            .into_iter()
            .map(|b| b.into_iter().map(|k| rows[k]).collect())
            .collect(),
    }
}

/// Runs the epoch loop: full-set losses at the epoch start, the scheme's weight
/// plan, mini-batch optimisation, epoch-end weights, trace and metrics.
pub fn train(mut model: Model, setup: &TrainSetup) -> Result<TrainOutcome> {
    let cfg = setup.optimizer.validated()?;
    let sched = setup.scheduler.validated()?;
    let ds = setup.train;
    let n = ds.len();
    if n == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    if !(setup.eval_threshold > 0.0) {
        return Err(Error::config("evaluation threshold must be > 0"));
    }
    let classes = model.num_classes();
    let mut shuffle = stream(setup.seed, Stream::Shuffle);
    let mut mixing = stream(setup.seed, Stream::Mixup);
    let mut opt = match cfg.kind {
        OptimizerKind::Sgd => Optimizer::Sgd,
        OptimizerKind::Lbfgs => Optimizer::Lbfgs(Lbfgs::new(cfg.lbfgs_history)),
    };
    let mut sampler = match setup.scheme {
        Scheme::Sapw { r_s, .. } => Some(SamplerState::new(n, r_s)?),
        _ => None,
    };
    let all_rows: Vec<usize> = (0..n).collect();
    let stride = setup.checkpoint_stride.max(1);

    let mut weights = SampleWeights::uniform(n);
    let mut trace = TheoryTrace::new(n, sched.e, sched.q, setup.scheme.chain_exact()).with_tau(sched.tau);
    let mut out = TrainOutcome {
        model: model.clone(),
        records: vec![],
        trace: trace.clone(),
        weights: weights.clone(),
        checkpoints: vec![],
        checkpoint_losses: vec![],
        converged_epoch: None,
        best_epoch: None,
        sapw_rounds: None,
    };
    let mut best_val = f64::INFINITY;

    for epoch in 1..=cfg.epochs() {
        let losses = losses_or_diverged(&model, ds, epoch)?;
        let curriculum = sampler.as_ref().is_some_and(|s| !s.done);
        // Weighting mode in force this epoch, if any.
        let mode = match setup.scheme {
            Scheme::Apw { mode } | Scheme::Mapw { mode } => Some(mode),
            Scheme::Sapw { .. } if curriculum => Some(WeightingMode::E),
            Scheme::Sapw { completion: CompletionMode::Weighted(mode), .. } => Some(mode),
            _ => None,
        };
        let plan: Option<EpochPlan> = mode
            .map(|m| weighting::prepare_epoch(&losses, &weights, &sched, m))
            .transpose()?;
        let (update, beta) = match &plan {
            Some(p) => (p.epoch_update, p.beta.clone()),
            None => uniform_update(&losses, &weights, &sched)?,
        };

        let rows = if curriculum {
            let state = sampler.as_ref().unwrap();
            let next = variants::sapw_round(&plan.as_ref().unwrap().base_weights, state, &mut shuffle)?;
            if next.done {
                out.sapw_rounds = Some(next.rounds);
            }
            let rows = next.included();
            sampler = Some(next);
            rows
        } else {
            all_rows.clone()
        };

        let mut assembly = EpochAssembly::new(n);
        let mut converged = false;
        for batch in batches(&rows, &cfg, &mut shuffle) {
            let uniform = vec![1.0 / batch.len() as f64; batch.len()];
            let batch_weights = match (&plan, curriculum) {
                (Some(p), false) => {
                    let batch_losses = match p.mode {
                        WeightingMode::E => batch.iter().map(|&i| losses.as_slice()[i]).collect(),
                        _ => batch.iter().map(|&i| model.loss(ds.x.row(i), ds.y[i])).collect(),
                    };
                    let mb = MiniBatch {
                        indices: batch.clone(),
                        losses: batch_losses,
                    };
                    let bw = weighting::batch_step_weights(p, &mb, sched.e).map_err(|e| match e {
                        Error::InvalidInput(detail) => Error::Diverged { epoch, detail },
                        other => other,
                    })?;
                    assembly.record(&batch, &bw.global_contrib)?;
                    Some(bw.weights)
                }
                _ => None,
            };
            let objective = match setup.scheme {
                Scheme::Mapw { .. } if !curriculum => {
                    let w = batch_weights.expect("M-APW always carries a plan");
                    let perm = variants::pair_permutation(batch.len(), &mut mixing);
                    Objective::mixed(ds, &batch, classes, &perm, |a| {
                        Ok(variants::mapw_coefficients(w[a], w[perm[a]])?.lambda_i)
                    })?
                }
                Scheme::Mixup { alpha } => {
                    let lambda = variants::standard_mixup_lambda(alpha, &mut mixing)?;
                    let perm = variants::pair_permutation(batch.len(), &mut mixing);
                    Objective::mixed(ds, &batch, classes, &perm, |_| Ok(lambda))?
                }
                _ => Objective::rows(ds, &batch, batch_weights.unwrap_or(uniform), classes),
            };
            converged |= step(&mut model, &objective, &mut opt, &cfg);
        }

        if let Some(p) = &plan {
            weights = if curriculum {
                p.base_weights.clone()
            } else {
                weighting::finalize_epoch(p, &assembly)?
            };
        }
        if plan.is_some() {
            trace.record_epoch(&update, &beta, weights.as_slice(), losses.as_slice())?;
        } else {
            trace.record_unscheduled_epoch(&update, &beta, weights.as_slice(), losses.as_slice())?;
        }

        let after = losses_or_diverged(&model, ds, epoch)?;
        let test_metrics = setup
            .test
            .map(|t| -> Result<(f64, f64)> {
                let l = losses_or_diverged(&model, t, epoch)?;
                Ok((
                    theory::eprop(l.as_slice(), setup.eval_threshold)?,
                    theory::tacc(&predictions(&model, t), &t.y)?,
                ))
            })
            .transpose()?;
        out.records.push(EpochRecord {
            epoch,
            rho_raw: update.rho_raw,
            rho_clipped: update.rho_clipped,
            gamma: update.gamma,
            alpha: update.alpha,
            z: update.z,
            a_k: trace.a,
            l_apw: numeric::dot(weights.as_slice(), losses.as_slice()),
            l_mean: losses.mean(),
            eprop_train: theory::eprop(after.as_slice(), setup.eval_threshold)?,
            eprop_test: test_metrics.map(|m| m.0),
            tacc_train: theory::tacc(&predictions(&model, ds), &ds.y)?,
            tacc_test: test_metrics.map(|m| m.1),
            clipped: update.clipped,
            w_min: weights.min(),
            w_max: weights.max(),
        });
        if epoch % stride == 0 {
            out.checkpoints.push(model.params().to_vec());
            out.checkpoint_losses.push(after.mean());
        }
        if let Some(val) = setup.val {
            let v = losses_or_diverged(&model, val, epoch)?.mean();
            if v < best_val {
                best_val = v;
                out.best_epoch = Some(epoch);
                out.model = model.clone();
            }
        }
        if converged {
            out.converged_epoch = Some(epoch);
            break;
        }
    }
    if setup.val.is_none() {
        out.model = model;
    }
    out.trace = trace;
    out.weights = weights;
    Ok(out)
}
