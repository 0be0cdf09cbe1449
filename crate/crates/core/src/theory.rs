//! Cumulative margins and numerical checks of the convergence bounds.
//!
//! For every sample the trace keeps `g_K = sum_k alpha_k * beta_k` and the run keeps
//! `A_K = sum_k alpha_k`; their ratio `m_K = g_K / A_K` is the relative cumulative
//! margin. The checkers re-evaluate both sides of each bound from the trace and
//! record them in a [`BoundReport`].

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numeric;
use crate::scheduler::{DifficultyVector, EpochUpdate};

/// Relative allowance for floating-point rounding in inequality checks.
pub const ROUNDING_SLACK: f64 = 1e-12;
/// Relative tolerance of the product-of-normalisers identity.
pub const CHAIN_TOL: f64 = 1e-8;

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryTrace {
    pub n: usize,
    pub e: f64,
    pub q: f64,
    /// True when every global update is a single epoch-level multiplicative update,
    /// so that the product of normalisers telescopes exactly.
    pub chain_exact: bool,
    pub alphas: Vec<f64>,
    /// `A_K` after the latest epoch.
    pub a: f64,
    /// `g_K` per sample after the latest epoch.
    pub g: Vec<f64>,
    /// `g_K` snapshot after every epoch.
    pub g_history: Vec<Vec<f64>>,
    pub z_history: Vec<f64>,
    pub gamma_history: Vec<f64>,
    pub rho_raw_history: Vec<f64>,
    pub rho_clipped_history: Vec<f64>,
    pub clip_flags: Vec<bool>,
    /// Hard-sample mass of the epoch's resulting weights.
    pub hard_weight: Vec<f64>,
    /// Reweighted loss of the epoch's resulting weights.
    pub l_apw: Vec<f64>,
    /// Whether the hard set equals the previous epoch's.
    pub same_hard_set: Vec<bool>,
    /// Phase threshold the weight changes were computed with.
    #[serde(default = "half")]
    pub tau: f64,
    /// Whether the epoch moved the weights by the scheduler's step; epochs of
    /// unweighted training record the difficulty but leave the weights alone.
    #[serde(default)]
    pub scheduled: Vec<bool>,
    #[serde(skip)]
    last_beta: Option<DifficultyVector>,
}

impl TheoryTrace {
    pub fn new(n: usize, e: f64, q: f64, chain_exact: bool) -> Self {
        Self {
            n,
            e,
            q,
            chain_exact,
            alphas: vec![],
            a: 0.0,
            g: vec![0.0; n],
            g_history: vec![],
            z_history: vec![],
            gamma_history: vec![],
            rho_raw_history: vec![],
            rho_clipped_history: vec![],
            clip_flags: vec![],
            hard_weight: vec![],
            l_apw: vec![],
            same_hard_set: vec![],
            tau: 0.5,
            scheduled: vec![],
            last_beta: None,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    /// Whether epoch `k` (1-based) applied the scheduler step.
    pub fn is_scheduled(&self, k: usize) -> bool {
        self.scheduled.get(k - 1).copied().unwrap_or(true)
    }

    pub fn epochs(&self) -> usize {
        self.alphas.len()
    }

    /// `g += alpha * beta`, `A += alpha`.
    pub fn accumulate(&mut self, alpha: f64, beta: &DifficultyVector) -> Result<()> {
        check_len("accumulate", self.n, beta.len())?;
        for (g, d) in self.g.iter_mut().zip(beta.as_slice()) {
            *g += alpha * d.sign();
        }
        self.alphas.push(alpha);
        self.a = numeric::sum(self.alphas.iter().copied());
        self.g_history.push(self.g.clone());
        Ok(())
    }

    /// Records one epoch: the scheduler step, the epoch-start difficulty and the
    /// quantities entering the hard-mass bound.
    pub fn record_epoch(
        &mut self,
        update: &EpochUpdate,
        beta: &DifficultyVector,
        weights: &[f64],
        losses: &[f64],
    ) -> Result<()> {
        check_len("record_epoch weights", self.n, weights.len())?;
        check_len("record_epoch losses", self.n, losses.len())?;
        self.accumulate(update.alpha, beta)?;
        self.z_history.push(update.z);
        self.gamma_history.push(update.gamma);
        self.rho_raw_history.push(update.rho_raw);
        self.rho_clipped_history.push(update.rho_clipped);
        self.clip_flags.push(update.clipped);
        self.hard_weight.push(crate::scheduler::hard_mass(weights, beta)?);
        self.l_apw.push(numeric::dot(weights, losses));
        self.same_hard_set.push(self.last_beta.as_ref() == Some(beta));
        self.last_beta = Some(beta.clone());
        self.scheduled.push(true);
        Ok(())
    }

    /// Like [`TheoryTrace::record_epoch`] for an epoch that left the weights untouched.
    pub fn record_unscheduled_epoch(
        &mut self,
        update: &EpochUpdate,
        beta: &DifficultyVector,
        weights: &[f64],
        losses: &[f64],
    ) -> Result<()> {
        self.record_epoch(update, beta, weights, losses)?;
        *self.scheduled.last_mut().expect("just recorded") = false;
        Ok(())
    }

    /// `A_K` for `K = 0..=epochs`.
    pub fn a_at(&self, k: usize) -> f64 {
        numeric::sum(self.alphas[..k].iter().copied())
    }

    pub fn g_at(&self, k: usize) -> Vec<f64> {
        if k == 0 {
            vec![0.0; self.n]
        } else {
            self.g_history[k - 1].clone()
        }
    }

    /// `m_K` per sample, `None` when `A_K = 0`.
    pub fn margins_at(&self, k: usize) -> Option<Vec<f64>> {
        let a = self.a_at(k);
        (a != 0.0).then(|| self.g_at(k).iter().map(|g| g / a).collect())
    }

    pub fn prod_z(&self, k: usize) -> f64 {
        self.z_history[..k].iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
    /// Evaluated but outside the regime where the bound is guaranteed.
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epoch: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub status: CheckStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub checks: Vec<Check>,
}

impl BoundReport {
    fn push(&mut self, name: &str, epoch: Option<usize>, lhs: f64, rhs: f64, status: CheckStatus) {
        self.checks.push(Check {
            name: name.to_string(),
            epoch,
            lhs,
            rhs,
            status,
            note: None,
        });
    }

    fn push_note(
        &mut self,
        name: &str,
        epoch: Option<usize>,
        lhs: f64,
        rhs: f64,
        status: CheckStatus,
        note: impl Into<String>,
    ) {
        self.push(name, epoch, lhs, rhs, status);
        self.checks.last_mut().unwrap().note = Some(note.into());
    }

    pub fn extend(&mut self, other: BoundReport) {
        self.checks.extend(other.checks);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }

    pub fn count(&self, name: &str, status: CheckStatus) -> usize {
        self.checks
            .iter()
            .filter(|c| c.name == name && c.status == status)
            .count()
    }
}

fn le(lhs: f64, rhs: f64) -> CheckStatus {
    if lhs <= rhs + ROUNDING_SLACK * rhs.abs().max(f64::MIN_POSITIVE) {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    }
}

fn lt(lhs: f64, rhs: f64) -> CheckStatus {
    if lhs < rhs {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetentionStats {
    /// Fraction of samples with `g_K <= 0`.
    pub frac_nonretentive: f64,
    pub mean_exp_neg_g: f64,
    pub prod_z: f64,
}

pub fn retention_stats_at(trace: &TheoryTrace, k: usize) -> RetentionStats {
    let g = trace.g_at(k);
    let n = trace.n as f64;
    RetentionStats {
        frac_nonretentive: g.iter().filter(|x| **x <= 0.0).count() as f64 / n,
        mean_exp_neg_g: numeric::sum(g.iter().map(|x| (-x).exp())) / n,
        prod_z: trace.prod_z(k),
    }
}

pub fn retention_stats(trace: &TheoryTrace) -> RetentionStats {
    retention_stats_at(trace, trace.epochs())
}

/// Retention chain: `frac(g <= 0) <= mean exp(-g) = prod Z <= exp(-(4/q) sum gamma^2)`,
/// evaluated after every epoch.
pub fn theorem2_bound(trace: &TheoryTrace, q: f64) -> BoundReport {
    let mut report = BoundReport::default();
    let mut gamma_sq = numeric::Accumulator::new();
    for k in 1..=trace.epochs() {
        let s = retention_stats_at(trace, k);
        let epoch = Some(k);
        report.push("retention_markov", epoch, s.frac_nonretentive, s.mean_exp_neg_g, le(s.frac_nonretentive, s.mean_exp_neg_g));

        if trace.is_scheduled(k) {
            let gamma = trace.gamma_history[k - 1];
            gamma_sq.add(gamma * gamma);
        }
        let rate = (-(4.0 / q) * gamma_sq.value()).exp();
        if !trace.chain_exact {
            report.push_note("chain_identity", epoch, s.mean_exp_neg_g, s.prod_z, CheckStatus::NotApplicable, "per-batch renormalisation breaks the telescoping product");
            report.push_note("exponential_rate", epoch, s.prod_z, rate, CheckStatus::NotApplicable, "normaliser product not defined for iteration-level updates");
            continue;
        }
        let rel = (s.mean_exp_neg_g - s.prod_z).abs() / s.prod_z;
        let status = if rel <= CHAIN_TOL { CheckStatus::Pass } else { CheckStatus::Fail };
        report.push("chain_identity", epoch, s.mean_exp_neg_g, s.prod_z, status);
        if trace.tau != 0.5 {
            report.push_note("exponential_rate", epoch, s.prod_z, rate, CheckStatus::NotApplicable, "rate derived for tau = 1/2");
        } else if trace.clip_flags[k - 1] && trace.is_scheduled(k) {
            report.push_note("exponential_rate", epoch, s.prod_z, rate, CheckStatus::Flagged, "hard mass clipped this epoch");
        } else {
            report.push("exponential_rate", epoch, s.prod_z, rate, le(s.prod_z, rate));
        }
    }
    report
}

/// Hard-mass bound `sum_{hard} w_k < L_apw / e` for one epoch.
pub fn theorem1_check(weights: &[f64], beta: &DifficultyVector, l_apw: f64, e: f64) -> Result<BoundReport> {
    let hard = crate::scheduler::hard_mass(weights, beta)?;
    let mut report = BoundReport::default();
    theorem1_push(&mut report, None, hard, beta.hard_count() > 0, l_apw, e);
    Ok(report)
}

fn theorem1_push(report: &mut BoundReport, epoch: Option<usize>, hard: f64, any_hard: bool, l_apw: f64, e: f64) {
    let rhs = l_apw / e;
    if !any_hard {
        report.push_note("hard_mass_bound", epoch, hard, rhs, le(hard, rhs), "no hard samples");
    } else if l_apw <= 0.0 {
        report.push_note("hard_mass_bound", epoch, hard, rhs, CheckStatus::Fail, "precondition violated: zero reweighted loss with hard samples present");
    } else {
        report.push("hard_mass_bound", epoch, hard, rhs, lt(hard, rhs));
    }
}

/// Hard-mass bound over every epoch of a trace, plus the next-epoch form when
/// consecutive epochs share the same hard set.
pub fn theorem1_trace(trace: &TheoryTrace) -> BoundReport {
    let mut report = BoundReport::default();
    for k in 0..trace.epochs() {
        let hard = trace.hard_weight[k];
        theorem1_push(&mut report, Some(k + 1), hard, hard > 0.0, trace.l_apw[k], trace.e);
        if k > 0 && trace.same_hard_set[k] && trace.rho_raw_history[k] > 0.0 {
            let rhs = trace.l_apw[k - 1] / trace.e;
            report.push("next_hard_mass_bound", Some(k + 1), trace.rho_raw_history[k], rhs, lt(trace.rho_raw_history[k], rhs));
        }
    }
    report
}

/// `delta(theta, gamma) = (1 - 2 gamma)^((1 - theta)/q) * (1 + 2 gamma)^((1 + theta)/q)`.
pub fn delta_fn(theta: f64, gamma: f64, q: f64) -> Result<f64> {
    if !(gamma.abs() < 0.5) {
        return Err(Error::invalid(format!("gamma must satisfy |gamma| < 1/2, got {gamma}")));
    }
    if !(theta > 0.0) {
        return Err(Error::invalid(format!("theta must be > 0, got {theta}")));
    }
    if !(q >= 2.0) {
        return Err(Error::invalid(format!("q must be >= 2, got {q}")));
    }
    Ok((1.0 - 2.0 * gamma).powf((1.0 - theta) / q) * (1.0 + 2.0 * gamma).powf((1.0 + theta) / q))
}

/// Epoch window `K+1 ..= K+delta` (1-based epochs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub len: usize,
}

impl Window {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    fn validate(&self, trace: &TheoryTrace) -> Result<()> {
        if self.len == 0 || self.end() > trace.epochs() {
            return Err(Error::invalid(format!(
                "window ({}, {}) does not fit a trace of {} epochs",
                self.start,
                self.len,
                trace.epochs()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub theta: f64,
    pub window: Option<Window>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    /// `rho_k < 1/2` on every epoch of the window.
    pub convergence: bool,
    /// Convergence with `A_K > 0` at the window start.
    pub positive: bool,
    pub a_start: f64,
}

pub fn phase_classifier(trace: &TheoryTrace, window: Window) -> Result<PhaseReport> {
    window.validate(trace)?;
    let convergence = trace.rho_clipped_history[window.start..window.end()]
        .iter()
        .all(|r| *r < 0.5);
    let a_start = trace.a_at(window.start);
    Ok(PhaseReport {
        convergence,
        positive: convergence && a_start > 0.0,
        a_start,
    })
}

/// Longest trailing run of epochs with `rho < 1/2`.
pub fn trailing_convergence_window(trace: &TheoryTrace) -> Option<Window> {
    let len = trace
        .rho_clipped_history
        .iter()
        .rev()
        .take_while(|r| **r < 0.5)
        .count();
    (len > 0).then(|| Window {
        start: trace.epochs() - len,
        len,
    })
}

pub const FALLBACK_THETA: f64 = 0.05;

/// Smallest `gamma` over the trailing convergence window, when positive.
pub fn default_theta(trace: &TheoryTrace) -> f64 {
    trailing_convergence_window(trace)
        .map(|w| {
            trace.gamma_history[w.start..w.end()]
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min)
        })
        .filter(|g| *g > 0.0 && *g < 0.5)
        .unwrap_or(FALLBACK_THETA)
}

/// Margin-probability bound `P[m_K > theta] >= 1 - prod delta(theta, gamma_k)` on
/// every epoch with `A_K > 0`; with a window, also the factor over the window and
/// the per-sample ratio comparison.
pub fn theorem3_check(trace: &TheoryTrace, config: &BoundConfig, q: f64) -> Result<BoundReport> {
    let theta = config.theta;
    let mut report = BoundReport::default();
    let mut log_prod = numeric::Accumulator::new();
    for k in 1..=trace.epochs() {
        if trace.is_scheduled(k) {
            log_prod.add(delta_fn(theta, trace.gamma_history[k - 1], q)?.ln());
        }
        let rhs = 1.0 - log_prod.value().exp();
        let epoch = Some(k);
        if !trace.chain_exact {
            report.push_note("margin_probability", epoch, 0.0, rhs, CheckStatus::NotApplicable, "bound derived for epoch-level updates");
            continue;
        }
        match trace.margins_at(k) {
            Some(m) if trace.a_at(k) > 0.0 => {
                let p = m.iter().filter(|x| **x > theta).count() as f64 / trace.n as f64;
                let status = if p >= rhs - ROUNDING_SLACK { CheckStatus::Pass } else { CheckStatus::Fail };
                report.push("margin_probability", epoch, p, rhs, status);
            }
            _ => report.push_note("margin_probability", epoch, 0.0, rhs, CheckStatus::NotApplicable, "A_K <= 0"),
        }
    }
    if let Some(w) = config.window {
        w.validate(trace)?;
        let eta: f64 = (w.start..w.end())
            .map(|k| delta_fn(theta, trace.gamma_history[k], q))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .product();
        let gamma_min = trace.gamma_history[w.start..w.end()]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if theta <= gamma_min && gamma_min > 0.0 {
            let cap = delta_fn(gamma_min, gamma_min, q)?.powi(w.len as i32);
            report.push("window_factor", Some(w.end()), eta, cap, le(eta, cap));
        } else {
            report.push_note("window_factor", Some(w.end()), eta, 1.0, CheckStatus::NotApplicable, "theta exceeds gamma_min");
        }
        report.extend(lemma1_check(trace, w)?);
    }
    Ok(report)
}

/// Ratio comparison for samples whose relative margin grows over a positive
/// convergence window.
pub fn lemma1_check(trace: &TheoryTrace, window: Window) -> Result<BoundReport> {
    let phase = phase_classifier(trace, window)?;
    let mut report = BoundReport::default();
    if !phase.positive {
        report.push_note("margin_ratio", Some(window.end()), 0.0, 0.0, CheckStatus::NotApplicable, "window is not a positive convergence phase");
        return Ok(report);
    }
    let (k, kd) = (window.start, window.end());
    let (a, ad) = (trace.a_at(k), trace.a_at(kd));
    let (g, gd) = (trace.g_at(k), trace.g_at(kd));
    let mut checked = 0usize;
    for (n, (gk, gkd)) in g.iter().zip(&gd).enumerate() {
        let (m, md) = (gk / a, gkd / ad);
        if md > m && m > 0.0 {
            checked += 1;
            let lhs = (gkd - gk) / (ad - a);
            let rhs = m;
            if !(lhs > rhs - ROUNDING_SLACK * rhs.abs()) {
                report.push_note("margin_ratio", Some(kd), lhs, rhs, CheckStatus::Fail, format!("sample {n}"));
            }
        }
    }
    if report.checks.is_empty() {
        report.push_note("margin_ratio", Some(kd), checked as f64, 0.0, CheckStatus::Pass, format!("{checked} samples checked"));
    }
    Ok(report)
}

/// `delta(theta, gamma_k) <= delta(gamma_k, gamma_k) <= delta(gamma_min, gamma_min) < 1`
/// for every admissible grid point `0 < theta <= gamma_k < 1/2`.
pub fn lemma4_check(gammas: &[f64], q: f64, theta_grid: &[f64]) -> Result<BoundReport> {
    if gammas.is_empty() {
        return Err(Error::invalid("lemma check needs at least one gamma"));
    }
    let gamma_min = gammas.iter().copied().fold(f64::INFINITY, f64::min);
    let mut report = BoundReport::default();
    if !(gamma_min > 0.0) {
        report.push_note("delta_chain", None, gamma_min, 0.0, CheckStatus::NotApplicable, "gamma_min <= 0");
        return Ok(report);
    }
    let floor = delta_fn(gamma_min, gamma_min, q)?;
    report.push("delta_below_one", None, floor, 1.0, lt(floor, 1.0));
    for &gamma in gammas {
        let diag = delta_fn(gamma, gamma, q)?;
        report.push("delta_diag_vs_min", None, diag, floor, if diag <= floor { CheckStatus::Pass } else { CheckStatus::Fail });
        for &theta in theta_grid.iter().filter(|t| **t > 0.0 && **t <= gamma) {
            let d = delta_fn(theta, gamma, q)?;
            report.push("delta_theta_vs_diag", None, d, diag, if d <= diag { CheckStatus::Pass } else { CheckStatus::Fail });
        }
    }
    Ok(report)
}

/// Fraction of losses at or below `threshold`.
pub fn eprop(losses: &[f64], threshold: f64) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::invalid("easy proportion of an empty set is undefined"));
    }
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!("threshold must be > 0, got {threshold}")));
    }
    Ok(losses.iter().filter(|l| **l <= threshold).count() as f64 / losses.len() as f64)
}

/// Classification accuracy.
pub fn tacc(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    check_len("tacc", labels.len(), predicted.len())?;
    if labels.is_empty() {
        return Err(Error::invalid("accuracy of an empty set is undefined"));
    }
    Ok(predicted.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{self, LossVector, SampleWeights, SchedulerConfig};
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn signs(s: &[i8]) -> DifficultyVector {
        DifficultyVector::from_signs(s).unwrap()
    }

    fn update_with(alpha: f64, gamma: f64) -> EpochUpdate {
        EpochUpdate {
            rho_raw: 0.5 - gamma,
            rho_clipped: 0.5 - gamma,
            gamma,
            alpha,
            z: 1.0,
            clipped: false,
        }
    }

    #[test]
    fn accumulate_running_sums() {
        let mut t = TheoryTrace::new(2, 0.3, 2.0, true);
        t.accumulate(0.5, &signs(&[1, -1])).unwrap();
        t.accumulate(-0.2, &signs(&[1, 1])).unwrap();
        assert!((t.g[0] - 0.3).abs() < 1e-15);
        assert!((t.a - 0.3).abs() < 1e-15);
        assert!((t.g[1] - (-0.7)).abs() < 1e-15);
        assert!(t.accumulate(0.1, &signs(&[1])).is_err());

        let mut t = TheoryTrace::new(1, 0.3, 2.0, true);
        t.accumulate(0.0, &signs(&[1])).unwrap();
        assert_eq!(t.g, vec![0.0]);
        assert_eq!(t.epochs(), 1);

        let mut t = TheoryTrace::new(1, 0.3, 2.0, true);
        for k in 0..7 {
            t.accumulate(0.4, &signs(&[if k % 2 == 0 { 1 } else { -1 }])).unwrap();
            assert!(t.g[0].abs() < 1e-15 || (t.g[0] - 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_trace_retention_is_vacuous() {
        let t = TheoryTrace::new(3, 0.3, 2.0, true);
        let s = retention_stats(&t);
        assert_eq!((s.frac_nonretentive, s.mean_exp_neg_g, s.prod_z), (1.0, 1.0, 1.0));
    }

    #[test]
    fn all_retentive_gives_zero_fraction() {
        let mut t = TheoryTrace::new(3, 0.3, 2.0, true);
        t.accumulate(0.2, &signs(&[1, 1, 1])).unwrap();
        t.z_history.push(1.0);
        assert_eq!(retention_stats(&t).frac_nonretentive, 0.0);
    }

    /// Five samples, three epochs of pure multiplicative updates: the product of
    /// normalisers must equal the mean of exp(-g) recomputed from the weights.
    #[test]
    fn chain_identity_from_weight_history() {
        let cfg = SchedulerConfig::new(0.5, 2.0).unwrap();
        let loss_rows = [
            [0.1, 0.9, 0.2, 1.5, 0.4],
            [0.3, 0.2, 0.8, 1.1, 0.6],
            [0.05, 0.1, 0.7, 0.2, 0.45],
        ];
        let mut w = SampleWeights::uniform(5);
        let mut t = TheoryTrace::new(5, cfg.e, cfg.q, true);
        for row in loss_rows {
            let l = LossVector::new(row.to_vec()).unwrap();
            let (w2, up, beta) = scheduler::epoch_step(&w, &l, &cfg).unwrap();
            t.record_epoch(&up, &beta, w2.as_slice(), &row).unwrap();
            w = w2;
        }
        let s = retention_stats(&t);
        assert!((s.mean_exp_neg_g - s.prod_z).abs() <= 1e-10 * s.prod_z);
        // Telescoping: w_K = w_0 exp(-g_K) / prod Z.
        for n in 0..5 {
            let expected = 0.2 * (-t.g[n]).exp() / s.prod_z;
            assert!((w.as_slice()[n] - expected).abs() < 1e-14);
        }
        assert!(theorem2_bound(&t, 2.0).passed());
    }

    #[test]
    fn tampered_normaliser_breaks_the_chain() {
        let cfg = SchedulerConfig::new(0.5, 2.0).unwrap();
        let mut w = SampleWeights::uniform(3);
        let mut t = TheoryTrace::new(3, cfg.e, cfg.q, true);
        for row in [[0.1, 0.9, 0.2], [0.1, 0.2, 0.8]] {
            let (w2, up, beta) = scheduler::epoch_step(&w, &LossVector::new(row.to_vec()).unwrap(), &cfg).unwrap();
            t.record_epoch(&up, &beta, w2.as_slice(), &row).unwrap();
            w = w2;
        }
        assert!(theorem2_bound(&t, 2.0).passed());
        t.z_history[0] *= 1.001;
        let r = theorem2_bound(&t, 2.0);
        assert!(!r.passed());
        assert!(r.failures().all(|c| c.name == "chain_identity"));
    }

    #[test]
    fn exponential_rate_examples() {
        let mut t = TheoryTrace::new(1, 0.3, 2.0, true);
        for gamma in [0.1, 0.2] {
            t.record_epoch(&update_with(0.0, gamma), &signs(&[1]), &[1.0], &[0.1]).unwrap();
        }
        let r = theorem2_bound(&t, 2.0);
        let last = r.checks.iter().rev().find(|c| c.name == "exponential_rate").unwrap();
        assert!((last.rhs - (-0.1f64).exp()).abs() < 1e-15);
        assert!((last.rhs - 0.90484).abs() < 1e-5);

        let mut t = TheoryTrace::new(1, 0.3, 2.0, true);
        t.record_epoch(&update_with(0.0, 0.0), &signs(&[1]), &[1.0], &[0.1]).unwrap();
        let r = theorem2_bound(&t, 2.0);
        assert!(r.passed());
        assert_eq!(r.checks.iter().find(|c| c.name == "exponential_rate").unwrap().rhs, 1.0);
    }

    #[test]
    fn iteration_level_trace_skips_the_identity() {
        let mut t = TheoryTrace::new(1, 0.3, 2.0, false);
        t.record_epoch(&update_with(0.3, 0.1), &signs(&[1]), &[1.0], &[0.1]).unwrap();
        let r = theorem2_bound(&t, 2.0);
        assert_eq!(r.count("chain_identity", CheckStatus::NotApplicable), 1);
        assert_eq!(r.count("retention_markov", CheckStatus::Pass), 1);
    }

    #[test]
    fn hard_mass_bound_examples() {
        let r = theorem1_check(&[0.5, 0.5], &signs(&[1, 1]), 0.1, 0.3).unwrap();
        assert!(r.passed());
        // One hard sample with loss 2e under uniform weights: 1/2 < (e/2 + e)/... strictly.
        let e = 0.3;
        let w = [0.5, 0.5];
        let l = [0.1, 2.0 * e];
        let l_apw = scheduler::reweighted_loss(&w, &l).unwrap();
        let r = theorem1_check(&w, &signs(&[1, -1]), l_apw, e).unwrap();
        assert!(r.passed());
        assert!(r.checks[0].lhs < r.checks[0].rhs);
        let r = theorem1_check(&w, &signs(&[1, -1]), 0.0, e).unwrap();
        assert!(!r.passed());
        assert!(r.checks[0].note.as_deref().unwrap().contains("precondition"));
    }

    #[test]
    fn delta_examples() {
        let d = delta_fn(0.25, 0.25, 2.0).unwrap();
        assert!((d - 0.5f64.powf(0.375) * 1.5f64.powf(0.625)).abs() < 1e-15);
        assert!((d - 0.9935).abs() < 1e-4);
        assert!(d < 1.0);
        for theta in [0.01, 0.3, 0.9] {
            assert_eq!(delta_fn(theta, 0.0, 3.0).unwrap(), 1.0);
        }
        let d = delta_fn(1e-12, 0.3, 2.0).unwrap();
        assert!((d - 0.8).abs() < 1e-9);
        assert!(delta_fn(0.1, 0.5, 2.0).is_err());
        assert!(delta_fn(0.0, 0.1, 2.0).is_err());
        assert!(delta_fn(0.1, 0.1, 1.0).is_err());
    }

    #[test]
    fn margin_probability_single_easy_epoch() {
        let mut t = TheoryTrace::new(4, 0.3, 2.0, true);
        let alpha = 0.5 * 3f64.ln();
        t.record_epoch(&update_with(alpha, 0.25), &signs(&[1, 1, 1, 1]), &[0.25; 4], &[0.1; 4]).unwrap();
        let r = theorem3_check(&t, &BoundConfig { theta: 0.1, window: None }, 2.0).unwrap();
        let c = &r.checks[0];
        assert_eq!(c.lhs, 1.0);
        assert!((c.rhs - (1.0 - delta_fn(0.1, 0.25, 2.0).unwrap())).abs() < 1e-15);
        assert_eq!(c.status, CheckStatus::Pass);
    }

    #[test]
    fn margin_probability_degenerates_with_zero_gamma() {
        let mut t = TheoryTrace::new(2, 0.3, 2.0, true);
        t.record_epoch(&update_with(0.2, 0.0), &signs(&[1, -1]), &[0.5; 2], &[0.1, 1.0]).unwrap();
        let r = theorem3_check(&t, &BoundConfig { theta: 0.3, window: None }, 2.0).unwrap();
        assert_eq!(r.checks[0].rhs, 0.0);
        assert!(r.passed());
    }

    #[test]
    fn margin_probability_requires_positive_cumulative_step() {
        let mut t = TheoryTrace::new(2, 0.3, 2.0, true);
        t.record_epoch(&update_with(-0.2, -0.1), &signs(&[1, -1]), &[0.5; 2], &[0.1, 1.0]).unwrap();
        let r = theorem3_check(&t, &BoundConfig { theta: 0.1, window: None }, 2.0).unwrap();
        assert_eq!(r.checks[0].status, CheckStatus::NotApplicable);
    }

    #[test]
    fn phase_classifier_examples() {
        let mut t = TheoryTrace::new(1, 0.3, 2.0, true);
        for rho in [0.6f64, 0.4, 0.3] {
            let alpha = ((1.0 - rho) / rho).ln() / 2.0;
            t.record_epoch(&update_with(alpha, 0.5 - rho), &signs(&[1]), &[1.0], &[0.1]).unwrap();
        }
        let p = phase_classifier(&t, Window { start: 1, len: 2 }).unwrap();
        assert!(p.convergence);
        // A_1 = alpha(0.6) < 0.
        assert!(!p.positive);
        let p = phase_classifier(&t, Window { start: 0, len: 3 }).unwrap();
        assert!(!p.convergence);
        assert!(phase_classifier(&t, Window { start: 2, len: 2 }).is_err());
        assert_eq!(trailing_convergence_window(&t), Some(Window { start: 1, len: 2 }));
        assert!((default_theta(&t) - 0.1).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn phase_classifier_matches_definition(
            rhos in prop::collection::vec(0.05f64..0.95, 2..20),
            start_frac in 0.0f64..1.0,
        ) {
            let mut t = TheoryTrace::new(1, 0.3, 2.0, true);
            for &rho in &rhos {
                let alpha = ((1.0 - rho) / rho).ln() / 2.0;
                t.record_epoch(&update_with(alpha, 0.5 - rho), &signs(&[1]), &[1.0], &[0.1]).unwrap();
            }
            let start = ((rhos.len() - 1) as f64 * start_frac) as usize;
            let len = rhos.len() - start;
            let p = phase_classifier(&t, Window { start, len }).unwrap();
            let mut brute_conv = true;
            for k in start..start + len { brute_conv &= rhos[k] < 0.5; }
            let mut a = 0.0;
            for rho in &rhos[..start] { a += ((1.0 - rho) / rho).ln() / 2.0; }
            prop_assert_eq!(p.convergence, brute_conv);
            prop_assert_eq!(p.positive, brute_conv && a > 0.0);
        }

        #[test]
        fn margins_unaffected_by_loss_scale(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..2.0, 6), 1..6),
            scale in 0.1f64..10.0,
        ) {
            // m_K depends only on alpha and beta: scaling losses and threshold together
            // leaves every margin unchanged.
            let run = |s: f64| {
                let cfg = SchedulerConfig::new(0.7 * s, 3.0).unwrap();
                let mut w = SampleWeights::uniform(6);
                let mut t = TheoryTrace::new(6, cfg.e, cfg.q, true);
                for row in &rows {
                    let l: Vec<f64> = row.iter().map(|x| x * s).collect();
                    let (w2, up, beta) = scheduler::epoch_step(&w, &LossVector::new(l.clone()).unwrap(), &cfg).unwrap();
                    t.record_epoch(&up, &beta, w2.as_slice(), &l).unwrap();
                    w = w2;
                }
                t
            };
            let (a, b) = (run(1.0), run(scale));
            prop_assert_eq!(a.alphas.len(), b.alphas.len());
            prop_assert_eq!(a.margins_at(a.epochs()), b.margins_at(b.epochs()));
        }
    }

    #[test]
    fn lemma4_examples() {
        let r = lemma4_check(&[0.2, 0.3], 2.0, &[0.05, 0.1, 0.2]).unwrap();
        assert!(r.passed());
        assert_eq!(r.count("delta_theta_vs_diag", CheckStatus::Pass), 6);

        // theta = gamma: first inequality is an equality.
        let r = lemma4_check(&[0.25], 3.0, &[0.25]).unwrap();
        let c = r.checks.iter().find(|c| c.name == "delta_theta_vs_diag").unwrap();
        assert_eq!(c.lhs, c.rhs);
        let c = r.checks.iter().find(|c| c.name == "delta_diag_vs_min").unwrap();
        assert_eq!(c.lhs, c.rhs);
    }

    #[test]
    fn eprop_and_tacc_examples() {
        assert_eq!(eprop(&[0.1, 0.2], LN_2).unwrap(), 1.0);
        assert_eq!(eprop(&[0.1, 1.0], LN_2).unwrap(), 0.5);
        assert!(eprop(&[], LN_2).is_err());
        assert!(eprop(&[0.1], 0.0).is_err());
        assert_eq!(tacc(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(tacc(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert!(tacc(&[1], &[0, 1]).is_err());
    }
}
