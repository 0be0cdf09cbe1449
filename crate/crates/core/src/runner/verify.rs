use std::fs;
use std::path::{Path, PathBuf};

use super::run::{seed_dirs, SUMMARY_FILE, TRACE_FILE};
use crate::error::{Error, Result};
use crate::theory::{self, BoundConfig, BoundReport, TheoryTrace};

/// Points of the `theta` grid used for the delta-chain check over a window.
pub const THETA_GRID_POINTS: usize = 20;

/// Every applicable bound check on a trace: hard-mass bounds on each epoch, the
/// retention chain, the margin-probability bound at the default `theta`, and
/// over the trailing convergence window the per-sample ratio comparison and the
/// delta chain.
pub fn verify_trace(trace: &TheoryTrace) -> Result<BoundReport> {
    let mut report = theory::theorem1_trace(trace);
    report.extend(theory::theorem2_bound(trace, trace.q));
    let window = theory::trailing_convergence_window(trace);
    let theta = theory::default_theta(trace);
    report.extend(theory::theorem3_check(trace, &BoundConfig { theta, window }, trace.q)?);
    if let Some(w) = window {
        let gammas = &trace.gamma_history[w.start..w.end()];
        let gamma_min = gammas.iter().copied().fold(f64::INFINITY, f64::min);
        if gamma_min > 0.0 {
            let grid: Vec<f64> = (1..=THETA_GRID_POINTS)
                .map(|k| gamma_min * k as f64 / THETA_GRID_POINTS as f64)
                .collect();
            report.extend(theory::lemma4_check(gammas, trace.q, &grid)?);
        }
    }
    Ok(report)
}

pub fn read_trace(path: &Path) -> Result<TheoryTrace> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::parse(path, e.to_string()))
}

/// Re-checks the traces stored under an experiment directory (with a summary) or
/// a single seed directory.
pub fn verify_dir(dir: &Path) -> Result<Vec<(PathBuf, BoundReport)>> {
    let seeds = if dir.join(SUMMARY_FILE).exists() {
        seed_dirs(dir)?
    } else if dir.join(TRACE_FILE).exists() {
        vec![dir.to_path_buf()]
    } else {
        return Err(Error::MissingArtifact(dir.join(TRACE_FILE)));
    };
    seeds
        .into_iter()
        .map(|d| {
            let report = verify_trace(&read_trace(&d.join(TRACE_FILE))?)?;
            Ok((d, report))
        })
        .collect()
}
