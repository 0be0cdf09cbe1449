//! Phase-transition detection from parameter checkpoints.
//!
//! For checkpoints `1..=T` the cosine dissimilarity `d(t0, t1)` between the
//! flattened parameter vectors is averaged over every earlier checkpoint,
//! `d_dagger(t1) = mean_{t0 < t1} d(t0, t1)`. The transition is the first
//! `t1` where that average peaks, and the mean training loss at that
//! checkpoint becomes the error threshold.
//!
//! Indices in this module are 1-based to match checkpoint numbering.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numeric;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSeries {
    vectors: Vec<Vec<f64>>,
    loss_history: Option<Vec<f64>>,
}

impl CheckpointSeries {
    pub fn new(vectors: Vec<Vec<f64>>, loss_history: Option<Vec<f64>>) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::invalid(format!(
                "a checkpoint series needs at least 2 checkpoints, got {}",
                vectors.len()
            )));
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(Error::invalid("checkpoint vectors are empty"));
        }
        for (t, v) in vectors.iter().enumerate() {
            check_len("checkpoint dimension", dim, v.len())?;
            if numeric::norm2(v) == 0.0 {
                return Err(Error::invalid(format!("checkpoint {} has zero norm", t + 1)));
            }
        }
        if let Some(l) = &loss_history {
            check_len("checkpoint loss history", vectors.len(), l.len())?;
        }
        Ok(Self {
            vectors,
            loss_history,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn loss_history(&self) -> Option<&[f64]> {
        self.loss_history.as_deref()
    }

    /// Writes the binary checkpoint file: `u64` dimension, `u64` count, then the
    /// vectors as little-endian `f64`.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        write_checkpoints(path, &self.vectors)
    }

    pub fn read_binary(path: &Path, loss_history: Option<Vec<f64>>) -> Result<Self> {
        Self::new(read_checkpoints(path)?, loss_history)
    }
}

pub fn write_checkpoints(path: &Path, vectors: &[Vec<f64>]) -> Result<()> {
    let dim = vectors.first().map_or(0, Vec::len);
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&(dim as u64).to_le_bytes())?;
    out.write_all(&(vectors.len() as u64).to_le_bytes())?;
    for v in vectors {
        check_len("checkpoint dimension", dim, v.len())?;
        for x in v {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoints(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut input = BufReader::new(File::open(path)?);
    let mut word = [0u8; 8];
    let mut next_u64 = |input: &mut BufReader<File>| -> Result<u64> {
        input
            .read_exact(&mut word)
            .map_err(|_| Error::parse(path, "truncated checkpoint header"))?;
        Ok(u64::from_le_bytes(word))
    };
    let dim = next_u64(&mut input)? as usize;
    let count = next_u64(&mut input)? as usize;
    let mut vectors = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for t in 0..count {
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            input
                .read_exact(&mut buf)
                .map_err(|_| Error::parse(path, format!("truncated checkpoint {}", t + 1)))?;
            v.push(f64::from_le_bytes(buf));
        }
        vectors.push(v);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::parse(path, format!("{} trailing bytes", rest.len())));
    }
    Ok(vectors)
}

/// Reads a single-column loss CSV (header `loss`).
pub fn read_loss_column(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == "loss")
        .ok_or_else(|| Error::parse(path, "missing `loss` column"))?;
    reader
        .records()
        .map(|r| {
            let r = r?;
            r.get(col)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::parse(path, "malformed loss value"))
        })
        .collect()
}

pub fn write_loss_column(path: &Path, losses: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["checkpoint", "loss"])?;
    for (t, l) in losses.iter().enumerate() {
        w.write_record([(t + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdResult {
    /// `d_dagger(t1)` for `t1 = 2..=T`.
    pub d_profile: Vec<f64>,
    pub t_star: usize,
    pub e_estimate: Option<f64>,
}

/// `1 - <u, v> / (|u| |v|)`, in `[0, 2]`.
pub fn cosine_dissimilarity(u: &[f64], v: &[f64]) -> Result<f64> {
    check_len("cosine_dissimilarity", u.len(), v.len())?;
    let (su, sv) = (numeric::dot(u, u), numeric::dot(v, v));
    if su == 0.0 || sv == 0.0 {
        return Err(Error::invalid("cosine dissimilarity of a zero vector"));
    }
    Ok(1.0 - cosine(u, v, su, sv))
}

fn cosine(u: &[f64], v: &[f64], su: f64, sv: f64) -> f64 {
    (numeric::dot(u, v) / (su * sv).sqrt()).clamp(-1.0, 1.0)
}

pub fn pd_profile(series: &CheckpointSeries) -> Vec<f64> {
    let v = series.vectors();
    let sq: Vec<f64> = v.iter().map(|x| numeric::dot(x, x)).collect();
    (1..v.len())
        .map(|t1| {
            let total = numeric::sum(
                (0..t1).map(|t0| 1.0 - cosine(&v[t0], &v[t1], sq[t0], sq[t1])),
            );
            total / t1 as f64
        })
        .collect()
}

/// First checkpoint index (1-based, `>= 2`) attaining the maximum of the profile.
pub fn detect_transition(series: &CheckpointSeries) -> usize {
    argmax_first(&pd_profile(series)) + 2
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn threshold_from_transition(series: &CheckpointSeries) -> Result<f64> {
    let losses = series
        .loss_history()
        .ok_or_else(|| Error::invalid("checkpoint series has no loss history"))?;
    Ok(losses[detect_transition(series) - 1])
}

pub fn analyze(series: &CheckpointSeries) -> PdResult {
    let d_profile = pd_profile(series);
    let t_star = argmax_first(&d_profile) + 2;
    PdResult {
        e_estimate: series.loss_history().map(|l| l[t_star - 1]),
        d_profile,
        t_star,
    }
}

/// Checkpoint series with an abrupt direction change at `k` (1-based).
///
/// Checkpoints `1..k` jitter around one random direction and `k..=T` around an
/// orthogonal one. Each jitter is a small random walk so consecutive
/// checkpoints are correlated, as in a real run.
pub fn planted_transition_series<R: Rng + ?Sized>(
    dim: usize,
    len: usize,
    k: usize,
    noise: f64,
    rng: &mut R,
) -> Result<CheckpointSeries> {
    if dim < 2 || !(2..=len).contains(&k) {
        return Err(Error::invalid(format!(
            "planted series needs dim >= 2 and 2 <= k <= T (dim={dim}, k={k}, T={len})"
        )));
    }
    let mut gauss = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(rng)).collect() };
    let a = unit(gauss(dim));
    let mut b = gauss(dim);
    let proj = numeric::dot(&a, &b);
    b.iter_mut().zip(&a).for_each(|(x, y)| *x -= proj * y);
    let b = unit(b);
    let mut walk = vec![0.0; dim];
    let mut vectors = Vec::with_capacity(len);
    for t in 1..=len {
        let step = gauss(dim);
        walk.iter_mut().zip(&step).for_each(|(w, s)| *w += noise * s / (dim as f64).sqrt());
        let dir = if t < k { &a } else { &b };
        vectors.push(dir.iter().zip(&walk).map(|(d, w)| d + w).collect());
    }
    let losses = (1..=len).map(|t| 1.0 / t as f64).collect();
    CheckpointSeries::new(vectors, Some(losses))
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = numeric::norm2(&v);
    v.into_iter().map(|x| x / n).collect()
}
