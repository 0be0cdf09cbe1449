//! Synthetic datasets, label noise, splits, threshold defaults and CSV I/O.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numeric;

pub const DEFAULT_ATTEMPT_CAP: usize = 1000;
pub const PERCEPTRON_UPDATE_CAP: usize = 1_000_000;

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("matrix data", rows * cols, data.len())?;
        if let Some(x) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("feature value {x} is not finite")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len("matrix row", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    /// Noise already present in the data: lower the threshold.
    Inherent,
    /// Noise injected on purpose: raise the threshold.
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub p: f64,
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec {
        kind: NoiseKind::None,
        p: 0.0,
    };

    pub fn new(kind: NoiseKind, p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("noise rate must lie in [0, 1), got {p}")));
        }
        if kind == NoiseKind::None && p != 0.0 {
            return Err(Error::config("noise kind none requires p = 0"));
        }
        Ok(Self { kind, p })
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::NONE
    }
}

/// Error threshold derived from the label-noise estimate.
pub fn default_threshold(noise: NoiseSpec) -> Result<f64> {
    let spec = NoiseSpec::new(noise.kind, noise.p)?;
    let e = match spec.kind {
        NoiseKind::None => std::f64::consts::LN_2,
        NoiseKind::Inherent => std::f64::consts::LN_2 + (1.0 - spec.p).ln(),
        NoiseKind::Synthetic => std::f64::consts::LN_2 - (1.0 - spec.p).ln(),
    };
    if e <= 0.0 {
        return Err(Error::config(format!(
            "inherent noise rate {} leaves a nonpositive threshold {e}",
            spec.p
        )));
    }
    Ok(e)
}

/// Generator parameters recorded next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub seed: Option<u64>,
    pub std: Option<f64>,
    pub centers: Vec<Vec<f64>>,
    pub attempts: Option<usize>,
    pub noise: NoiseSpec,
    /// Separating hyperplane `[w; b]` certifying linear separability.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub witness: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub y_clean: Option<Vec<usize>>,
    pub num_classes: usize,
    pub meta: Option<DatasetMeta>,
}

impl LabeledDataset {
    pub fn new(x: Matrix, y: Vec<usize>, num_classes: usize) -> Result<Self> {
        check_len("labels", x.rows(), y.len())?;
        if num_classes < 2 {
            return Err(Error::invalid("a dataset needs at least two classes"));
        }
        if let Some(c) = y.iter().find(|c| **c >= num_classes) {
            return Err(Error::invalid(format!("label {c} outside [0, {num_classes})")));
        }
        Ok(Self {
            x,
            y,
            y_clean: None,
            num_classes,
            meta: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            x: self.x.select(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            y_clean: self
                .y_clean
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            num_classes: self.num_classes,
            meta: self.meta.clone(),
        }
    }

    /// Replaces labels by [`inject_uniform_noise`], keeping the originals.
    pub fn with_label_noise<R: Rng + ?Sized>(mut self, p: f64, rng: &mut R) -> Result<Self> {
        let (noisy, _) = inject_uniform_noise(&self.y, p, self.num_classes, rng)?;
        let clean = std::mem::replace(&mut self.y, noisy);
        self.y_clean.get_or_insert(clean);
        if let Some(meta) = self.meta.as_mut() {
            meta.noise = NoiseSpec::new(NoiseKind::Synthetic, p)?;
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub n: usize,
    pub dim: usize,
    pub std: f64,
    pub center_range: (f64, f64),
    pub max_attempts: usize,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        Self {
            n: 600,
            dim: 2,
            std: 1.5,
            center_range: (-10.0, 10.0),
            max_attempts: DEFAULT_ATTEMPT_CAP,
        }
    }
}

fn normal(std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, std).map_err(|e| Error::invalid(format!("normal distribution: {e}")))
}

fn validate_centers(std: f64, range: (f64, f64), dim: usize) -> Result<()> {
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::invalid(format!("std must be > 0, got {std}")));
    }
    if !(range.0 < range.1) {
        return Err(Error::invalid(format!("empty center range {range:?}")));
    }
    if dim == 0 {
        return Err(Error::invalid("dimension must be >= 1"));
    }
    Ok(())
}

fn sample_cluster<R: Rng + ?Sized>(
    center: &[f64],
    count: usize,
    noise: &Normal<f64>,
    rng: &mut R,
    rows: &mut Vec<f64>,
) {
    for _ in 0..count {
        rows.extend(center.iter().map(|c| c + noise.sample(rng)));
    }
}

fn two_clusters<R: Rng + ?Sized>(
    centers: &[Vec<f64>],
    half: usize,
    noise: &Normal<f64>,
    rng: &mut R,
) -> Result<LabeledDataset> {
    let dim = centers[0].len();
    let mut data = Vec::with_capacity(2 * half * dim);
    sample_cluster(&centers[0], half, noise, rng, &mut data);
    sample_cluster(&centers[1], half, noise, rng, &mut data);
    let y = (0..2 * half).map(|i| usize::from(i >= half)).collect();
    LabeledDataset::new(Matrix::new(2 * half, dim, data)?, y, 2)
}

/// One draw of two Gaussian clusters around fixed centers, without the
/// separability requirement.
pub fn gaussian_2class_at<R: Rng + ?Sized>(
    centers: &[Vec<f64>],
    n: usize,
    std: f64,
    rng: &mut R,
) -> Result<LabeledDataset> {
    if centers.len() != 2 || centers[0].len() != centers[1].len() || centers[0].is_empty() {
        return Err(Error::invalid("need two centers of equal, nonzero dimension"));
    }
    if n < 2 || n % 2 != 0 {
        return Err(Error::invalid(format!("n must be even and >= 2, got {n}")));
    }
    two_clusters(centers, n / 2, &normal(std)?, rng)
}

/// Two Gaussian clusters with uniformly drawn centers, resampled until linearly
/// separable. The first `n/2` rows are class 0.
pub fn gen_gaussian_2class<R: Rng + ?Sized>(spec: &GaussianSpec, rng: &mut R) -> Result<LabeledDataset> {
    if spec.n < 2 || spec.n % 2 != 0 {
        return Err(Error::invalid(format!("n must be even and >= 2, got {}", spec.n)));
    }
    validate_centers(spec.std, spec.center_range, spec.dim)?;
    let noise = normal(spec.std)?;
    let half = spec.n / 2;
    for attempt in 1..=spec.max_attempts {
        let centers: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                (0..spec.dim)
                    .map(|_| rng.random_range(spec.center_range.0..spec.center_range.1))
                    .collect()
            })
            .collect();
        let mut ds = two_clusters(&centers, half, &noise, rng)?;
        if let Some(witness) = separability_check(&ds.x, &ds.y)?.witness {
            ds.meta = Some(DatasetMeta {
                generator: "gaussian2".into(),
                seed: None,
                std: Some(spec.std),
                centers,
                attempts: Some(attempt),
                noise: NoiseSpec::NONE,
                witness: Some(witness),
            });
            return Ok(ds);
        }
    }
    Err(Error::Generation(format!(
        "no linearly separable sample within {} attempts",
        spec.max_attempts
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobsSpec {
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
    pub std: f64,
    pub center_range: (f64, f64),
}

impl Default for BlobsSpec {
    fn default() -> Self {
        Self {
            n: 600,
            dim: 2,
            classes: 3,
            std: 2.0,
            center_range: (-5.0, 5.0),
        }
    }
}

/// Multi-class Gaussian blobs with balanced classes (sizes differ by at most one).
pub fn gen_blobs<R: Rng + ?Sized>(spec: &BlobsSpec, rng: &mut R) -> Result<LabeledDataset> {
    if spec.classes < 2 || spec.n < spec.classes {
        return Err(Error::invalid("blobs need >= 2 classes and at least one sample per class"));
    }
    validate_centers(spec.std, spec.center_range, spec.dim)?;
    let noise = normal(spec.std)?;
    let centers: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            (0..spec.dim)
                .map(|_| rng.random_range(spec.center_range.0..spec.center_range.1))
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(spec.n * spec.dim);
    let mut y = Vec::with_capacity(spec.n);
    for c in 0..spec.classes {
        let count = spec.n / spec.classes + usize::from(c < spec.n % spec.classes);
        sample_cluster(&centers[c], count, &noise, rng, &mut data);
        y.extend(std::iter::repeat_n(c, count));
    }
    let mut ds = LabeledDataset::new(Matrix::new(spec.n, spec.dim, data)?, y, spec.classes)?;
    ds.meta = Some(DatasetMeta {
        generator: "blobs".into(),
        seed: None,
        std: Some(spec.std),
        centers,
        attempts: None,
        noise: NoiseSpec::NONE,
        witness: None,
    });
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Separability {
    pub separable: bool,
    /// `[w; b]` with `sign(w.x + b)` matching every label, when found.
    pub witness: Option<Vec<f64>>,
    pub updates: usize,
}

fn signed(label: usize) -> f64 {
    if label == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Whether `[w; b]` puts every sample strictly on its own side.
pub fn verify_witness(x: &Matrix, y: &[usize], witness: &[f64]) -> bool {
    let d = x.cols();
    witness.len() == d + 1
        && (0..x.rows()).all(|i| {
            let score = numeric::dot(&witness[..d], x.row(i)) + witness[d];
            signed(y[i]) * score > 0.0
        })
}

/// Perceptron with a bias coordinate scaled to the data radius.
///
/// Stops after a mistake-free pass (separable, witness returned) or after
/// [`PERCEPTRON_UPDATE_CAP`] updates (reported as not separable).
pub fn separability_check(x: &Matrix, y: &[usize]) -> Result<Separability> {
    check_len("separability labels", x.rows(), y.len())?;
    if let Some(c) = y.iter().find(|c| **c > 1) {
        return Err(Error::invalid(format!("separability check needs binary labels, got {c}")));
    }
    let d = x.cols();
    let radius = (0..x.rows())
        .map(|i| numeric::norm2(x.row(i)))
        .fold(1.0f64, f64::max);
    // Rows augmented with the scaled bias coordinate and multiplied by the label sign,
    // so a mistake is `w . a <= 0` and the update is `w += a`.
    let aug: Vec<f64> = (0..x.rows())
        .flat_map(|i| {
            let t = signed(y[i]);
            x.row(i).iter().map(move |v| t * v).chain([t * radius])
        })
        .collect();
    let mut w = vec![0.0; d + 1];
    let mut updates = 0;
    loop {
        let mut clean_pass = true;
        for a in aug.chunks_exact(d + 1) {
            let score: f64 = w.iter().zip(a).map(|(p, q)| p * q).sum();
            if score <= 0.0 {
                for (wj, aj) in w.iter_mut().zip(a) {
                    *wj += aj;
                }
                updates += 1;
                clean_pass = false;
                if updates >= PERCEPTRON_UPDATE_CAP {
                    return Ok(Separability {
                        separable: false,
                        witness: None,
                        updates,
                    });
                }
            }
        }
        if clean_pass {
            w[d] *= radius;
            let separable = verify_witness(x, y, &w);
            return Ok(Separability {
                separable,
                witness: separable.then_some(w),
                updates,
            });
        }
    }
}

/// With probability `p`, independently per sample, replaces the label by a uniform
/// draw from the other `C - 1` classes. Returns the new labels and the flip mask.
pub fn inject_uniform_noise<R: Rng + ?Sized>(
    y: &[usize],
    p: f64,
    num_classes: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<bool>)> {
    if num_classes < 2 {
        return Err(Error::invalid("label noise needs at least two classes"));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("noise rate must lie in [0, 1), got {p}")));
    }
    let mut out = Vec::with_capacity(y.len());
    let mut mask = Vec::with_capacity(y.len());
    for &label in y {
        if label >= num_classes {
            return Err(Error::invalid(format!("label {label} outside [0, {num_classes})")));
        }
        if rng.random::<f64>() < p {
            let r = rng.random_range(0..num_classes - 1);
            out.push(if r >= label { r + 1 } else { r });
            mask.push(true);
        } else {
            out.push(label);
            mask.push(false);
        }
    }
    Ok((out, mask))
}

/// Seeded shuffle of `0..n` cut into parts of `round(f * n)`; the last part takes
/// the remainder.
pub fn split_indices<R: Rng + ?Sized>(n: usize, fractions: &[f64], rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::invalid(format!("split fractions must be positive, got {fractions:?}")));
    }
    let total = numeric::sum(fractions.iter().copied());
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions sum to {total}, not 1")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut parts = Vec::with_capacity(fractions.len());
    let mut start = 0;
    for (k, f) in fractions.iter().enumerate() {
        let end = if k + 1 == fractions.len() {
            n
        } else {
            (start + (f * n as f64).round() as usize).min(n)
        };
        parts.push(order[start..end].to_vec());
        start = end;
    }
    Ok(parts)
}

pub fn split<R: Rng + ?Sized>(ds: &LabeledDataset, fractions: &[f64], rng: &mut R) -> Result<Vec<LabeledDataset>> {
    Ok(split_indices(ds.len(), fractions, rng)?
        .iter()
        .map(|idx| ds.subset(idx))
        .collect())
}

/// Sidecar path `name.meta.json` next to `name.csv`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Writes the dataset CSV (`f0..f{d-1}, y[, y_clean]`) and, when present, the
/// metadata sidecar. Floats use the shortest representation that round-trips.
pub fn write_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    header.push("y".into());
    if ds.y_clean.is_some() {
        header.push("y_clean".into());
    }
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.y[i].to_string());
        if let Some(c) = &ds.y_clean {
            rec.push(c[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    if let Some(meta) = &ds.meta {
        std::fs::write(meta_path(path), serde_json::to_string_pretty(meta)? + "\n")?;
    }
    Ok(())
}

/// Reads a dataset CSV; the class count is one more than the largest label seen
/// (at least two). A sidecar next to the file is loaded when present.
pub fn read_csv(path: &Path) -> Result<LabeledDataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let mut features = 0usize;
    let (mut y_col, mut clean_col) = (None, None);
    for (k, name) in header.iter().enumerate() {
        match name {
            "y" => y_col = Some(k),
            "y_clean" => clean_col = Some(k),
            f if f == format!("f{features}") && y_col.is_none() && clean_col.is_none() => features += 1,
            other => return Err(Error::parse(path, format!("unknown column {other:?}"))),
        }
    }
    let y_col = y_col.ok_or_else(|| Error::parse(path, "missing y column"))?;
    let mut data = vec![];
    let (mut y, mut clean) = (vec![], vec![]);
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        for j in 0..features {
            data.push(parse_field::<f64>(path, &rec[j], row, &header[j])?);
        }
        y.push(parse_field::<usize>(path, &rec[y_col], row, "y")?);
        if let Some(c) = clean_col {
            clean.push(parse_field::<usize>(path, &rec[c], row, "y_clean")?);
        }
    }
    let num_classes = y.iter().chain(&clean).copied().max().map_or(2, |m| (m + 1).max(2));
    let x = Matrix::new(y.len(), features, data).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut ds = LabeledDataset::new(x, y, num_classes)?;
    if clean_col.is_some() {
        ds.y_clean = Some(clean);
    }
    let meta = meta_path(path);
    if meta.exists() {
        let text = std::fs::read_to_string(&meta)?;
        ds.meta = Some(serde_json::from_str(&text).map_err(|e| Error::parse(&meta, e.to_string()))?);
    }
    Ok(ds)
}

fn parse_field<T: FromStr>(path: &Path, raw: &str, row: usize, column: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    raw.trim()
        .parse()
        .map_err(|e| Error::parse(path, format!("row {row}, column {column}: {raw:?}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use std::f64::consts::LN_2;

    #[test]
    fn xor_is_not_separable() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let s = separability_check(&x, &[0, 0, 1, 1]).unwrap();
        assert!(!s.separable);
        assert!(s.witness.is_none());
        assert_eq!(s.updates, PERCEPTRON_UPDATE_CAP);
    }

    #[test]
    fn two_points_are_separable() {
        let x = Matrix::from_rows(&[vec![3.0, 1.0], vec![3.0, 1.5]]).unwrap();
        let s = separability_check(&x, &[0, 1]).unwrap();
        assert!(s.separable);
        assert!(verify_witness(&x, &[0, 1], &s.witness.unwrap()));
    }

    #[test]
    fn far_clusters_separate_on_first_attempt() {
        let centers = vec![vec![-10.0, -10.0], vec![10.0, 10.0]];
        for seed in 0..5 {
            let ds = gaussian_2class_at(&centers, 600, 1.5, &mut stream(seed, Stream::Data)).unwrap();
            let s = separability_check(&ds.x, &ds.y).unwrap();
            assert!(s.separable);
            assert!(verify_witness(&ds.x, &ds.y, &s.witness.unwrap()));
        }
    }

    #[test]
    fn overlapping_clusters_hit_the_attempt_cap() {
        let spec = GaussianSpec {
            center_range: (0.0, 1e-3),
            max_attempts: 3,
            n: 40,
            ..GaussianSpec::default()
        };
        let err = gen_gaussian_2class(&spec, &mut stream(3, Stream::Data));
        assert!(matches!(err, Err(Error::Generation(_))));
    }

    #[test]
    fn generated_dataset_is_balanced_and_certified() {
        let mut rng = stream(11, Stream::Data);
        let ds = gen_gaussian_2class(&GaussianSpec::default(), &mut rng).unwrap();
        assert_eq!(ds.len(), 600);
        assert_eq!(ds.y.iter().filter(|c| **c == 0).count(), 300);
        let meta = ds.meta.as_ref().unwrap();
        assert!(meta.attempts.unwrap() >= 1);
        assert!(verify_witness(&ds.x, &ds.y, meta.witness.as_ref().unwrap()));
        let again = gen_gaussian_2class(&GaussianSpec::default(), &mut stream(11, Stream::Data)).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn noise_examples() {
        let mut rng = stream(1, Stream::Data);
        let y: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let (same, mask) = inject_uniform_noise(&y, 0.0, 4, &mut rng).unwrap();
        assert_eq!(same, y);
        assert!(mask.iter().all(|m| !m));
        let (noisy, mask) = inject_uniform_noise(&y, 0.5, 4, &mut rng).unwrap();
        for i in 0..y.len() {
            assert_eq!(mask[i], noisy[i] != y[i]);
            assert!(noisy[i] < 4);
        }
        assert!(inject_uniform_noise(&y, 0.2, 1, &mut rng).is_err());
        assert!(inject_uniform_noise(&y, 1.0, 4, &mut rng).is_err());
    }

    #[test]
    fn split_examples() {
        let mut rng = stream(2, Stream::Data);
        let parts = split_indices(600, &[0.7, 0.3], &mut rng).unwrap();
        assert_eq!((parts[0].len(), parts[1].len()), (420, 180));
        let mut all: Vec<usize> = parts.concat();
        all.sort();
        assert_eq!(all, (0..600).collect::<Vec<_>>());
        let one = split_indices(5, &[1.0], &mut rng).unwrap();
        let mut p = one[0].clone();
        p.sort();
        assert_eq!(p, vec![0, 1, 2, 3, 4]);
        assert!(split_indices(5, &[0.5, 0.4], &mut rng).is_err());
        assert!(split_indices(5, &[1.2, -0.2], &mut rng).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(default_threshold(NoiseSpec::NONE).unwrap(), LN_2);
        let inh = default_threshold(NoiseSpec { kind: NoiseKind::Inherent, p: 0.4 }).unwrap();
        assert!((inh - (LN_2 + 0.6f64.ln())).abs() < 1e-12);
        assert!((inh - 0.1823).abs() < 1e-4);
        let syn = default_threshold(NoiseSpec { kind: NoiseKind::Synthetic, p: 0.4 }).unwrap();
        assert!((syn - 1.2040).abs() < 1e-4);
        assert!(default_threshold(NoiseSpec { kind: NoiseKind::Inherent, p: 0.5 }).is_err());
        assert!(default_threshold(NoiseSpec { kind: NoiseKind::None, p: 0.1 }).is_err());
    }

    #[test]
    fn blobs_are_balanced() {
        let ds = gen_blobs(&BlobsSpec { n: 100, ..BlobsSpec::default() }, &mut stream(0, Stream::Data)).unwrap();
        let counts: Vec<usize> = (0..3).map(|c| ds.y.iter().filter(|y| **y == c).count()).collect();
        assert_eq!(counts, vec![34, 33, 33]);
    }
}
