use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetConfig, ExperimentConfig, ModelConfig, StabilizerMode, ThresholdMode};
use super::verify::verify_trace;
use crate::datasets::{self, LabeledDataset, NoiseKind};
use crate::error::{Error, Result};
use crate::models::{self, Model, Scheme, SoftmaxMlp, TrainOutcome, TrainSetup};
use crate::numeric;
use crate::pd::{self, CheckpointSeries};
use crate::rng::{stream, Stream};
use crate::scheduler::SchedulerConfig;
use crate::theory::BoundReport;

pub const EPOCHS_FILE: &str = "epochs.csv";
pub const TRACE_FILE: &str = "trace.json";
pub const BOUNDS_FILE: &str = "bounds.json";
pub const CHECKPOINTS_FILE: &str = "checkpoints.bin";
pub const CHECKPOINT_LOSSES_FILE: &str = "checkpoint_losses.csv";
pub const MODEL_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const TRAIN_DATA_FILE: &str = "train.csv";
pub const TEST_DATA_FILE: &str = "test.csv";
pub const SEED_SUMMARY_FILE: &str = "run.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";

pub const EPOCH_COLUMNS: [&str; 16] = [
    "epoch",
    "rho_raw",
    "rho_clipped",
    "gamma",
    "alpha",
    "Z",
    "A_K",
    "L_apw",
    "L_mean",
    "eprop_train",
    "eprop_test",
    "tacc_train",
    "tacc_test",
    "clipped_flag",
    "w_min",
    "w_max",
];

/// Train/test data of one seed.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub train: LabeledDataset,
    pub test: Option<LabeledDataset>,
    pub val: Option<LabeledDataset>,
}

/// Builds the seed's datasets from the data stream: generation (or file load),
/// split, optional validation hold-out, then synthetic label noise on the training part.
pub fn build_data(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let mut rng = stream(seed, Stream::Data);
    let (mut train, test) = match &cfg.dataset {
        DatasetConfig::File { train, test, split, .. } => {
            let full = datasets::read_csv(train)?;
            match test {
                Some(t) => (full, Some(datasets::read_csv(t)?)),
                None => split_two(&full, split, &mut rng)?,
            }
        }
        other => {
            let mut full = match other.gaussian_spec() {
                Some(spec) => datasets::gen_gaussian_2class(&spec, &mut rng)?,
                None => datasets::gen_blobs(&other.blobs_spec().expect("blobs"), &mut rng)?,
            };
            if let Some(meta) = full.meta.as_mut() {
                meta.seed = Some(seed);
            }
            split_two(&full, other.split(), &mut rng)?
        }
    };
    let val = if cfg.select_best_by_val {
        let parts = datasets::split(&train, &[1.0 - cfg.val_fraction, cfg.val_fraction], &mut rng)?;
        let mut it = parts.into_iter();
        train = it.next().unwrap();
        it.next()
    } else {
        None
    };
    let noise = cfg.dataset.noise();
    if noise.kind == NoiseKind::Synthetic && noise.p > 0.0 {
        train = train.with_label_noise(noise.p, &mut rng)?;
    }
    Ok(SeedData { train, test, val })
}

fn split_two<R: rand::Rng + ?Sized>(
    ds: &LabeledDataset,
    fractions: &[f64],
    rng: &mut R,
) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
    let mut parts = datasets::split(ds, fractions, rng)?.into_iter();
    let train = parts.next().expect("at least one part");
    Ok((train, parts.next()))
}

pub fn initial_model(cfg: &ExperimentConfig, data: &SeedData, seed: u64) -> Result<Model> {
    let dim = data.train.dim();
    match &cfg.model {
        ModelConfig::Logistic => {
            if data.train.num_classes != 2 {
                return Err(Error::config("the logistic model needs a two-class dataset"));
            }
            Ok(Model::Logistic(models::LinearModel::zeros(dim)))
        }
        ModelConfig::Mlp { hidden } => {
            let classes = data
                .train
                .num_classes
                .max(data.test.as_ref().map_or(0, |t| t.num_classes));
            let dims: Vec<usize> = std::iter::once(dim).chain(hidden.iter().copied()).chain([classes]).collect();
            Ok(Model::Mlp(SoftmaxMlp::init(dims, &mut stream(seed, Stream::Init))?))
        }
    }
}

pub fn resolve_q(cfg: &ExperimentConfig, n_train: usize) -> Result<f64> {
    let q = match cfg.scheduler.q {
        StabilizerMode::Fixed { value } => value,
        StabilizerMode::EpochsMultiple { factor } => factor * cfg.optimizer.epochs() as f64,
        StabilizerMode::TrainFraction { fraction } => (fraction * n_train as f64).floor(),
    };
    if !(q >= 2.0) {
        return Err(Error::config(format!("resolved q = {q} is below 2")));
    }
    Ok(q)
}

fn setup<'a>(cfg: &ExperimentConfig, data: &'a SeedData, scheme: Scheme, sched: SchedulerConfig, seed: u64) -> TrainSetup<'a> {
    TrainSetup {
        train: &data.train,
        test: data.test.as_ref(),
        val: data.val.as_ref(),
        optimizer: cfg.optimizer,
        scheme,
        scheduler: sched,
        eval_threshold: cfg.eval_threshold,
        seed,
        checkpoint_stride: cfg.checkpoint_stride,
    }
}

/// Threshold resolution; for the PD mode this trains a vanilla pre-run.
pub fn resolve_e(cfg: &ExperimentConfig, data: &SeedData, seed: u64, q: f64) -> Result<(f64, Option<pd::PdResult>)> {
    match cfg.scheduler.e {
        ThresholdMode::Fixed { value } => Ok((value, None)),
        ThresholdMode::DefaultRule => Ok((datasets::default_threshold(cfg.dataset.noise())?, None)),
        ThresholdMode::PdEstimated => {
            // The pre-run's threshold is irrelevant: vanilla never moves the weights.
            let sched = SchedulerConfig::new(std::f64::consts::LN_2, q)?;
            let pre = models::train(initial_model(cfg, data, seed)?, &setup(cfg, data, Scheme::Vanilla, sched, seed))?;
            let series = CheckpointSeries::new(pre.checkpoints, Some(pre.checkpoint_losses))?;
            let result = pd::analyze(&series);
            let e = result.e_estimate.expect("series carries losses");
            if !(e > 0.0) {
                return Err(Error::Numeric(format!("PD-estimated threshold {e} is not positive")));
            }
            Ok((e, Some(result)))
        }
    }
}

/// Everything one seed produces, before it is written to disk.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub data: SeedData,
    pub e: f64,
    pub q: f64,
    pub pd: Option<pd::PdResult>,
    pub outcome: TrainOutcome,
    pub bounds: BoundReport,
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let data = build_data(cfg, seed)?;
    let q = resolve_q(cfg, data.train.len())?;
    let (e, pd) = resolve_e(cfg, &data, seed, q)?;
    let sched = SchedulerConfig::new(e, q)?
        .with_tau(cfg.scheduler.tau)?
        .with_rho_clip(cfg.scheduler.rho_clip.0, cfg.scheduler.rho_clip.1)?;
    let model = initial_model(cfg, &data, seed)?;
    let outcome = models::train(model, &setup(cfg, &data, cfg.scheme(), sched, seed))?;
    let bounds = verify_trace(&outcome.trace)?;
    Ok(SeedRun {
        seed,
        data,
        e,
        q,
        pd,
        outcome,
        bounds,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub eprop_train: f64,
    pub eprop_test: Option<f64>,
    pub tacc_train: f64,
    pub tacc_test: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub e: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pd_t_star: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub converged_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sapw_rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bounds_passed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_metrics: Option<FinalMetrics>,
    #[serde(default)]
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        (!values.is_empty()).then(|| Self {
            mean: numeric::mean(values),
            std: numeric::std_dev(values),
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub variant: String,
    pub config: String,
    pub seeds: Vec<SeedSummary>,
    pub eprop_train: Option<MeanStd>,
    pub eprop_test: Option<MeanStd>,
    pub tacc_train: Option<MeanStd>,
    pub tacc_test: Option<MeanStd>,
    pub failed_seeds: Vec<u64>,
}

impl ExperimentSummary {
    pub fn all_ok(&self) -> bool {
        self.failed_seeds.is_empty()
    }
}

fn final_metrics(run: &SeedRun) -> FinalMetrics {
    let last = run.outcome.records.last();
    FinalMetrics {
        eprop_train: last.map_or(f64::NAN, |r| r.eprop_train),
        eprop_test: last.and_then(|r| r.eprop_test),
        tacc_train: last.map_or(f64::NAN, |r| r.tacc_train),
        tacc_test: last.and_then(|r| r.tacc_test),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_epochs_csv(path: &Path, outcome: &TrainOutcome) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EPOCH_COLUMNS)?;
    for r in &outcome.records {
        w.write_record([
            r.epoch.to_string(),
            r.rho_raw.to_string(),
            r.rho_clipped.to_string(),
            r.gamma.to_string(),
            r.alpha.to_string(),
            r.z.to_string(),
            r.a_k.to_string(),
            r.l_apw.to_string(),
            r.l_mean.to_string(),
            r.eprop_train.to_string(),
            fmt_opt(r.eprop_test),
            r.tacc_train.to_string(),
            fmt_opt(r.tacc_test),
            u8::from(r.clipped).to_string(),
            r.w_min.to_string(),
            r.w_max.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all((serde_json::to_string_pretty(value)? + "\n").as_bytes())?;
    Ok(())
}

/// Writes one seed's artifacts; returns the file names written.
pub fn write_seed_artifacts(dir: &Path, run: &SeedRun) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let o = &run.outcome;
    write_epochs_csv(&dir.join(EPOCHS_FILE), o)?;
    write_json(&dir.join(TRACE_FILE), &o.trace)?;
    write_json(&dir.join(BOUNDS_FILE), &run.bounds)?;
    write_json(&dir.join(MODEL_FILE), &o.model)?;
    let mut w = csv::Writer::from_path(dir.join(WEIGHTS_FILE))?;
    w.write_record(["index", "weight"])?;
    for (i, v) in o.weights.as_slice().iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    datasets::write_csv(&run.data.train, &dir.join(TRAIN_DATA_FILE))?;
    let mut files: Vec<String> = [EPOCHS_FILE, TRACE_FILE, BOUNDS_FILE, MODEL_FILE, WEIGHTS_FILE, TRAIN_DATA_FILE]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if let Some(test) = &run.data.test {
        datasets::write_csv(test, &dir.join(TEST_DATA_FILE))?;
        files.push(TEST_DATA_FILE.into());
    }
    if !o.checkpoints.is_empty() {
        pd::write_checkpoints(&dir.join(CHECKPOINTS_FILE), &o.checkpoints)?;
        pd::write_loss_column(&dir.join(CHECKPOINT_LOSSES_FILE), &o.checkpoint_losses)?;
        files.push(CHECKPOINTS_FILE.into());
        files.push(CHECKPOINT_LOSSES_FILE.into());
    }
    Ok(files)
}

pub fn seed_dir_name(seed: u64) -> String {
    format!("seed-{seed}")
}

fn summarize_seed(seed: u64, result: &Result<(SeedRun, Vec<String>)>) -> SeedSummary {
    match result {
        Ok((run, files)) => SeedSummary {
            seed,
            ok: true,
            error: None,
            dir: Some(seed_dir_name(seed)),
            e: Some(run.e),
            q: Some(run.q),
            pd_t_star: run.pd.as_ref().map(|p| p.t_star),
            epochs: Some(run.outcome.records.len()),
            converged_epoch: run.outcome.converged_epoch,
            best_epoch: run.outcome.best_epoch,
            sapw_rounds: run.outcome.sapw_rounds,
            bounds_passed: Some(run.bounds.passed()),
            final_metrics: Some(final_metrics(run)),
            files: files.iter().map(|f| format!("{}/{f}", seed_dir_name(seed))).collect(),
        },
        Err(e) => SeedSummary {
            seed,
            ok: false,
            error: Some(e.to_string()),
            dir: None,
            e: None,
            q: None,
            pd_t_star: None,
            epochs: None,
            converged_epoch: None,
            best_epoch: None,
            sapw_rounds: None,
            bounds_passed: None,
            final_metrics: None,
            files: vec![],
        },
    }
}

/// Aggregates seed summaries in the given (seed) order.
pub fn aggregate(variant: String, seeds: Vec<SeedSummary>) -> ExperimentSummary {
    let ok: Vec<&FinalMetrics> = seeds.iter().filter_map(|s| s.final_metrics.as_ref()).collect();
    let collect = |f: &dyn Fn(&FinalMetrics) -> Option<f64>| -> Option<MeanStd> {
        MeanStd::of(&ok.iter().filter_map(|m| f(m)).collect::<Vec<_>>())
    };
    ExperimentSummary {
        variant,
        config: CONFIG_FILE.into(),
        eprop_train: collect(&|m| Some(m.eprop_train)),
        eprop_test: collect(&|m| m.eprop_test),
        tacc_train: collect(&|m| Some(m.tacc_train)),
        tacc_test: collect(&|m| m.tacc_test),
        failed_seeds: seeds.iter().filter(|s| !s.ok).map(|s| s.seed).collect(),
        seeds,
    }
}

/// Runs every seed (in parallel), writes per-seed directories, the config copy and
/// `summary.json` under `out_dir`. A failing seed is recorded and the others proceed.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentSummary> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(CONFIG_FILE), cfg.to_json_pretty()?)?;
    let results: Vec<Result<(SeedRun, Vec<String>)>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = run_seed(cfg, seed)?;
            let files = write_seed_artifacts(&out_dir.join(seed_dir_name(seed)), &run)?;
            let mut summary = summarize_seed(seed, &Ok((run.clone(), files.clone())));
            summary.files = files.clone();
            summary.dir = None;
            write_json(&out_dir.join(seed_dir_name(seed)).join(SEED_SUMMARY_FILE), &summary)?;
            Ok((run, files))
        })
        .collect();
    let seeds = cfg
        .seeds
        .iter()
        .zip(&results)
        .map(|(&seed, r)| summarize_seed(seed, r))
        .collect();
    let summary = aggregate(cfg.variant.to_string(), seeds);
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Reads the per-epoch CSV back as named columns.
pub fn read_epochs_csv(path: &Path) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut cols: Vec<(String, Vec<Option<f64>>)> = header.into_iter().map(|h| (h, vec![])).collect();
    for rec in r.records() {
        let rec = rec?;
        for (k, field) in rec.iter().enumerate() {
            let v = if field.is_empty() {
                None
            } else {
                Some(field.parse::<f64>().map_err(|e| Error::parse(path, format!("{field:?}: {e}")))?)
            };
            cols[k].1.push(v);
        }
    }
    Ok(cols)
}

pub fn column<'a>(cols: &'a [(String, Vec<Option<f64>>)], name: &str, path: &Path) -> Result<&'a [Option<f64>]> {
    cols.iter()
        .find(|(n, _)| n == name)
        .map(|(_, v)| v.as_slice())
        .ok_or_else(|| Error::parse(path, format!("missing column {name:?}")))
}

pub fn seed_dirs(experiment_dir: &Path) -> Result<Vec<PathBuf>> {
    let summary_path = experiment_dir.join(SUMMARY_FILE);
    if !summary_path.exists() {
        return Err(Error::MissingArtifact(summary_path));
    }
    let summary: ExperimentSummary = serde_json::from_str(&fs::read_to_string(&summary_path)?)
        .map_err(|e| Error::parse(&summary_path, e.to_string()))?;
    Ok(summary
        .seeds
        .iter()
        .filter_map(|s| s.dir.as_ref().map(|d| experiment_dir.join(d)))
        .collect())
}
