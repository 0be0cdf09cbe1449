use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datasets::{BlobsSpec, GaussianSpec, NoiseSpec};
use crate::error::{Error, Result};
use crate::models::{OptimizerConfig, Scheme};
use crate::variants::{CompletionMode, DEFAULT_SAMPLING_FRACTION};
use crate::weighting::WeightingMode;

/// Environment variable naming the directory relative output paths resolve against.
pub const OUTPUT_ROOT_ENV: &str = "APW_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Gaussian2 {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_std")]
        std: f64,
        #[serde(default = "default_center_range")]
        center_range: (f64, f64),
        #[serde(default = "default_attempts")]
        max_attempts: usize,
        #[serde(default = "default_split")]
        split: Vec<f64>,
        #[serde(default)]
        noise: NoiseSpec,
    },
    Blobs {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_blob_std")]
        std: f64,
        #[serde(default = "default_blob_range")]
        center_range: (f64, f64),
        #[serde(default = "default_split")]
        split: Vec<f64>,
        #[serde(default)]
        noise: NoiseSpec,
    },
    File {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
        /// Used only when no test file is given.
        #[serde(default = "default_split")]
        split: Vec<f64>,
        #[serde(default)]
        noise: NoiseSpec,
    },
}

fn default_n() -> usize {
    600
}
fn default_dim() -> usize {
    2
}
fn default_std() -> f64 {
    1.5
}
fn default_center_range() -> (f64, f64) {
    (-10.0, 10.0)
}
fn default_attempts() -> usize {
    crate::datasets::DEFAULT_ATTEMPT_CAP
}
fn default_split() -> Vec<f64> {
    vec![0.7, 0.3]
}
fn default_classes() -> usize {
    3
}
fn default_blob_std() -> f64 {
    BlobsSpec::default().std
}
fn default_blob_range() -> (f64, f64) {
    BlobsSpec::default().center_range
}

impl DatasetConfig {
    pub fn noise(&self) -> NoiseSpec {
        match self {
            DatasetConfig::Gaussian2 { noise, .. }
            | DatasetConfig::Blobs { noise, .. }
            | DatasetConfig::File { noise, .. } => *noise,
        }
    }

    pub fn split(&self) -> &[f64] {
        match self {
            DatasetConfig::Gaussian2 { split, .. }
            | DatasetConfig::Blobs { split, .. }
            | DatasetConfig::File { split, .. } => split,
        }
    }

    pub fn gaussian_spec(&self) -> Option<GaussianSpec> {
        match *self {
            DatasetConfig::Gaussian2 {
                n,
                dim,
                std,
                center_range,
                max_attempts,
                ..
            } => Some(GaussianSpec {
                n,
                dim,
                std,
                center_range,
                max_attempts,
            }),
            _ => None,
        }
    }

    pub fn blobs_spec(&self) -> Option<BlobsSpec> {
        match *self {
            DatasetConfig::Blobs {
                n,
                dim,
                classes,
                std,
                center_range,
                ..
            } => Some(BlobsSpec {
                n,
                dim,
                classes,
                std,
                center_range,
            }),
            _ => None,
        }
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Gaussian2 {
            n: default_n(),
            dim: default_dim(),
            std: default_std(),
            center_range: default_center_range(),
            max_attempts: default_attempts(),
            split: default_split(),
            noise: NoiseSpec::NONE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Logistic,
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
    },
}

fn default_hidden() -> Vec<usize> {
    vec![crate::models::DEFAULT_HIDDEN]
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Logistic
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdMode {
    Fixed { value: f64 },
    /// From the dataset's noise specification.
    DefaultRule,
    /// Loss at the transition detected on a vanilla pre-run.
    PdEstimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum StabilizerMode {
    Fixed { value: f64 },
    /// `factor` times the number of training epochs.
    EpochsMultiple { factor: f64 },
    /// `floor(fraction * N_train)`.
    TrainFraction { fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSpec {
    #[serde(default = "default_e")]
    pub e: ThresholdMode,
    #[serde(default = "default_q")]
    pub q: StabilizerMode,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_clip")]
    pub rho_clip: (f64, f64),
}

fn default_e() -> ThresholdMode {
    ThresholdMode::DefaultRule
}
fn default_q() -> StabilizerMode {
    StabilizerMode::EpochsMultiple { factor: 1.0 }
}
fn default_tau() -> f64 {
    0.5
}
fn default_clip() -> (f64, f64) {
    (1e-4, 1.0 - 1e-4)
}

impl Default for SchedulerSpec {
    fn default() -> Self {
        Self {
            e: default_e(),
            q: default_q(),
            tau: default_tau(),
            rho_clip: default_clip(),
        }
    }
}

/// Training variant, written as `vanilla`, `apw-e`, `s-apw-a`, `m-apw-ei`, `mixup`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    Vanilla,
    Apw(WeightingMode),
    Sapw(CompletionMode),
    Mapw(WeightingMode),
    Mixup,
}

fn mode_suffix(m: WeightingMode) -> String {
    m.to_string().to_ascii_lowercase()
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Vanilla => f.write_str("vanilla"),
            Variant::Apw(m) => write!(f, "apw-{}", mode_suffix(*m)),
            Variant::Sapw(CompletionMode::Average) => f.write_str("s-apw-a"),
            Variant::Sapw(CompletionMode::Weighted(m)) => write!(f, "s-apw-{}", mode_suffix(*m)),
            Variant::Mapw(m) => write!(f, "m-apw-{}", mode_suffix(*m)),
            Variant::Mixup => f.write_str("mixup"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let parsed = match lower.as_str() {
            "vanilla" => Some(Variant::Vanilla),
            "mixup" => Some(Variant::Mixup),
            _ => {
                if let Some(rest) = lower.strip_prefix("s-apw-") {
                    rest.parse().ok().map(Variant::Sapw)
                } else if let Some(rest) = lower.strip_prefix("m-apw-") {
                    rest.parse().ok().map(Variant::Mapw)
                } else if let Some(rest) = lower.strip_prefix("apw-") {
                    rest.parse().ok().map(Variant::Apw)
                } else {
                    None
                }
            }
        };
        parsed.ok_or_else(|| Error::config(format!("unknown variant {s:?}")))
    }
}

impl TryFrom<String> for Variant {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("unknown variant {s:?}"))
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub scheduler: SchedulerSpec,
    pub variant: Variant,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Threshold for reported E-Prop.
    #[serde(default = "default_eval_threshold")]
    pub eval_threshold: f64,
    #[serde(default = "default_rs")]
    pub sapw_rs: f64,
    #[serde(default = "default_mixup_alpha")]
    pub mixup_alpha: f64,
    #[serde(default = "default_stride")]
    pub checkpoint_stride: usize,
    /// Holds out `val_fraction` of the training split and keeps the epoch with the
    /// lowest mean validation loss.
    #[serde(default)]
    pub select_best_by_val: bool,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_eval_threshold() -> f64 {
    std::f64::consts::LN_2
}
fn default_rs() -> f64 {
    DEFAULT_SAMPLING_FRACTION
}
fn default_mixup_alpha() -> f64 {
    1.0
}
fn default_stride() -> usize {
    1
}
fn default_val_fraction() -> f64 {
    0.1
}

impl ExperimentConfig {
    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::config(e.to_string()))?;
        cfg.validated()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_value(parse_json(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_overrides(path, &[])
    }

    /// Reads a config file and applies `key.path=value` overrides before validation.
    pub fn load_with_overrides(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        Self::assemble(Some(path), overrides)
    }

    /// Starts from a config file (or an empty document) and applies overrides.
    pub fn assemble(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        Self::assemble_with_defaults(path, &[], overrides)
    }

    /// Like [`ExperimentConfig::assemble`], but first fills top-level keys missing
    /// from the document with `defaults`.
    pub fn assemble_with_defaults(
        path: Option<&Path>,
        defaults: &[(String, String)],
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut value = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
                parse_json(&text)?
            }
            None => Value::Object(Default::default()),
        };
        for (k, v) in defaults {
            if value.get(k.as_str()).is_none() {
                apply_override(&mut value, k, v)?;
            }
        }
        for (k, v) in overrides {
            apply_override(&mut value, k, v)?;
        }
        Self::from_value(value)
    }

    pub fn validated(self) -> Result<Self> {
        if self.seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seed list contains duplicates"));
        }
        self.optimizer.validated()?;
        if !(self.eval_threshold > 0.0) {
            return Err(Error::config("eval_threshold must be > 0"));
        }
        if !(self.sapw_rs > 0.0 && self.sapw_rs <= 1.0) {
            return Err(Error::config("sapw_rs must lie in (0, 1]"));
        }
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::config("mixup_alpha must be > 0"));
        }
        if self.checkpoint_stride == 0 {
            return Err(Error::config("checkpoint_stride must be >= 1"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config("val_fraction must lie in (0, 1)"));
        }
        NoiseSpec::new(self.dataset.noise().kind, self.dataset.noise().p)?;
        if let ThresholdMode::Fixed { value } = self.scheduler.e {
            if !(value > 0.0) {
                return Err(Error::config("fixed threshold must be > 0"));
            }
        }
        match self.scheduler.q {
            StabilizerMode::Fixed { value } if !(value >= 2.0) => {
                return Err(Error::config("fixed q must be >= 2"))
            }
            StabilizerMode::EpochsMultiple { factor } if !(factor > 0.0) => {
                return Err(Error::config("q factor must be > 0"))
            }
            StabilizerMode::TrainFraction { fraction } if !(fraction > 0.0) => {
                return Err(Error::config("q fraction must be > 0"))
            }
            _ => {}
        }
        if matches!(self.model, ModelConfig::Logistic) {
            if let DatasetConfig::Blobs { classes, .. } = self.dataset {
                if classes != 2 {
                    return Err(Error::config("the logistic model needs a two-class dataset"));
                }
            }
        }
        Ok(self)
    }

    pub fn scheme(&self) -> Scheme {
        match self.variant {
            Variant::Vanilla => Scheme::Vanilla,
            Variant::Apw(mode) => Scheme::Apw { mode },
            Variant::Sapw(completion) => Scheme::Sapw {
                completion,
                r_s: self.sapw_rs,
            },
            Variant::Mapw(mode) => Scheme::Mapw { mode },
            Variant::Mixup => Scheme::Mixup {
                alpha: self.mixup_alpha,
            },
        }
    }

    /// Output directory, resolved against [`OUTPUT_ROOT_ENV`] when relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub fn resolve_output(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn parse_json(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::config(format!("invalid JSON: {e}")))
}

/// Sets `a.b.c = raw` in a JSON document. `raw` is parsed as JSON when possible and
/// taken as a string otherwise; a comma-separated list of integers becomes an array.
pub fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| {
        let parts: Option<Vec<Value>> = raw
            .split(',')
            .map(|p| p.trim().parse::<u64>().ok().map(Value::from))
            .collect();
        match parts {
            Some(list) if raw.contains(',') => Value::Array(list),
            _ => Value::String(raw.to_string()),
        }
    });
    let mut cursor = doc;
    let segments: Vec<&str> = key.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        if seg.is_empty() {
            return Err(Error::config(format!("bad override key {key:?}")));
        }
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("override {key:?}: {seg:?} is not inside an object")))?;
        if i + 1 == segments.len() {
            obj.insert(seg.to_string(), value);
            return Ok(());
        }
        cursor = obj
            .entry(seg.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_roundtrip() {
        for name in [
            "vanilla", "apw-e", "apw-i", "apw-ei", "s-apw-a", "s-apw-e", "s-apw-i", "s-apw-ei", "m-apw-e",
            "m-apw-i", "m-apw-ei", "mixup",
        ] {
            let v: Variant = name.parse().unwrap();
            assert_eq!(v.to_string(), name);
        }
        assert!("apw-x".parse::<Variant>().is_err());
        assert!("m-apw-a".parse::<Variant>().is_err());
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"variant": "apw-e", "seeds": [1]}"#).unwrap();
        assert_eq!(cfg.scheduler.tau, 0.5);
        assert_eq!(cfg.optimizer.max_iter, 150);
        assert!(matches!(cfg.dataset, DatasetConfig::Gaussian2 { n: 600, .. }));
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            r#"{"variant": "apw-e", "seeds": []}"#,
            r#"{"variant": "apw-e", "seeds": [1], "bogus": 3}"#,
            r#"{"variant": "apw-e", "seeds": [1], "scheduler": {"tau": 0.5, "extra": 1}}"#,
            r#"{"variant": "nope", "seeds": [1]}"#,
            r#"{"variant": "apw-e", "seeds": [1, 1]}"#,
            r#"{"seeds": [1]}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn overrides_patch_nested_keys() {
        let mut v: Value = serde_json::from_str(r#"{"variant": "apw-e", "seeds": [1]}"#).unwrap();
        apply_override(&mut v, "scheduler.tau", "0.3").unwrap();
        apply_override(&mut v, "seeds", "4,5,6").unwrap();
        apply_override(&mut v, "variant", "vanilla").unwrap();
        let cfg = ExperimentConfig::from_value(v).unwrap();
        assert_eq!(cfg.scheduler.tau, 0.3);
        assert_eq!(cfg.seeds, vec![4, 5, 6]);
        assert_eq!(cfg.variant, Variant::Vanilla);
    }
}
