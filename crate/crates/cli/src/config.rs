use std::path::Path;

use raman_n2n::baselines::{BaselineSpec, Method};
use raman_n2n::clustering::KMeansParams;
use raman_n2n::metrics::DEFAULT_SSIM_WINDOW;
use raman_n2n::preprocess::PreprocessConfig;
use raman_n2n::synth::PeakRanges;
use raman_n2n::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Root seed; every stage derives its own stream from it. Overrides
    /// `train.seed`.
    pub seed: u64,
    /// Overrides `train.deterministic`.
    pub deterministic: bool,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub clustering: ClusteringConfig,
    pub baselines: BaselineConfig,
    pub noise_scan: NoiseScanConfig,
    pub report: ReportConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            deterministic: false,
            synth: SynthConfig::default(),
            preprocess: PreprocessConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            clustering: ClusteringConfig::default(),
            baselines: BaselineConfig::default(),
            noise_scan: NoiseScanConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub axis_start: f64,
    pub axis_step: f64,
    pub phases: usize,
    pub peaks_per_phase: usize,
    pub peaks: PeakRanges,
    /// Largest allowed cosine similarity between two phase templates.
    pub max_similarity: f64,
    pub blobs: usize,
    pub repetitions: usize,
    pub integration_time_ms: f64,
    pub shot_scale: f64,
    pub read_sigma: f64,
    pub flicker_amp: f64,
    pub background: Vec<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rows: 10,
            cols: 10,
            channels: 256,
            axis_start: 600.0,
            axis_step: 2.0,
            phases: 4,
            peaks_per_phase: 5,
            peaks: PeakRanges { width: (12.0, 40.0), amplitude: (0.2, 1.0) },
            max_similarity: 0.35,
            blobs: 12,
            repetitions: 20,
            integration_time_ms: 5.0,
            shot_scale: 1.0,
            read_sigma: 7.3,
            flicker_amp: 0.0,
            background: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub ssim_window: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { ssim_window: DEFAULT_SSIM_WINDOW }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    /// Fixed cluster count; `None` picks the elbow of `k_min..=k_max`.
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub kmeans: KMeansParams,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig { k: Some(4), k_min: 2, k_max: 10, kmeans: KMeansParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub methods: Vec<Method>,
    /// Explicit search grid; empty means the built-in grid of each method.
    pub grid: Vec<BaselineSpec>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { methods: vec![Method::Savgol, Method::Fourier, Method::Wavelet], grid: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct NoiseScanConfig {
    /// Empty means powers of two up to half the repetition count.
    pub block_sizes: Vec<usize>,
    /// Fit only this many leading points and report the last-point departure.
    pub fit_points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub map_points: usize,
    pub short_ms: f64,
    pub long_ms: f64,
    pub train_seconds: f64,
    pub validation_seconds: f64,
    pub compute_seconds: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            map_points: 64_000,
            short_ms: 5.0,
            long_ms: 500.0,
            train_seconds: 70.4,
            validation_seconds: 60.0,
            compute_seconds: 37.12,
        }
    }
}

/// Every key of `given` must exist in `template`. A `null` template leaf
/// (an unset option) accepts any subtree.
fn check_known(given: &Value, template: &Value, path: &str) -> Result<(), CliError> {
    if let (Value::Object(g), Value::Object(t)) = (given, template) {
        for (k, v) in g {
            let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            match t.get(k) {
                Some(tv) => check_known(v, tv, &sub)?,
                None => return Err(CliError::Config(format!("unknown config key `{sub}`"))),
            }
        }
    }
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("`{key}`: `{}` is not a section", parts[..i].join("."))))?;
        if last {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Err(CliError::Config("empty override key".into()))
}

/// Defaults, then the optional JSON file, then `key=value` overrides.
pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<PipelineConfig, CliError> {
    let template = serde_json::to_value(PipelineConfig::default()).expect("config serializes");
    let mut value = template.clone();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let given: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        check_known(&given, &template, "")?;
        merge(&mut value, given);
    }
    for (k, v) in overrides {
        let mut probe = Value::Object(Default::default());
        set_path(&mut probe, k, Value::Null)?;
        check_known(&probe, &template, "")?;
        set_path(&mut value, k, parse_value(v))?;
    }
    let mut cfg: PipelineConfig =
        serde_json::from_value(value).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
    cfg.train.seed = cfg.seed;
    cfg.train.deterministic = cfg.deterministic;
    cfg.train.validate().map_err(CliError::from)?;
    Ok(cfg)
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}
