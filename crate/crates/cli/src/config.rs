//! Run configuration: one JSON file, every field optional, flags layered on
//! top. Each command writes the fully resolved form back out as
//! `config.json`, which can be passed to `--config` to reproduce the run.

use std::fs;
use std::path::{Path, PathBuf};

use locenc::encoders::EncoderKind;
use locenc::geobias::LowPerfRule;
use locenc::locbench::{NetConfig, SynthKind, SynthParams};
use locenc::rng::sub_seed;
use locenc::{EncoderSpec, GeoBiasConfig, Task, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskName {
    Classify,
    Regress,
}

impl From<TaskName> for Task {
    fn from(t: TaskName) -> Task {
        match t {
            TaskName::Classify => Task::Classification,
            TaskName::Regress => Task::Regression,
        }
    }
}

impl From<Task> for TaskName {
    fn from(t: Task) -> TaskName {
        match t {
            Task::Classification => TaskName::Classify,
            Task::Regression => TaskName::Regress,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// `classify` or `regress`; inferred from the inputs when unset.
    pub task: Option<TaskName>,
    /// Root of every random stream; sections derive named sub-seeds.
    pub seed: u64,
    pub encoder: EncoderSection,
    pub nn: NetConfig,
    pub train: TrainSection,
    pub geobias: GeoBiasSection,
    pub synth: SynthSection,
    pub paths: Paths,
}

/// Unset fields take the per-kind defaults of [`EncoderSpec::new`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub kind: Option<EncoderKind>,
    pub scales: Option<usize>,
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    pub w_dim: Option<usize>,
    pub sigma: Option<f64>,
    pub delta: Option<f64>,
    pub max_degree: Option<usize>,
    pub cell_deg: Option<f64>,
}

impl EncoderSection {
    pub fn resolve(&mut self, seed: u64) -> Result<EncoderSpec, CliError> {
        let mut s = EncoderSpec::new(self.kind.unwrap_or(EncoderKind::SphereC));
        s.scales = self.scales.unwrap_or(s.scales);
        s.r_min = self.r_min.unwrap_or(s.r_min);
        s.r_max = self.r_max.unwrap_or(s.r_max);
        s.w_dim = self.w_dim.unwrap_or(s.w_dim);
        s.sigma = self.sigma.unwrap_or(s.sigma);
        s.delta = self.delta.unwrap_or(s.delta);
        s.max_degree = self.max_degree.unwrap_or(s.max_degree);
        s.cell_deg = self.cell_deg.unwrap_or(s.cell_deg);
        s.seed = sub_seed(seed, "anchors");
        s.validate().map_err(|e| CliError::Usage(format!("encoder: {e}")))?;
        *self = Self::echo(&s);
        Ok(s)
    }

    pub fn echo(s: &EncoderSpec) -> Self {
        EncoderSection {
            kind: Some(s.kind),
            scales: Some(s.scales),
            r_min: Some(s.r_min),
            r_max: Some(s.r_max),
            w_dim: Some(s.w_dim),
            sigma: Some(s.sigma),
            delta: Some(s.delta),
            max_degree: Some(s.max_degree),
            cell_deg: Some(s.cell_deg),
        }
    }
}

/// Optimizer settings; the seed comes from the top-level seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub dropout_p: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            weight_decay: t.weight_decay,
            dropout_p: t.dropout_p,
        }
    }
}

impl TrainSection {
    pub fn resolve(&self, seed: u64) -> Result<TrainConfig, CliError> {
        let t = TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            seed: sub_seed(seed, "train"),
            dropout_p: self.dropout_p,
        };
        t.validate().map_err(|e| CliError::Usage(format!("train: {e}")))?;
        Ok(t)
    }
}

/// Unset `radius_km` and `low_perf_rule` follow the task: 100 km and
/// `hit1_miss` for classification, 1000 km and `abs_err_over_sigma(1)` for
/// regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeoBiasSection {
    pub radius_km: Option<f64>,
    pub k: usize,
    pub n_permutations: usize,
    pub background_spacing_km: Option<f64>,
    pub p_min: f64,
    pub max_centers: Option<usize>,
    pub low_perf_rule: Option<LowPerfRule>,
}

impl Default for GeoBiasSection {
    fn default() -> Self {
        let g = GeoBiasConfig::classification();
        GeoBiasSection {
            radius_km: None,
            k: g.k,
            n_permutations: g.n_permutations,
            background_spacing_km: None,
            p_min: g.p_min,
            max_centers: None,
            low_perf_rule: None,
        }
    }
}

impl GeoBiasSection {
    pub fn resolve(&mut self, task: Task, seed: u64) -> Result<GeoBiasConfig, CliError> {
        let base = match task {
            Task::Classification => GeoBiasConfig::classification(),
            Task::Regression => GeoBiasConfig::regression(),
        };
        let g = GeoBiasConfig {
            radius_km: self.radius_km.unwrap_or(base.radius_km),
            k: self.k,
            n_permutations: self.n_permutations,
            seed: sub_seed(seed, "permutations"),
            background_spacing_km: self.background_spacing_km,
            p_min: self.p_min,
            max_centers: self.max_centers,
            low_perf_rule: self.low_perf_rule.unwrap_or(base.low_perf_rule),
        };
        g.validate().map_err(|e| CliError::Usage(format!("geobias: {e}")))?;
        self.radius_km = Some(g.radius_km);
        self.low_perf_rule = Some(g.low_perf_rule);
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub kind: SynthKind,
    pub n: usize,
    /// When set, also writes simulated image log-probabilities.
    pub image_accuracy: Option<f64>,
    pub params: SynthParams,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            kind: SynthKind::SectorClasses,
            n: 1000,
            image_accuracy: None,
            params: SynthParams::default(),
        }
    }
}

/// Input and output locations. Unset inputs default to the files earlier
/// commands write into the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub image_logprobs: Option<PathBuf>,
    pub image_embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.into()))?;
        text.push('\n');
        let p = dir.join("config.json");
        fs::write(&p, text).map_err(|e| CliError::Runtime(locenc::Error::Io { path: p, source: e }))
    }
}
