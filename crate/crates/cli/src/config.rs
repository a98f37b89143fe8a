//! Experiment configuration: a JSON file plus command-line overrides.

use crate::io::Failure;
use gradsel::selection::Method;
use gradsel::tasks::{Family, NoiseKind, TaskSpec, TrainingTask};
use gradsel::{AnchorPolicy, SelectionConfig, TokenFeatures, DISTANCE_BUCKETS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const OUT_DIR_ENV: &str = "GRADSEL_OUT_DIR";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Selection knobs; unset values fall back to [`SelectionConfig::defaults`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionOptions {
    pub k: usize,
    pub m: Option<usize>,
    pub alpha: Option<usize>,
    pub d_proj: Option<usize>,
    pub t_start: Option<usize>,
    pub k_prefilter: Option<usize>,
    pub score_threshold: Option<f64>,
    pub anchor_policy: AnchorPolicy,
    pub identity_projection: bool,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            k: 25,
            m: None,
            alpha: None,
            d_proj: None,
            t_start: None,
            k_prefilter: None,
            score_threshold: None,
            anchor_policy: AnchorPolicy::Random,
            identity_projection: false,
        }
    }
}

impl SelectionOptions {
    pub fn resolve(&self, n_demo: usize, k: usize, seed: u64) -> Result<SelectionConfig, Failure> {
        let mut c = SelectionConfig::defaults(n_demo, k, seed);
        if let Some(v) = self.m {
            c.m = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.d_proj {
            c.d_proj = v;
        }
        if let Some(v) = self.t_start {
            c.t_start = v;
        }
        if let Some(v) = self.k_prefilter {
            c.k_prefilter = v;
        }
        c.score_threshold = self.score_threshold;
        c.anchor_policy = self.anchor_policy;
        c.identity_projection = self.identity_projection;
        Ok(c.checked(n_demo)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Affine,
    TwoLayerRelu,
    LinearAttention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingOptions {
    pub model_kind: ModelKind,
    pub task: TrainingTask,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub k_max: usize,
    pub features: TokenFeatures,
    /// Key dimension of the attention model; defaults to d_in.
    pub key_dim: Option<usize>,
    /// Hidden width of the two-layer ReLU model.
    pub hidden: usize,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        Self {
            model_kind: ModelKind::LinearAttention,
            task: TrainingTask::Mixture,
            steps: 6000,
            batch_size: 64,
            learning_rate: 0.01,
            k_max: 50,
            features: TokenFeatures::Interaction,
            key_dim: None,
            hidden: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetMode {
    /// Independent uniform k-subsets around a uniform anchor.
    Random,
    /// 1..=max_swaps in-place swaps of the anchor.
    Swap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateOptions {
    pub ks: Vec<usize>,
    pub n_subsets: usize,
    pub mode: SubsetMode,
    pub max_swaps: usize,
    pub buckets: Vec<f64>,
    /// Emit the per-subset table alongside the bucket and RSS tables.
    pub per_subset: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            ks: vec![20, 25, 30, 40, 50],
            n_subsets: 200,
            mode: SubsetMode::Random,
            max_swaps: 4,
            buckets: DISTANCE_BUCKETS.to_vec(),
            per_subset: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateOptions {
    pub methods: Vec<Method>,
    pub ks: Vec<usize>,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self { methods: vec![Method::GeRe, Method::TopK, Method::Random], ks: vec![20, 25, 30] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HessianOptions {
    pub sigma: f64,
    pub n_samples: usize,
}

impl Default for HessianOptions {
    fn default() -> Self {
        Self { sigma: 1e-2, n_samples: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: Paths,
    /// Task generator settings. The task seed is always the global seed.
    pub task: TaskSpec,
    pub selection: SelectionOptions,
    /// Method used by `select`.
    pub method: Method,
    pub training: TrainingOptions,
    pub estimate: EstimateOptions,
    pub evaluate: EvaluateOptions,
    pub hessian: HessianOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            task: TaskSpec::mixture(0),
            selection: SelectionOptions::default(),
            method: Method::GeRe,
            training: TrainingOptions::default(),
            estimate: EstimateOptions::default(),
            evaluate: EvaluateOptions::default(),
            hessian: HessianOptions::default(),
        }
    }
}

/// Command-line overrides. Flags win over the config file.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// JSON experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: config, then $GRADSEL_OUT_DIR, then `.`).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Task family for gen-task: linear, mixture or relu.
    #[arg(long, global = true)]
    pub task: Option<String>,
    #[arg(long, global = true)]
    pub n_demo: Option<usize>,
    #[arg(long, global = true)]
    pub n_train: Option<usize>,
    #[arg(long, global = true)]
    pub noise: Option<bool>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub m: Option<usize>,
    #[arg(long, global = true)]
    pub alpha: Option<usize>,
    #[arg(long, global = true)]
    pub d_proj: Option<usize>,
    #[arg(long, global = true)]
    pub t_start: Option<usize>,
    #[arg(long, global = true)]
    pub identity_projection: Option<bool>,
    /// Selection method for `select` (ge-re, ge-fs, ge-ce, oracle-re, oracle-fs, oracle-ce, top-k, random).
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// Comma-separated methods for `evaluate`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Comma-separated subset sizes for `estimate` and `evaluate`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub model_kind: Option<String>,
    #[arg(long, global = true)]
    pub training_task: Option<String>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub n_subsets: Option<usize>,
    #[arg(long, global = true)]
    pub hessian_samples: Option<usize>,
}

fn parse_enum<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T, Failure> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Failure::validation(format!("unknown {what} `{s}`")))
}

impl ExperimentConfig {
    pub fn load(o: &Overrides) -> Result<Self, Failure> {
        let mut c = match &o.config {
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|e| Failure::validation(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_slice(&bytes).map_err(|e| Failure::validation(format!("bad config {}: {e}", p.display())))?
            }
            None => ExperimentConfig::default(),
        };
        c.apply(o)?;
        c.task.seed = c.seed;
        c.task.validate()?;
        Ok(c)
    }

    fn apply(&mut self, o: &Overrides) -> Result<(), Failure> {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if o.out_dir.is_some() {
            self.paths.out_dir = o.out_dir.clone();
        }
        if o.dataset.is_some() {
            self.paths.dataset = o.dataset.clone();
        }
        if o.model.is_some() {
            self.paths.model = o.model.clone();
        }
        if let Some(t) = &o.task {
            let (n_demo, n_train) = (self.task.n_demo, self.task.n_train);
            self.task = match t.as_str() {
                "linear" => TaskSpec::linear(n_demo, n_train, self.seed),
                "mixture" => TaskSpec::mixture(self.seed),
                "relu" => TaskSpec { family: Family::Relu { hidden: 16 }, ..TaskSpec::linear(n_demo, n_train, self.seed) },
                other => return Err(Failure::validation(format!("unknown task `{other}`"))),
            };
        }
        if let Some(v) = o.n_demo {
            self.task.n_demo = v;
        }
        if let Some(v) = o.n_train {
            self.task.n_train = v;
            self.task.n_test = v;
        }
        if let Some(v) = o.noise {
            self.task.noise = if v { NoiseKind::UnitGaussian } else { NoiseKind::None };
        }
        let s = &mut self.selection;
        if let Some(v) = o.k {
            s.k = v;
        }
        if o.m.is_some() {
            s.m = o.m;
        }
        if o.alpha.is_some() {
            s.alpha = o.alpha;
        }
        if o.d_proj.is_some() {
            s.d_proj = o.d_proj;
        }
        if o.t_start.is_some() {
            s.t_start = o.t_start;
        }
        if let Some(v) = o.identity_projection {
            s.identity_projection = v;
        }
        if let Some(m) = &o.method {
            self.method = parse_enum("method", m)?;
        }
        if let Some(ms) = &o.methods {
            self.evaluate.methods = ms.iter().map(|m| parse_enum("method", m)).collect::<Result<_, _>>()?;
        }
        if let Some(ks) = &o.ks {
            self.estimate.ks = ks.clone();
            self.evaluate.ks = ks.clone();
        }
        if let Some(v) = &o.model_kind {
            self.training.model_kind = parse_enum("model kind", v)?;
        }
        if let Some(v) = &o.training_task {
            self.training.task = parse_enum("training task", v)?;
        }
        if let Some(v) = o.steps {
            self.training.steps = v;
        }
        if let Some(v) = o.n_subsets {
            self.estimate.n_subsets = v;
        }
        if let Some(v) = o.hessian_samples {
            self.hessian.n_samples = v;
        }
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON of the
    /// effective config, output directory excluded.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.paths.out_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))[..16].to_string()
    }

    /// The output directory, which must already exist.
    pub fn out_dir(&self) -> Result<PathBuf, Failure> {
        let dir = self
            .paths
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        if !dir.is_dir() {
            return Err(Failure::validation(format!("output directory {} does not exist", dir.display())));
        }
        Ok(dir)
    }

    pub fn dataset_path(&self) -> Result<PathBuf, Failure> {
        existing(self.paths.dataset.clone(), "dataset.json", self)
    }

    pub fn model_path(&self) -> Result<PathBuf, Failure> {
        existing(self.paths.model.clone(), "model.json", self)
    }
}

fn existing(p: Option<PathBuf>, default: &str, c: &ExperimentConfig) -> Result<PathBuf, Failure> {
    let p = match p {
        Some(p) => p,
        None => c.out_dir()?.join(default),
    };
    if !Path::new(&p).is_file() {
        return Err(Failure::validation(format!("input file {} does not exist", p.display())));
    }
    Ok(p)
}
