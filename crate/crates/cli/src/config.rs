//! Flags, the optional TOML config file, and their merge. Precedence is
//! flags (including their environment variables) > config file > defaults.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use fieldsmith::scheduler::{Hyperparams, ViewOrder};
use fieldsmith::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    OracleExact,
    OracleNoisy,
    Identity,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Pose,
    Random,
}

impl From<Order> for ViewOrder {
    fn from(o: Order) -> Self {
        match o {
            Order::Pose => ViewOrder::Pose,
            Order::Random => ViewOrder::Random,
        }
    }
}

/// Jitter of the noisy oracle when none is given.
pub const DEFAULT_JITTER: f32 = 0.25;

/// Every key the config file may set. Names match the long flags with
/// dashes turned into underscores.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub scene: Option<PathBuf>,
    #[serde(rename = "box")]
    pub bbox: Option<PathBuf>,
    pub field: Option<PathBuf>,
    pub object: Option<PathBuf>,
    pub prompt: Option<String>,
    pub prompt_edited: Option<String>,
    pub backend: Option<Backend>,
    pub jitter: Option<f32>,
    pub order: Option<Order>,
    pub n_near: Option<usize>,
    pub n_new: Option<u64>,
    pub n_old: Option<u64>,
    pub alpha_refine: Option<f32>,
    pub consolidation: Option<u64>,
    pub grid: Option<usize>,
    pub extent: Option<f64>,
    pub background: Option<[f64; 3]>,
    pub iters: Option<usize>,
    pub lr: Option<f64>,
    pub rays: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub remote_url: Option<String>,
    pub timeout_s: Option<f64>,
    pub retries: Option<u32>,
    pub skip_pseudo_gt: Option<bool>,
    pub warm_start: Option<u64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("reading config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }
}

/// Picks flag, then file, then nothing.
fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| file.clone())
}

fn required<T>(v: Option<T>, name: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config(format!("--{name} is required (flag or config file)")))
}

#[derive(Args, Debug, Default, Clone)]
pub struct TrainArgs {
    /// Adam learning rate [default: 0.01]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Rays per training batch [default: 1024]
    #[arg(long)]
    pub rays: Option<usize>,
    /// Samples per ray [default: 64]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Seed for every random choice [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainArgs {
    pub fn seed(&self, file: &FileConfig) -> u64 {
        pick(&self.seed, &file.seed).unwrap_or(0)
    }

    pub fn resolve(&self, file: &FileConfig) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            learning_rate: pick(&self.lr, &file.lr).unwrap_or(d.learning_rate),
            rays_per_batch: pick(&self.rays, &file.rays).unwrap_or(d.rays_per_batch),
            n_samples_per_ray: pick(&self.samples, &file.samples).unwrap_or(d.n_samples_per_ray),
            seed: self.seed(file),
            ..d
        }
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct SceneArg {
    /// Scene directory containing scene.json
    #[arg(long)]
    pub scene: Option<PathBuf>,
}

impl SceneArg {
    pub fn resolve(&self, file: &FileConfig) -> Result<PathBuf, CliError> {
        required(pick(&self.scene, &file.scene), "scene")
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct OutArg {
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl OutArg {
    pub fn resolve(&self, file: &FileConfig) -> Result<PathBuf, CliError> {
        required(pick(&self.out, &file.out), "out")
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct FitArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    /// Grid vertices per axis [default: 48]
    #[arg(long)]
    pub grid: Option<usize>,
    /// Half size of the cubic grid around the origin [default: from the
    /// synthetic scene, else 1.25x the farthest camera]
    #[arg(long)]
    pub extent: Option<f64>,
    /// Color where rays leave the grid, as r,g,b [default: mean image color]
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub background: Option<Vec<f64>>,
    /// Training iterations [default: 3000]
    #[arg(long)]
    pub iters: Option<usize>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub out: OutArg,
}

pub struct FitSettings {
    pub scene: PathBuf,
    pub grid: usize,
    pub extent: Option<f64>,
    pub background: Option<[f64; 3]>,
    pub iters: usize,
    pub train: TrainConfig,
    pub out: PathBuf,
}

impl FitArgs {
    pub fn resolve(&self, file: &FileConfig) -> Result<FitSettings, CliError> {
        let background = match (&self.background, &file.background) {
            (Some(v), _) => Some([v[0], v[1], v[2]]),
            (None, f) => *f,
        };
        Ok(FitSettings {
            scene: self.scene.resolve(file)?,
            grid: pick(&self.grid, &file.grid).unwrap_or(48),
            extent: pick(&self.extent, &file.extent),
            background,
            iters: pick(&self.iters, &file.iters).unwrap_or(3000),
            train: self.train.resolve(file),
            out: self.out.resolve(file)?,
        })
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct RemoteArgs {
    /// Diffusion server base URL for --backend remote
    #[arg(long, env = "FIELDSMITH_REMOTE_URL")]
    pub remote_url: Option<String>,
    /// Per-request timeout in seconds [default: 120]
    #[arg(long, env = "FIELDSMITH_TIMEOUT_S")]
    pub timeout_s: Option<f64>,
    /// Retries on HTTP 503 [default: 3]
    #[arg(long)]
    pub retries: Option<u32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RemoteSettings {
    pub url: Option<String>,
    pub timeout_s: f64,
    pub retries: u32,
}

impl RemoteArgs {
    pub fn resolve(&self, file: &FileConfig) -> Result<RemoteSettings, CliError> {
        let timeout_s = pick(&self.timeout_s, &file.timeout_s).unwrap_or(120.0);
        if !(timeout_s.is_finite() && timeout_s > 0.0) {
            return Err(CliError::Config(format!("timeout must be positive, got {timeout_s}")));
        }
        Ok(RemoteSettings {
            url: pick(&self.remote_url, &file.remote_url),
            timeout_s,
            retries: pick(&self.retries, &file.retries).unwrap_or(3),
        })
    }
}

/// Options shared by `insert` and `remove`.
#[derive(Args, Debug, Default, Clone)]
pub struct EditArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    /// Edit box JSON [default: <scene>/box.json]
    #[arg(long = "box")]
    pub bbox: Option<PathBuf>,
    /// Background field checkpoint from `fit`
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Prompt sent to the synthesizer
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    /// Noise std of the noisy oracle [default: 0.25]
    #[arg(long)]
    pub jitter: Option<f32>,
    #[arg(long, value_enum)]
    pub order: Option<Order>,
    /// Views admitted per burst [default: 3]
    #[arg(long)]
    pub n_near: Option<usize>,
    /// Training steps between bursts [default: 500]
    #[arg(long)]
    pub n_new: Option<u64>,
    /// Training steps between replacements [default: 10]
    #[arg(long)]
    pub n_old: Option<u64>,
    /// Strength of refinement calls [default: 0.35]
    #[arg(long)]
    pub alpha_refine: Option<f32>,
    /// Training steps after the last admission [default: 3 * n_new]
    #[arg(long)]
    pub consolidation: Option<u64>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub remote: RemoteArgs,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Serialize)]
pub struct EditSettings {
    pub scene: PathBuf,
    pub bbox: PathBuf,
    pub field: Option<PathBuf>,
    pub prompt: Option<String>,
    pub backend: Backend,
    pub jitter: f32,
    pub hyper: Hyperparams,
    pub train: TrainConfig,
    pub seed: u64,
    pub remote: RemoteSettings,
    pub out: PathBuf,
}

impl EditArgs {
    pub fn resolve(&self, file: &FileConfig) -> Result<EditSettings, CliError> {
        let scene = self.scene.resolve(file)?;
        let backend = pick(&self.backend, &file.backend).unwrap_or(Backend::OracleExact);
        let jitter = match backend {
            Backend::OracleNoisy => pick(&self.jitter, &file.jitter).unwrap_or(DEFAULT_JITTER),
            _ => 0.0,
        };
        if !(jitter.is_finite() && jitter >= 0.0) {
            return Err(CliError::Config(format!("jitter must be non-negative, got {jitter}")));
        }
        let d = Hyperparams::default();
        let hyper = Hyperparams {
            n_near: pick(&self.n_near, &file.n_near).unwrap_or(d.n_near),
            n_new: pick(&self.n_new, &file.n_new).unwrap_or(d.n_new),
            n_old: pick(&self.n_old, &file.n_old).unwrap_or(d.n_old),
            alpha_refine: pick(&self.alpha_refine, &file.alpha_refine).unwrap_or(d.alpha_refine),
            consolidation_steps: pick(&self.consolidation, &file.consolidation),
            order: pick(&self.order, &file.order).map_or(d.order, Into::into),
            ..d
        };
        hyper.validate().map_err(CliError::from)?;
        Ok(EditSettings {
            bbox: pick(&self.bbox, &file.bbox).unwrap_or_else(|| scene.join("box.json")),
            field: pick(&self.field, &file.field),
            prompt: pick(&self.prompt, &file.prompt),
            backend,
            jitter,
            hyper,
            train: self.train.resolve(file),
            seed: self.train.seed(file),
            remote: self.remote.resolve(file)?,
            out: self.out.resolve(file)?,
            scene,
        })
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct InsertArgs {
    #[command(flatten)]
    pub edit: EditArgs,
    /// Object primitives for the oracle backends [default: <scene>/object.json]
    #[arg(long)]
    pub object: Option<PathBuf>,
    /// Continue from a session checkpoint directory
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct RemoveArgs {
    #[command(flatten)]
    pub edit: EditArgs,
    /// Prompt with identifiers used in the update loop [default: --prompt]
    #[arg(long)]
    pub prompt_edited: Option<String>,
    /// Skip the pseudo ground-truth, fine-tuning and warm-start stages
    #[arg(long)]
    pub skip_pseudo_gt: bool,
    /// Warm-start steps on the pseudo ground truth [default: 3 * n_new]
    #[arg(long)]
    pub warm_start: Option<u64>,
}

impl EditSettings {
    pub fn field(&self) -> Result<&Path, CliError> {
        self.field
            .as_deref()
            .ok_or_else(|| CliError::Config("--field is required (flag or config file)".into()))
    }
}

pub fn pick_opt<T: Clone>(flag: &Option<T>, file: &Option<T>) -> Option<T> {
    pick(flag, file)
}
