//! Flat `key = value` run configuration. Every key has a default except the
//! IDX paths of an image dataset; unknown keys are rejected.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use tgan_core::gan::{GMode, Objective};
use tgan_core::latent::LatentKind;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {message}")]
    Value { key: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Ring,
    Mnist,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Ring => "ring",
            DatasetKind::Mnist => "mnist",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ring" => Ok(DatasetKind::Ring),
            "mnist" => Ok(DatasetKind::Mnist),
            o => Err(format!("unknown dataset kind `{o}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerChoice {
    Adam,
    Sgd,
}

impl OptimizerChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerChoice::Adam => "adam",
            OptimizerChoice::Sgd => "sgd",
        }
    }
}

impl FromStr for OptimizerChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adam" => Ok(OptimizerChoice::Adam),
            "sgd" => Ok(OptimizerChoice::Sgd),
            o => Err(format!("unknown optimizer `{o}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    pub dataset_kind: DatasetKind,
    pub ring_modes: usize,
    pub ring_radius: f64,
    pub ring_std: f64,
    pub ring_n: usize,
    pub ring_labeled: bool,
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
    pub mnist_per_class: usize,
    pub mnist_side: usize,

    pub latent_kind: LatentKind,
    pub latent_components: usize,
    pub latent_dim: usize,
    pub latent_nu: f64,
    pub latent_attention_hidden: usize,
    pub latent_sigma_reg: f64,

    pub model_objective: Objective,
    pub model_hidden: usize,
    pub model_dropout: f64,

    pub train_steps: u64,
    pub train_batch: usize,
    pub train_optimizer: OptimizerChoice,
    pub train_lr: f64,
    pub train_beta1: f64,
    pub train_beta2: f64,
    pub train_alpha: f64,
    pub train_g_mode: GMode,
    pub train_d_g_ratio: usize,
    pub train_checkpoint_every: u64,

    pub eval_samples: usize,
    pub eval_splits: usize,
    pub eval_per_class: usize,

    pub verify_sets: usize,
    pub verify_max_dim: usize,
    pub verify_samples: usize,
    pub verify_tolerance: f64,
    pub verify_alpha: f64,
    pub verify_perturb_density: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out_dir: PathBuf::from("out"),
            dataset_kind: DatasetKind::Ring,
            ring_modes: 8,
            ring_radius: 2.0,
            ring_std: 0.1,
            ring_n: 500,
            ring_labeled: true,
            mnist_images: None,
            mnist_labels: None,
            mnist_per_class: 50,
            mnist_side: 8,
            latent_kind: LatentKind::TMixture,
            latent_components: 10,
            latent_dim: 10,
            latent_nu: 5.0,
            latent_attention_hidden: 32,
            latent_sigma_reg: 0.0,
            model_objective: Objective::TGan,
            model_hidden: 128,
            model_dropout: 0.3,
            train_steps: 5000,
            train_batch: 64,
            train_lr: 2e-4,
            train_beta1: 0.5,
            train_beta2: 0.999,
            train_optimizer: OptimizerChoice::Adam,
            train_alpha: 1.0,
            train_g_mode: GMode::NonSaturating,
            train_d_g_ratio: 1,
            train_checkpoint_every: 1000,
            eval_samples: 2000,
            eval_splits: 10,
            eval_per_class: 8,
            verify_sets: 50,
            verify_max_dim: 5,
            verify_samples: 10_000,
            verify_tolerance: 1e-9,
            verify_alpha: 1e-3,
            verify_perturb_density: 0.0,
        }
    }
}

/// Every accepted key with a one-line description, in serialization order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed for every random stream"),
    ("out_dir", "directory receiving all outputs"),
    ("dataset.kind", "ring | mnist"),
    ("dataset.modes", "ring: number of Gaussian modes"),
    ("dataset.radius", "ring: circle radius before rescaling"),
    ("dataset.std", "ring: per-mode standard deviation before rescaling"),
    ("dataset.n", "ring: number of training points"),
    ("dataset.labeled", "ring: label points by mode (true) or use one class"),
    ("dataset.images", "mnist: IDX images file"),
    ("dataset.labels", "mnist: IDX labels file"),
    ("dataset.per_class", "mnist: balanced subset size per class"),
    ("dataset.side", "mnist: downsampled image side"),
    ("latent.kind", "t_mixture | gaussian_mixture | single_gaussian"),
    ("latent.components", "mixture components N"),
    ("latent.dim", "latent dimension p"),
    ("latent.nu", "degrees of freedom of the t components"),
    ("latent.attention_hidden", "attention network hidden width"),
    ("latent.sigma_reg", "penalty pulling component scales toward 1"),
    ("model.objective", "tgan | vanilla"),
    ("model.hidden", "hidden width of generator and discriminator"),
    ("model.dropout", "dropout rate in the classifier head"),
    ("train.steps", "training steps"),
    ("train.batch", "batch size"),
    ("train.optimizer", "adam | sgd"),
    ("train.lr", "learning rate for both players"),
    ("train.beta1", "Adam beta1"),
    ("train.beta2", "Adam beta2"),
    ("train.alpha", "classifier loss weight"),
    ("train.g_mode", "nonsaturating | saturating"),
    ("train.d_g_ratio", "discriminator updates per generator update"),
    ("train.checkpoint_every", "checkpoint interval in steps (0 disables)"),
    ("eval.samples", "generated samples per evaluation"),
    ("eval.splits", "proxy inception score splits"),
    ("eval.per_class", "grid rows per class"),
    ("verify.sets", "random parameter sets in the theorem sweep"),
    ("verify.max_dim", "largest dimension in the sweep"),
    ("verify.samples", "samples per KS check"),
    ("verify.tolerance", "density discrepancy tolerance"),
    ("verify.alpha", "KS significance level"),
    ("verify.perturb_density", "test hook: bias added to the transformed density"),
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        message: e.to_string(),
    })
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let v = v
            .strip_prefix('"')
            .and_then(|s| s.strip_suffix('"'))
            .unwrap_or(v);
        match key {
            "seed" => self.seed = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "dataset.kind" => self.dataset_kind = parse(key, v)?,
            "dataset.modes" => self.ring_modes = parse(key, v)?,
            "dataset.radius" => self.ring_radius = parse(key, v)?,
            "dataset.std" => self.ring_std = parse(key, v)?,
            "dataset.n" => self.ring_n = parse(key, v)?,
            "dataset.labeled" => self.ring_labeled = parse(key, v)?,
            "dataset.images" => self.mnist_images = path(v),
            "dataset.labels" => self.mnist_labels = path(v),
            "dataset.per_class" => self.mnist_per_class = parse(key, v)?,
            "dataset.side" => self.mnist_side = parse(key, v)?,
            "latent.kind" => self.latent_kind = parse(key, v)?,
            "latent.components" => self.latent_components = parse(key, v)?,
            "latent.dim" => self.latent_dim = parse(key, v)?,
            "latent.nu" => self.latent_nu = parse(key, v)?,
            "latent.attention_hidden" => self.latent_attention_hidden = parse(key, v)?,
            "latent.sigma_reg" => self.latent_sigma_reg = parse(key, v)?,
            "model.objective" => self.model_objective = parse(key, v)?,
            "model.hidden" => self.model_hidden = parse(key, v)?,
            "model.dropout" => self.model_dropout = parse(key, v)?,
            "train.steps" => self.train_steps = parse(key, v)?,
            "train.batch" => self.train_batch = parse(key, v)?,
            "train.optimizer" => self.train_optimizer = parse(key, v)?,
            "train.lr" => self.train_lr = parse(key, v)?,
            "train.beta1" => self.train_beta1 = parse(key, v)?,
            "train.beta2" => self.train_beta2 = parse(key, v)?,
            "train.alpha" => self.train_alpha = parse(key, v)?,
            "train.g_mode" => self.train_g_mode = parse(key, v)?,
            "train.d_g_ratio" => self.train_d_g_ratio = parse(key, v)?,
            "train.checkpoint_every" => self.train_checkpoint_every = parse(key, v)?,
            "eval.samples" => self.eval_samples = parse(key, v)?,
            "eval.splits" => self.eval_splits = parse(key, v)?,
            "eval.per_class" => self.eval_per_class = parse(key, v)?,
            "verify.sets" => self.verify_sets = parse(key, v)?,
            "verify.max_dim" => self.verify_max_dim = parse(key, v)?,
            "verify.samples" => self.verify_samples = parse(key, v)?,
            "verify.tolerance" => self.verify_tolerance = parse(key, v)?,
            "verify.alpha" => self.verify_alpha = parse(key, v)?,
            "verify.perturb_density" => self.verify_perturb_density = parse(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Normalized textual value of `key`.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "dataset.kind" => self.dataset_kind.as_str().to_string(),
            "dataset.modes" => self.ring_modes.to_string(),
            "dataset.radius" => self.ring_radius.to_string(),
            "dataset.std" => self.ring_std.to_string(),
            "dataset.n" => self.ring_n.to_string(),
            "dataset.labeled" => self.ring_labeled.to_string(),
            "dataset.images" => show_path(&self.mnist_images),
            "dataset.labels" => show_path(&self.mnist_labels),
            "dataset.per_class" => self.mnist_per_class.to_string(),
            "dataset.side" => self.mnist_side.to_string(),
            "latent.kind" => self.latent_kind.as_str().to_string(),
            "latent.components" => self.latent_components.to_string(),
            "latent.dim" => self.latent_dim.to_string(),
            "latent.nu" => self.latent_nu.to_string(),
            "latent.attention_hidden" => self.latent_attention_hidden.to_string(),
            "latent.sigma_reg" => self.latent_sigma_reg.to_string(),
            "model.objective" => self.model_objective.as_str().to_string(),
            "model.hidden" => self.model_hidden.to_string(),
            "model.dropout" => self.model_dropout.to_string(),
            "train.steps" => self.train_steps.to_string(),
            "train.batch" => self.train_batch.to_string(),
            "train.optimizer" => self.train_optimizer.as_str().to_string(),
            "train.lr" => self.train_lr.to_string(),
            "train.beta1" => self.train_beta1.to_string(),
            "train.beta2" => self.train_beta2.to_string(),
            "train.alpha" => self.train_alpha.to_string(),
            "train.g_mode" => self.train_g_mode.as_str().to_string(),
            "train.d_g_ratio" => self.train_d_g_ratio.to_string(),
            "train.checkpoint_every" => self.train_checkpoint_every.to_string(),
            "eval.samples" => self.eval_samples.to_string(),
            "eval.splits" => self.eval_splits.to_string(),
            "eval.per_class" => self.eval_per_class.to_string(),
            "verify.sets" => self.verify_sets.to_string(),
            "verify.max_dim" => self.verify_max_dim.to_string(),
            "verify.samples" => self.verify_samples.to_string(),
            "verify.tolerance" => self.verify_tolerance.to_string(),
            "verify.alpha" => self.verify_alpha.to_string(),
            "verify.perturb_density" => self.verify_perturb_density.to_string(),
            _ => return None,
        })
    }

    /// Parses config text on top of the defaults. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: line.to_string(),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Normalized text: every key, in [`KEYS`] order.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for (k, _) in KEYS {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&self.get(k).expect("listed key"));
            s.push('\n');
        }
        s
    }

    /// Range checks that do not depend on the filesystem.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.dataset_kind == DatasetKind::Mnist && (self.mnist_images.is_none() || self.mnist_labels.is_none()) {
            return bad("dataset.kind = mnist needs dataset.images and dataset.labels".into());
        }
        if self.train_batch == 0 {
            return bad("train.batch must be positive".into());
        }
        if self.model_hidden == 0 {
            return bad("model.hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.model_dropout) {
            return bad(format!("model.dropout {} outside [0, 1)", self.model_dropout));
        }
        if !(self.train_lr >= 0.0) || !(self.train_alpha >= 0.0) {
            return bad("train.lr and train.alpha must be non-negative".into());
        }
        if self.eval_splits == 0 {
            return bad("eval.splits must be positive".into());
        }
        if self.verify_max_dim == 0 {
            return bad("verify.max_dim must be positive".into());
        }
        Ok(())
    }
}
