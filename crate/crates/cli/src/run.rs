//! Programmatic pipeline behind the subcommands: dataset and model
//! construction, the training loop, sampling and evaluation.

use tgan_core::data::{self, Dataset, RingSpec};
use tgan_core::eval::{self, EvalReport, ProxyClassifier, ProxyTrainConfig};
use tgan_core::gan::{GanError, GanModel, ModelConfig, StepReport, TrainConfig, Trainer};
use tgan_core::latent::{LatentConfig, LatentPipeline};
use tgan_core::optim::{Optimizer, OptimizerKind};
use tgan_core::{Rng, Tensor};

use crate::config::{DatasetKind, OptimizerChoice, RunConfig};

// Stream identifiers; each consumer of randomness owns one.
const DATA_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const BATCH_STREAM: u64 = 3;
const TRAIN_STREAM: u64 = 4;
pub const SAMPLE_STREAM: u64 = 5;
const CLASSIFIER_STREAM: u64 = 6;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error(transparent)]
    Numerical(GanError),
    #[error("bad artifact: {0}")]
    Artifact(String),
    #[error("{0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Check(_) => 1,
            RunError::Usage(_) | RunError::Io(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Artifact(_) => 4,
        }
    }
}

impl From<GanError> for RunError {
    fn from(e: GanError) -> Self {
        match e {
            GanError::NonFinite(_) => RunError::Numerical(e),
            other => RunError::Usage(other.to_string()),
        }
    }
}

pub fn build_dataset(cfg: &RunConfig) -> Result<Dataset, RunError> {
    let mut rng = Rng::stream(cfg.seed, DATA_STREAM);
    let ds = match cfg.dataset_kind {
        DatasetKind::Ring => data::ring_of_gaussians(ring_spec(cfg), &mut rng),
        DatasetKind::Mnist => {
            let (Some(img), Some(lab)) = (&cfg.mnist_images, &cfg.mnist_labels) else {
                return Err(RunError::Usage("mnist dataset needs dataset.images and dataset.labels".into()));
            };
            let full = data::load_idx(img, lab).map_err(|e| match e {
                data::DataError::Io { .. } => RunError::Usage(e.to_string()),
                other => RunError::Artifact(other.to_string()),
            })?;
            let sub = data::balanced_subset(&full, cfg.mnist_per_class, &mut rng)
                .map_err(|e| RunError::Usage(e.to_string()))?;
            let side = (sub.data_dim() as f64).sqrt().round() as usize;
            if side == cfg.mnist_side {
                Ok(sub)
            } else {
                data::downsample(&sub, side, cfg.mnist_side)
            }
        }
    };
    ds.map_err(|e| RunError::Usage(e.to_string()))
}

pub fn ring_spec(cfg: &RunConfig) -> RingSpec {
    RingSpec {
        modes: cfg.ring_modes,
        radius: cfg.ring_radius,
        std: cfg.ring_std,
        n: cfg.ring_n,
        labeled: cfg.ring_labeled,
    }
}

pub fn latent_config(cfg: &RunConfig, num_classes: usize) -> LatentConfig {
    LatentConfig {
        kind: cfg.latent_kind,
        components: cfg.latent_components,
        dim: cfg.latent_dim,
        nu: cfg.latent_nu,
        num_classes,
        attention_hidden: cfg.latent_attention_hidden,
        sigma_reg: cfg.latent_sigma_reg,
    }
}

/// Freshly initialized model for `cfg` and a dataset of the given shape.
pub fn build_model(cfg: &RunConfig, data_dim: usize, num_classes: usize) -> Result<GanModel, RunError> {
    let mut rng = Rng::stream(cfg.seed, INIT_STREAM);
    let latent = LatentPipeline::new(latent_config(cfg, num_classes), &mut rng)
        .map_err(|e| RunError::Usage(e.to_string()))?;
    let mc = ModelConfig {
        data_dim,
        num_classes,
        hidden: cfg.model_hidden,
        dropout: cfg.model_dropout,
        objective: cfg.model_objective,
    };
    Ok(GanModel::new(mc, latent, &mut rng))
}

pub fn build_trainer(cfg: &RunConfig, model: GanModel) -> Trainer {
    let tc = TrainConfig {
        batch: cfg.train_batch,
        alpha: cfg.train_alpha,
        g_mode: cfg.train_g_mode,
        d_steps: cfg.train_d_g_ratio,
        seed: Rng::stream(cfg.seed, TRAIN_STREAM).next_u64(),
    };
    let kind = match cfg.train_optimizer {
        OptimizerChoice::Adam => OptimizerKind::adam(cfg.train_beta1, cfg.train_beta2),
        OptimizerChoice::Sgd => OptimizerKind::Sgd,
    };
    Trainer::new(
        model,
        tc,
        Optimizer::new(cfg.train_lr, kind),
        Optimizer::new(cfg.train_lr, kind),
    )
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub losses: Vec<StepReport>,
    /// Set when training stopped on a non-finite value.
    pub abort: Option<GanError>,
}

/// Runs `cfg.train_steps` steps. `on_step` sees the trainer after every
/// completed step (for checkpointing). A numerical abort stops the loop and is
/// returned alongside the losses gathered so far.
pub fn train(
    cfg: &RunConfig,
    ds: &Dataset,
    mut on_step: impl FnMut(&Trainer) -> Result<(), RunError>,
) -> Result<TrainOutcome, RunError> {
    let model = build_model(cfg, ds.data_dim(), ds.num_classes())?;
    let mut trainer = build_trainer(cfg, model);
    let mut batch_rng = Rng::stream(cfg.seed, BATCH_STREAM);
    let mut losses = Vec::with_capacity(cfg.train_steps as usize);
    for _ in 0..cfg.train_steps {
        let (x, y) = ds.sample_batch(cfg.train_batch, &mut batch_rng);
        match trainer.step(&x, &y) {
            Ok(r) => losses.push(r),
            Err(e @ GanError::NonFinite(_)) => {
                return Ok(TrainOutcome {
                    trainer,
                    losses,
                    abort: Some(e),
                })
            }
            Err(e) => return Err(e.into()),
        }
        on_step(&trainer)?;
    }
    Ok(TrainOutcome {
        trainer,
        losses,
        abort: None,
    })
}

/// Balanced labels `k % C` for `n` samples.
pub fn balanced_labels(n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|k| k % classes).collect()
}

/// `n` conditional samples with balanced labels, from the run's sample stream.
pub fn generate(cfg: &RunConfig, model: &GanModel, n: usize) -> Result<(Tensor, Vec<usize>), RunError> {
    let labels = balanced_labels(n, model.cfg.num_classes);
    let mut rng = Rng::stream(cfg.seed, SAMPLE_STREAM);
    Ok((model.sample(&labels, &mut rng)?, labels))
}

/// Proxy classifier trained on the full real dataset.
pub fn train_classifier(cfg: &RunConfig, ds: &Dataset) -> Result<ProxyClassifier, RunError> {
    let seed = Rng::stream(cfg.seed, CLASSIFIER_STREAM).next_u64();
    let pc = if ds.data_dim() == 2 {
        ProxyTrainConfig::toy(seed)
    } else {
        ProxyTrainConfig::images(seed)
    };
    ProxyClassifier::train(ds, pc).map_err(|e| RunError::Check(e.to_string()))
}

pub fn evaluate_model(
    name: &str,
    cfg: &RunConfig,
    model: &GanModel,
    ds: &Dataset,
    clf: &ProxyClassifier,
    d_adv: Option<&[f64]>,
) -> Result<EvalReport, RunError> {
    let (samples, labels) = generate(cfg, model, cfg.eval_samples)?;
    eval::evaluate(name, &samples, &labels, ds.ring.as_ref(), clf, cfg.eval_splits, d_adv)
        .map_err(|e| RunError::Check(e.to_string()))
}

/// The real dataset scored against itself.
pub fn evaluate_real(cfg: &RunConfig, ds: &Dataset, clf: &ProxyClassifier) -> Result<EvalReport, RunError> {
    eval::evaluate("real", ds.samples(), ds.labels(), ds.ring.as_ref(), clf, cfg.eval_splits, None)
        .map_err(|e| RunError::Check(e.to_string()))
}
