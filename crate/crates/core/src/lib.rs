//! Student's-t mixture latent GAN lab: a small reverse-mode autodiff, the
//! multivariate t distribution and its transform check, the attention-weighted
//! latent pipeline, the conditional GAN, datasets and evaluation metrics.

pub mod data;
pub mod eval;
pub mod gan;
pub mod gradcheck;
pub mod gradsuite;
pub mod ks;
pub mod latent;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod special;
pub mod tdist;
pub mod tensor;

pub use rng::Rng;
pub use tensor::{Graph, Tensor, TensorError, Var};
