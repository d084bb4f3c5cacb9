//! Library side of the `tgan` binary: run configuration, checkpoints, image
//! output, the training/evaluation pipeline and the subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod image;
pub mod run;

