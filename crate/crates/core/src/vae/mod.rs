//! Convolutional variational autoencoder: architecture, negative-ELBO
//! objective with hand-derived gradients, training with early stopping, and
//! the checkpoint container.

mod checkpoint;
mod config;
mod model;
mod train;

pub use checkpoint::{Checkpoint, NamedTensor, FORMAT_VERSION, MAGIC};
pub use config::VaeConfig;
pub use model::{kl_closed_form, sample_latent, ElboObjective, ElboTerms, LatentCode, Vae};
pub use train::{evaluate, flip_into, train, train_with, EpochRecord, TrainData};
