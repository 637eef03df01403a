//! Text-guided manipulation of short videos through a latent space that
//! separates text-relevant content, text-irrelevant content and motion.
//!
//! The pieces, bottom up:
//!
//! - [`scenes`]: procedural moving-shapes clips with factor labels and captions.
//! - [`textenc`]: sentence embeddings and their projection into the latent space.
//! - [`odeint`]: Dormand–Prince and RK4 integrators that stay differentiable.
//! - [`repnet`]: set encoder, GRU + latent ODE dynamics, and the training decoder.
//! - [`tranet`]: the conditional generator built on multi-feature modulation.
//! - [`adversary`]: multi-scale conditional patch discriminator and pairing.
//! - [`objectives`]: every loss term and their weighted total.
//! - [`metrics`]: MIG, AAM, manipulative precision, Fréchet distance, IS.
//! - [`harness`]: optimizers, checkpoints and the training loop.

pub mod config;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod odeint;
pub mod repnet;
pub mod rng;
pub mod adversary;
pub mod scenes;
pub mod textenc;
pub mod tranet;

pub use config::Config;
pub use error::{Error, Result};
