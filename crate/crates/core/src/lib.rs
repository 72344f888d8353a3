//! Audio-to-audio processing inside a frozen autoencoder's latent space.
//!
//! Audio enters through an [`autoencoder`] encoder, is transformed by a small
//! latent predictor ([`network`]) trained only with latent-domain objectives
//! ([`objectives`], optionally against a latent [`discriminator`]), and leaves
//! through the decoder. See the README for the task pipelines.

pub mod audio;
pub mod autoencoder;
pub mod checkpoint;
pub mod config;
pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod float;
pub mod latent;
pub mod network;
pub mod nn;
pub mod objectives;
pub mod signal;
pub mod spectral;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
