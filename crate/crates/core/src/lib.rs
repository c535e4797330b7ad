//! Foley effect generation workbench: corpus augmentation, a multiband
//! variational autoencoder trained on CPU, a PCA control space over its
//! latents, and mel-domain evaluation metrics.

pub mod audio_io;
pub mod checkpoint;
pub mod dataset;
pub mod discriminator;
pub mod dsp;
pub mod error;
pub mod fx;
pub mod latent;
pub mod metrics;
pub mod multiband;
pub mod nn;
pub mod spectral;
pub mod synth;
pub mod trainer;
pub mod tsne;
pub mod vae;

pub use audio_io::AudioBuffer;
pub use error::{Error, Result};
