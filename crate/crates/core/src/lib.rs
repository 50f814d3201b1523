pub mod autoencoder;
pub mod error;
pub mod spectrum;

pub use error::{Error, Result};
pub mod seeding;
pub mod synth;
pub mod preprocess;
pub mod metrics;
pub mod clustering;
pub mod dataset;
pub mod trainer;
pub mod baselines;
pub mod noisediag;
