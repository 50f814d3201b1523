//! One-dimensional fully convolutional denoising autoencoder.
//!
//! Encoder: `conv(k) → ReLU → maxpool(2)` per block, with filter counts
//! growing along the encoder ladder. A latent `conv → ReLU` block sits at the
//! bottom without pooling. The decoder mirrors the encoder with stride-2
//! transposed convolutions (`→ ReLU`), and a single-channel stride-1
//! transposed convolution with a linear output closes the network.
//!
//! All convolutions use "same" padding `kernel / 2`; the stride-2 transposed
//! convolutions add one trailing output element so that each stage exactly
//! doubles the length. With the default ladder a 736-channel spectrum is
//! compressed to 23 positions and restored to 736.

mod io;
mod layers;
mod network;
mod real;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_params, load_params_for, save_params, MODEL_FORMAT_VERSION};
pub use layers::Dims;
pub use network::{backward, forward, Batch, Cache};
pub use real::Real;

/// Layer ladder of the autoencoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub encoder_filters: Vec<usize>,
    pub latent_filters: usize,
    pub decoder_filters: Vec<usize>,
    pub kernel: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            encoder_filters: vec![16, 24, 32, 48, 64],
            latent_filters: 96,
            decoder_filters: vec![64, 48, 32, 24, 16],
            kernel: 11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Stride-1 convolution followed by ReLU and 2× max-pool.
    Encoder,
    /// Stride-1 convolution followed by ReLU.
    Latent,
    /// Stride-2 transposed convolution followed by ReLU.
    Decoder,
    /// Stride-1 transposed convolution, linear.
    Output,
}

/// Static description of one parameterized layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl LayerSpec {
    /// Weight tensor shape. Convolutions are `(out, in, kernel)`,
    /// transposed convolutions `(in, out, kernel)`.
    pub fn weight_shape(&self) -> [usize; 3] {
        match self.kind {
            LayerKind::Encoder | LayerKind::Latent => [self.out_ch, self.in_ch, self.kernel],
            LayerKind::Decoder | LayerKind::Output => [self.in_ch, self.out_ch, self.kernel],
        }
    }

    pub fn weight_len(&self) -> usize {
        self.in_ch * self.out_ch * self.kernel
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + self.out_ch
    }

    fn fan_in(&self) -> usize {
        self.in_ch * self.kernel
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::param("kernel must be odd"));
        }
        if self.encoder_filters.is_empty() {
            return Err(Error::param("encoder needs at least one block"));
        }
        if self.encoder_filters.len() != self.decoder_filters.len() {
            return Err(Error::param(
                "decoder must have as many upsampling blocks as the encoder has pools",
            ));
        }
        if self.latent_filters == 0 || self.encoder_filters.iter().chain(&self.decoder_filters).any(|&f| f == 0) {
            return Err(Error::param("filter counts must be positive"));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.encoder_filters.len()
    }

    /// Input lengths must be a multiple of this.
    pub fn length_multiple(&self) -> usize {
        1 << self.depth()
    }

    pub fn check_length(&self, len: usize) -> Result<()> {
        let m = self.length_multiple();
        if len == 0 || !len.is_multiple_of(m) {
            return Err(Error::ShapeMismatch(format!(
                "spectrum length {len} is not a positive multiple of {m}"
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let k = self.kernel;
        let mut out = Vec::with_capacity(2 * self.depth() + 2);
        let mut in_ch = 1;
        for &f in &self.encoder_filters {
            out.push(LayerSpec { kind: LayerKind::Encoder, in_ch, out_ch: f, kernel: k });
            in_ch = f;
        }
        out.push(LayerSpec { kind: LayerKind::Latent, in_ch, out_ch: self.latent_filters, kernel: k });
        in_ch = self.latent_filters;
        for &f in &self.decoder_filters {
            out.push(LayerSpec { kind: LayerKind::Decoder, in_ch, out_ch: f, kernel: k });
            in_ch = f;
        }
        out.push(LayerSpec { kind: LayerKind::Output, in_ch, out_ch: 1, kernel: k });
        out
    }
}

/// Trainable parameter count: Σ (out·in·kernel + out) over all layers.
pub fn count_params(arch: &Architecture) -> usize {
    arch.layers().iter().map(LayerSpec::param_count).sum()
}

/// Weights and bias of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// All trainable parameters plus the descriptor they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    arch: Architecture,
    seed: u64,
    layers: Vec<LayerParams<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Fan-in scaled uniform initialization (bound `√(6 / fan_in)`), zero
    /// biases. Values are drawn in double precision, so `f32` and `f64`
    /// builds with one seed agree up to rounding.
    pub fn build(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layers()
            .iter()
            .map(|spec| {
                let bound = (6.0 / spec.fan_in() as f64).sqrt();
                let weight = (0..spec.weight_len())
                    .map(|_| T::from_f64_lossy(bound * (2.0 * rng.random::<f64>() - 1.0)))
                    .collect();
                LayerParams { weight, bias: vec![T::zero(); spec.out_ch] }
            })
            .collect();
        Ok(ModelParams { arch: arch.clone(), seed, layers })
    }

    /// Parameters with every value zero.
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layers()
            .iter()
            .map(|s| LayerParams { weight: vec![T::zero(); s.weight_len()], bias: vec![T::zero(); s.out_ch] })
            .collect();
        Ok(ModelParams { arch: arch.clone(), seed: 0, layers })
    }

    pub fn from_layers(arch: &Architecture, seed: u64, layers: Vec<LayerParams<T>>) -> Result<Self> {
        arch.validate()?;
        let specs = arch.layers();
        if specs.len() != layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} layers, got {}",
                specs.len(),
                layers.len()
            )));
        }
        for (i, (s, l)) in specs.iter().zip(&layers).enumerate() {
            if s.weight_len() != l.weight.len() || s.out_ch != l.bias.len() {
                return Err(Error::ShapeMismatch(format!("layer {i} tensor sizes")));
            }
        }
        Ok(ModelParams { arch: arch.clone(), seed, layers })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    pub fn count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// Every parameter in declared order (per layer: weights, then bias).
    pub fn iter(&self) -> impl Iterator<Item = T> + '_ {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias).copied())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.iter().collect()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.to_f64().unwrap_or(f64::NAN))).collect();
        ModelParams {
            arch: self.arch.clone(),
            seed: self.seed,
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams { weight: conv(&l.weight), bias: conv(&l.bias) })
                .collect(),
        }
    }

    /// Cheap content hash used to tie a forward cache to its parameters.
    pub(crate) fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.iter() {
            let bits = v.to_f64().unwrap_or(f64::NAN).to_bits();
            h ^= bits;
            h = h.wrapping_mul(0x0100_0000_01b3).rotate_left(7);
        }
        h
    }
}

/// Gradients share the parameter layout.
pub type Gradients<T> = ModelParams<T>;
