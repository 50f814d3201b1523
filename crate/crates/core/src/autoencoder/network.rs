use super::layers::{self, Conv, ConvTranspose, Dims};
use super::real::Real;
use super::{Gradients, LayerKind, LayerSpec, ModelParams};
use crate::error::{Error, Result};

/// A batch of equal-length spectra, row-major `(rows, len)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    rows: usize,
    len: usize,
    data: Vec<T>,
}

impl<T: Real> Batch<T> {
    pub fn new(rows: usize, len: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * len {
            return Err(Error::ShapeMismatch(format!(
                "batch of {rows}x{len} needs {} values, got {}",
                rows * len,
                data.len()
            )));
        }
        Ok(Batch { rows, len, data })
    }

    pub fn zeros(rows: usize, len: usize) -> Self {
        Batch { rows, len, data: vec![T::zero(); rows * len] }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let len = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * len);
        for r in rows {
            let r = r.as_ref();
            if r.len() != len {
                return Err(Error::ShapeMismatch("ragged batch rows".into()));
            }
            data.extend(r.iter().map(|&v| T::from_f64_lossy(v)));
        }
        Ok(Batch { rows: rows.len(), len, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.len..(i + 1) * self.len]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    }
}

struct LayerCache<T> {
    input: Vec<T>,
    in_dims: Dims,
    /// Rectifier output (before pooling); empty for the linear output layer.
    act: Vec<T>,
    pool_arg: Vec<u32>,
}

/// Intermediate activations and pooling indices from one forward pass.
pub struct Cache<T> {
    fingerprint: u64,
    rows: usize,
    len: usize,
    layers: Vec<LayerCache<T>>,
}

impl<T> Cache<T> {
    pub fn batch_shape(&self) -> (usize, usize) {
        (self.rows, self.len)
    }
}

fn conv_of(spec: &LayerSpec) -> Conv {
    Conv { in_ch: spec.in_ch, out_ch: spec.out_ch, kernel: spec.kernel, pad: spec.kernel / 2 }
}

fn conv_t_of(spec: &LayerSpec) -> ConvTranspose {
    let upsample = spec.kind == LayerKind::Decoder;
    ConvTranspose {
        in_ch: spec.in_ch,
        out_ch: spec.out_ch,
        kernel: spec.kernel,
        stride: if upsample { 2 } else { 1 },
        pad: spec.kernel / 2,
        output_padding: usize::from(upsample),
    }
}

/// Run the network on a batch. With `record_cache`, everything needed by
/// [`backward`] is retained.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    batch: &Batch<T>,
    record_cache: bool,
) -> Result<(Batch<T>, Option<Cache<T>>)> {
    params.arch.check_length(batch.len)?;
    let specs = params.arch.layers();
    let mut x = batch.data.clone();
    let mut d = Dims { channels: 1, batch: batch.rows, len: batch.len };
    let mut caches = Vec::with_capacity(if record_cache { specs.len() } else { 0 });

    for (spec, p) in specs.iter().zip(&params.layers) {
        let (mut y, od) = match spec.kind {
            LayerKind::Encoder | LayerKind::Latent => conv_of(spec).forward(&p.weight, &p.bias, &x, d),
            LayerKind::Decoder | LayerKind::Output => conv_t_of(spec).forward(&p.weight, &p.bias, &x, d),
        };
        if spec.kind != LayerKind::Output {
            layers::relu_inplace(&mut y);
        }
        let (next, nd, arg) = if spec.kind == LayerKind::Encoder {
            let (pooled, arg, pd) = layers::maxpool2(&y, od);
            (pooled, pd, arg)
        } else {
            (Vec::new(), od, Vec::new())
        };
        let input = std::mem::take(&mut x);
        if spec.kind == LayerKind::Encoder {
            if record_cache {
                caches.push(LayerCache { input, in_dims: d, act: y, pool_arg: arg });
            }
            x = next;
        } else {
            if record_cache {
                let act = if spec.kind == LayerKind::Output { Vec::new() } else { y.clone() };
                caches.push(LayerCache { input, in_dims: d, act, pool_arg: Vec::new() });
            }
            x = y;
        }
        d = nd;
    }
    debug_assert_eq!(d, Dims { channels: 1, batch: batch.rows, len: batch.len });

    let cache = record_cache.then(|| Cache {
        fingerprint: params.fingerprint(),
        rows: batch.rows,
        len: batch.len,
        layers: caches,
    });
    Ok((Batch { rows: batch.rows, len: batch.len, data: x }, cache))
}

/// Exact gradients of `Σ output_grad ⊙ forward(params, batch)` with respect
/// to every parameter and to the input batch.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    cache: &Cache<T>,
    output_grad: &Batch<T>,
) -> Result<(Gradients<T>, Batch<T>)> {
    if (output_grad.rows, output_grad.len) != (cache.rows, cache.len) {
        return Err(Error::ShapeMismatch(format!(
            "output gradient {}x{} does not match cached batch {}x{}",
            output_grad.rows, output_grad.len, cache.rows, cache.len
        )));
    }
    if cache.fingerprint != params.fingerprint() {
        return Err(Error::data("stale cache: parameters changed since the forward pass"));
    }
    let specs = params.arch.layers();
    if cache.layers.len() != specs.len() {
        return Err(Error::data("cache does not match architecture"));
    }
    let mut grads = Gradients::<T>::zeros(&params.arch)?;
    grads.seed = params.seed;
    let mut g = output_grad.data.clone();

    for (i, spec) in specs.iter().enumerate().rev() {
        let c = &cache.layers[i];
        let p = &params.layers[i];
        let gl = &mut grads.layers[i];
        if spec.kind == LayerKind::Encoder {
            g = layers::maxpool2_backward(&g, &c.pool_arg, c.act.len());
        }
        if spec.kind != LayerKind::Output {
            layers::relu_backward_inplace(&mut g, &c.act);
        }
        g = match spec.kind {
            LayerKind::Encoder | LayerKind::Latent => {
                conv_of(spec).backward(&p.weight, &c.input, c.in_dims, &g, &mut gl.weight, &mut gl.bias)
            }
            LayerKind::Decoder | LayerKind::Output => {
                conv_t_of(spec).backward(&p.weight, &c.input, c.in_dims, &g, &mut gl.weight, &mut gl.bias)
            }
        };
    }
    Ok((grads, Batch { rows: cache.rows, len: cache.len, data: g }))
}
