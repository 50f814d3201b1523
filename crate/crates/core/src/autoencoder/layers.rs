//! Layer primitives on activations laid out as `(channels, batch, length)`,
//! flattened row-major. Convolutions are lowered to a single GEMM over the
//! whole batch.

use super::real::Real;

/// Shape of an activation tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub channels: usize,
    pub batch: usize,
    pub len: usize,
}

impl Dims {
    pub fn numel(&self) -> usize {
        self.channels * self.batch * self.len
    }

    fn cols(&self) -> usize {
        self.batch * self.len
    }
}

/// Stride-1 "same" convolution. `weight` is `(out, in, kernel)`.
#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub pad: usize,
}

impl Conv {
    pub fn out_dims(&self, d: Dims) -> Dims {
        Dims {
            channels: self.out_ch,
            batch: d.batch,
            len: d.len + 2 * self.pad + 1 - self.kernel,
        }
    }

    /// col[(i*K + k), (b*L_out + l)] = x[i, b, l + k - pad]
    fn im2col<T: Real>(&self, x: &[T], d: Dims, out_len: usize) -> Vec<T> {
        let k_sz = self.kernel;
        let cols = d.batch * out_len;
        let mut col = vec![T::zero(); self.in_ch * k_sz * cols];
        for i in 0..self.in_ch {
            for k in 0..k_sz {
                let row = &mut col[(i * k_sz + k) * cols..(i * k_sz + k + 1) * cols];
                let shift = k as isize - self.pad as isize;
                let lo = (-shift).max(0) as usize;
                let hi = (d.len as isize - shift).min(out_len as isize).max(0) as usize;
                if lo >= hi {
                    continue;
                }
                for b in 0..d.batch {
                    let src = &x[(i * d.batch + b) * d.len..][..d.len];
                    let dst = &mut row[b * out_len..(b + 1) * out_len];
                    let s0 = (lo as isize + shift) as usize;
                    dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                }
            }
        }
        col
    }

    fn col2im<T: Real>(&self, col: &[T], d: Dims, out_len: usize) -> Vec<T> {
        let k_sz = self.kernel;
        let cols = d.batch * out_len;
        let mut dx = vec![T::zero(); d.numel()];
        for i in 0..self.in_ch {
            for k in 0..k_sz {
                let row = &col[(i * k_sz + k) * cols..(i * k_sz + k + 1) * cols];
                let shift = k as isize - self.pad as isize;
                let lo = (-shift).max(0) as usize;
                let hi = (d.len as isize - shift).min(out_len as isize).max(0) as usize;
                if lo >= hi {
                    continue;
                }
                for b in 0..d.batch {
                    let dst = &mut dx[(i * d.batch + b) * d.len..][..d.len];
                    let src = &row[b * out_len..(b + 1) * out_len];
                    let s0 = (lo as isize + shift) as usize;
                    for (o, s) in dst[s0..s0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                        *o = *o + *s;
                    }
                }
            }
        }
        dx
    }

    pub fn forward<T: Real>(&self, weight: &[T], bias: &[T], x: &[T], d: Dims) -> (Vec<T>, Dims) {
        let od = self.out_dims(d);
        let col = self.im2col(x, d, od.len);
        let ck = self.in_ch * self.kernel;
        let n = od.cols();
        let mut y = vec![T::zero(); od.numel()];
        for (o, row) in y.chunks_exact_mut(n).enumerate() {
            row.fill(bias[o]);
        }
        T::gemm(
            self.out_ch, ck, n, T::one(), weight, ck as isize, 1, &col, n as isize, 1, T::one(), &mut y,
            n as isize, 1,
        );
        (y, od)
    }

    /// Accumulates into `dw`/`db`, returns the input gradient.
    pub fn backward<T: Real>(
        &self,
        weight: &[T],
        x: &[T],
        d: Dims,
        dy: &[T],
        dw: &mut [T],
        db: &mut [T],
    ) -> Vec<T> {
        let od = self.out_dims(d);
        let col = self.im2col(x, d, od.len);
        let ck = self.in_ch * self.kernel;
        let n = od.cols();
        for (o, row) in dy.chunks_exact(n).enumerate() {
            db[o] = db[o] + row.iter().copied().sum::<T>();
        }
        // dW += dY · colᵀ
        T::gemm(
            self.out_ch, n, ck, T::one(), dy, n as isize, 1, &col, 1, n as isize, T::one(), dw,
            ck as isize, 1,
        );
        // dcol = Wᵀ · dY
        let mut dcol = vec![T::zero(); ck * n];
        T::gemm(
            ck, self.out_ch, n, T::one(), weight, 1, ck as isize, dy, n as isize, 1, T::zero(),
            &mut dcol, n as isize, 1,
        );
        self.col2im(&dcol, d, od.len)
    }
}

/// Transposed convolution. `weight` is `(in, out, kernel)`, the layout used
/// by common deep-learning frameworks for this layer type.
#[derive(Debug, Clone, Copy)]
pub struct ConvTranspose {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub output_padding: usize,
}

impl ConvTranspose {
    pub fn out_dims(&self, d: Dims) -> Dims {
        Dims {
            channels: self.out_ch,
            batch: d.batch,
            len: (d.len - 1) * self.stride + self.kernel + self.output_padding - 2 * self.pad,
        }
    }

    // Output position fed by input position `l` through tap `k`.
    #[inline]
    fn target(&self, l: usize, k: usize) -> isize {
        (l * self.stride + k) as isize - self.pad as isize
    }

    pub fn forward<T: Real>(&self, weight: &[T], bias: &[T], x: &[T], d: Dims) -> (Vec<T>, Dims) {
        let od = self.out_dims(d);
        let ok = self.out_ch * self.kernel;
        let n = d.cols();
        // Z[(o,k), (b,l)] = Σ_i W[i,o,k] x[i,b,l]
        let mut z = vec![T::zero(); ok * n];
        T::gemm(
            ok, self.in_ch, n, T::one(), weight, 1, ok as isize, x, n as isize, 1, T::zero(), &mut z,
            n as isize, 1,
        );
        let mut y = vec![T::zero(); od.numel()];
        for o in 0..self.out_ch {
            for b in 0..d.batch {
                let dst = &mut y[(o * d.batch + b) * od.len..][..od.len];
                dst.fill(bias[o]);
                for k in 0..self.kernel {
                    let src = &z[(o * self.kernel + k) * n + b * d.len..][..d.len];
                    for (l, &v) in src.iter().enumerate() {
                        let j = self.target(l, k);
                        if j >= 0 && (j as usize) < od.len {
                            dst[j as usize] = dst[j as usize] + v;
                        }
                    }
                }
            }
        }
        (y, od)
    }

    pub fn backward<T: Real>(
        &self,
        weight: &[T],
        x: &[T],
        d: Dims,
        dy: &[T],
        dw: &mut [T],
        db: &mut [T],
    ) -> Vec<T> {
        let od = self.out_dims(d);
        let ok = self.out_ch * self.kernel;
        let n = d.cols();
        for o in 0..self.out_ch {
            let row = &dy[o * od.cols()..(o + 1) * od.cols()];
            db[o] = db[o] + row.iter().copied().sum::<T>();
        }
        // dZ[(o,k), (b,l)] = dy[o, b, target(l,k)]
        let mut dz = vec![T::zero(); ok * n];
        for o in 0..self.out_ch {
            for b in 0..d.batch {
                let src = &dy[(o * d.batch + b) * od.len..][..od.len];
                for k in 0..self.kernel {
                    let dst = &mut dz[(o * self.kernel + k) * n + b * d.len..][..d.len];
                    for (l, v) in dst.iter_mut().enumerate() {
                        let j = self.target(l, k);
                        if j >= 0 && (j as usize) < od.len {
                            *v = src[j as usize];
                        }
                    }
                }
            }
        }
        // dW[i, (o,k)] += Σ_n x[i,n] dZ[(o,k),n]
        T::gemm(
            self.in_ch, n, ok, T::one(), x, n as isize, 1, &dz, 1, n as isize, T::one(), dw,
            ok as isize, 1,
        );
        // dx = W · dZ  with W viewed as (in × out·k)
        let mut dx = vec![T::zero(); d.numel()];
        T::gemm(
            self.in_ch, ok, n, T::one(), weight, ok as isize, 1, &dz, n as isize, 1, T::zero(),
            &mut dx, n as isize, 1,
        );
        dx
    }
}

/// Max-pool with window 2, stride 2. Ties resolve to the lower index.
/// Returns the pooled tensor and, per output element, the absolute index of
/// the selected input element.
pub fn maxpool2<T: Real>(x: &[T], d: Dims) -> (Vec<T>, Vec<u32>, Dims) {
    let od = Dims {
        len: d.len / 2,
        ..d
    };
    let mut y = Vec::with_capacity(od.numel());
    let mut arg = Vec::with_capacity(od.numel());
    for row in 0..d.channels * d.batch {
        let base = row * d.len;
        for j in 0..od.len {
            let a = base + 2 * j;
            let pick = if x[a + 1] > x[a] { a + 1 } else { a };
            y.push(x[pick]);
            arg.push(pick as u32);
        }
    }
    (y, arg, od)
}

pub fn maxpool2_backward<T: Real>(dy: &[T], arg: &[u32], in_numel: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); in_numel];
    for (&g, &i) in dy.iter().zip(arg) {
        dx[i as usize] = dx[i as usize] + g;
    }
    dx
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Masks `dy` by the rectifier's active set, given its output.
pub fn relu_backward_inplace<T: Real>(dy: &mut [T], out: &[T]) {
    for (g, &o) in dy.iter_mut().zip(out) {
        if !(o > T::zero()) {
            *g = T::zero();
        }
    }
}
