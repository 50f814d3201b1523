use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Savitzky-Golay weights for one window: row `i` of the returned matrix
/// evaluates the least-squares polynomial at window position `i`.
pub(crate) struct SavgolKernel {
    window: usize,
    eval: DMatrix<f64>,
}

impl SavgolKernel {
    pub fn new(window: usize, order: usize) -> Result<Self> {
        if window.is_multiple_of(2) || window < 3 {
            return Err(Error::param(format!("savgol window must be odd and ≥ 3, got {window}")));
        }
        if order >= window {
            return Err(Error::param(format!("savgol order {order} must be below the window {window}")));
        }
        let h = (window / 2) as f64;
        // Offsets scaled to [-1, 1] keep the Vandermonde matrix well conditioned.
        let vander = DMatrix::from_fn(window, order + 1, |r, c| ((r as f64 - h) / h.max(1.0)).powi(c as i32));
        let pinv = vander
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numeric(format!("savgol fit: {e}")))?;
        Ok(SavgolKernel { window, eval: vander * pinv })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        let w = self.window;
        if w > n {
            return Err(Error::param(format!("savgol window {w} exceeds spectrum length {n}")));
        }
        let h = w / 2;
        let mut out = vec![0.0; n];
        let dot = |row: usize, seg: &[f64]| (0..w).map(|j| self.eval[(row, j)] * seg[j]).sum::<f64>();
        for i in h..n - h {
            out[i] = dot(h, &x[i - h..=i + h]);
        }
        // Edges: evaluate the fit of the first/last full window.
        for i in 0..h {
            out[i] = dot(i, &x[..w]);
            out[n - 1 - i] = dot(w - 1 - i, &x[n - w..]);
        }
        Ok(out)
    }

    #[cfg(test)]
    pub fn center_row(&self) -> Vec<f64> {
        let h = self.window / 2;
        (0..self.window).map(|j| self.eval[(h, j)]).collect()
    }
}

pub fn savgol_filter(x: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    SavgolKernel::new(window, order)?.apply(x)
}
