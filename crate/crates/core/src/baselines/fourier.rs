use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterShape {
    Hard,
    /// Cosine taper from the cutoff to 1.1 × cutoff.
    RaisedCosine,
}

const ROLLOFF: f64 = 0.1;

/// Gain at `f`, a frequency expressed as a fraction of Nyquist.
fn gain(f: f64, cutoff: f64, shape: FilterShape) -> f64 {
    match shape {
        FilterShape::Hard => (f <= cutoff) as u8 as f64,
        FilterShape::RaisedCosine => {
            let w = ROLLOFF * cutoff;
            if f <= cutoff {
                1.0
            } else if f >= cutoff + w {
                0.0
            } else {
                0.5 * (1.0 + (std::f64::consts::PI * (f - cutoff) / w).cos())
            }
        }
    }
}

/// Low-pass filter `x` in the discrete Fourier domain.
pub fn fourier_filter(x: &[f64], cutoff: f64, shape: FilterShape) -> Result<Vec<f64>> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(Error::param(format!("cutoff must lie in (0, 1], got {cutoff}")));
    }
    let n = x.len();
    if n == 0 {
        return Err(Error::data("empty spectrum"));
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n as f64 / 2.0;
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 / half;
        *c *= gain(f, cutoff, shape);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    Ok(buf.iter().map(|c| c.re / n as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dft(x: &[f64], sign: f64) -> Vec<(f64, f64)> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold((0.0, 0.0), |(re, im), (j, &v)| {
                    let a = sign * 2.0 * PI * (k * j) as f64 / n as f64;
                    (re + v * a.cos(), im + v * a.sin())
                })
            })
            .collect()
    }

    #[test]
    fn all_pass_and_eigenfunctions() {
        let x: Vec<f64> = (0..64).map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5).collect();
        for shape in [FilterShape::Hard, FilterShape::RaisedCosine] {
            let y = fourier_filter(&x, 1.0, shape).unwrap();
            assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-9));
        }
        let low: Vec<f64> = (0..64).map(|i| (2.0 * PI * 3.0 * i as f64 / 64.0).sin()).collect();
        let high: Vec<f64> = (0..64).map(|i| (2.0 * PI * 20.0 * i as f64 / 64.0).cos()).collect();
        let y = fourier_filter(&low, 0.25, FilterShape::Hard).unwrap();
        assert!(low.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-9));
        let y = fourier_filter(&high, 0.25, FilterShape::Hard).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn matches_naive_transform() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.77).sin() + 0.1 * i as f64).collect();
        let spec = naive_dft(&x, -1.0);
        let n = x.len();
        // Filter by hand with the naive transform, then invert naively.
        let filtered: Vec<(f64, f64)> = spec
            .iter()
            .enumerate()
            .map(|(k, &(re, im))| {
                let g = gain(k.min(n - k) as f64 / (n as f64 / 2.0), 0.3, FilterShape::RaisedCosine);
                (re * g, im * g)
            })
            .collect();
        let back: Vec<f64> = (0..n)
            .map(|j| {
                filtered.iter().enumerate().fold(0.0, |acc, (k, &(re, im))| {
                    let a = 2.0 * PI * (k * j) as f64 / n as f64;
                    acc + re * a.cos() - im * a.sin()
                }) / n as f64
            })
            .collect();
        let y = fourier_filter(&x, 0.3, FilterShape::RaisedCosine).unwrap();
        assert!(back.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn hard_filter_does_not_add_energy() {
        let x: Vec<f64> = (0..50).map(|i| ((i * 31) % 17) as f64).collect();
        let y = fourier_filter(&x, 0.2, FilterShape::Hard).unwrap();
        let e = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        assert!(e(&y) <= e(&x) + 1e-9);
        assert!(fourier_filter(&x, 0.0, FilterShape::Hard).is_err());
        assert!(fourier_filter(&x, 1.5, FilterShape::Hard).is_err());
    }
}
