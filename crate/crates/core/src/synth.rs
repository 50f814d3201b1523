//! Synthetic Raman-like hyperspectral maps: Lorentzian phase templates, a
//! smooth random partition of the grid into phases, and repeated noisy
//! acquisitions with shot, read and flicker noise.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;
use crate::spectrum::{AcquisitionSet, Axis, GridShape, HyperMap, Spectrum};

/// Below this expected photon count the exact Poisson sampler is used.
const POISSON_GAUSSIAN_SWITCH: f64 = 20.0;
const MAX_SIMILARITY: f64 = 0.99;
const LIBRARY_RETRIES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub center: f64,
    /// Full width at half maximum, cm⁻¹.
    pub width: f64,
    pub amplitude: f64,
}

impl Peak {
    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.center) / (0.5 * self.width);
        self.amplitude / (1.0 + u * u)
    }
}

/// Sum of Lorentzians sampled on `axis`.
pub fn lorentzian_sum(axis: &[f64], peaks: &[Peak]) -> Vec<f64> {
    axis.iter().map(|&x| peaks.iter().map(|p| p.eval(x)).sum()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakRanges {
    pub width: (f64, f64),
    pub amplitude: (f64, f64),
}

impl Default for PeakRanges {
    fn default() -> Self {
        PeakRanges { width: (4.0, 30.0), amplitude: (0.2, 1.0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseLibrary {
    axis: Axis,
    peaks: Vec<Vec<Peak>>,
    templates: Vec<Spectrum>,
}

impl PhaseLibrary {
    pub fn axis(&self) -> &Axis {
        &self.axis
    }

    pub fn templates(&self) -> &[Spectrum] {
        &self.templates
    }

    pub fn peaks(&self) -> &[Vec<Peak>] {
        &self.peaks
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Random phase templates, pairwise cosine similarity below 0.99.
pub fn gen_phase_library(
    axis: &Axis,
    n_phases: usize,
    peaks_per_phase: usize,
    ranges: PeakRanges,
    seed: u64,
) -> Result<PhaseLibrary> {
    gen_distinct_phase_library(axis, n_phases, peaks_per_phase, ranges, MAX_SIMILARITY, seed)
}

/// Like [`gen_phase_library`] with a caller-chosen similarity ceiling.
pub fn gen_distinct_phase_library(
    axis: &Axis,
    n_phases: usize,
    peaks_per_phase: usize,
    ranges: PeakRanges,
    max_similarity: f64,
    seed: u64,
) -> Result<PhaseLibrary> {
    if !(max_similarity > 0.0 && max_similarity <= 1.0) {
        return Err(Error::param("max_similarity must lie in (0, 1]"));
    }
    if n_phases < 2 {
        return Err(Error::param("need ≥ 2 phases"));
    }
    if peaks_per_phase < 1 {
        return Err(Error::param("need ≥ 1 peak per phase"));
    }
    if axis.len() < 2 {
        return Err(Error::param("axis too short for a phase library"));
    }
    let (lo, hi) = (axis[0], axis[axis.len() - 1]);
    let margin = 0.05 * (hi - lo);
    let mut rng = seeding::rng(seed, &[0x11b]);
    let mut peaks: Vec<Vec<Peak>> = Vec::with_capacity(n_phases);
    let mut shapes: Vec<Vec<f64>> = Vec::with_capacity(n_phases);

    for phase in 0..n_phases {
        let mut accepted = false;
        for _ in 0..LIBRARY_RETRIES {
            let candidate: Vec<Peak> = (0..peaks_per_phase)
                .map(|_| Peak {
                    center: rng.random_range(lo + margin..=hi - margin),
                    width: rng.random_range(ranges.width.0..=ranges.width.1),
                    amplitude: rng.random_range(ranges.amplitude.0..=ranges.amplitude.1),
                })
                .collect();
            let shape = lorentzian_sum(axis, &candidate);
            if shapes.iter().all(|s| cosine_similarity(s, &shape) < max_similarity) {
                peaks.push(candidate);
                shapes.push(shape);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::Numeric(format!(
                "could not draw phase {phase} distinct from the others after {LIBRARY_RETRIES} attempts"
            )));
        }
    }
    let templates = shapes
        .into_iter()
        .map(|s| Spectrum::new(axis.clone(), s))
        .collect::<Result<_>>()?;
    Ok(PhaseLibrary { axis: axis.clone(), peaks, templates })
}

/// Partition the grid into Voronoi blobs around `blob_count` distinct random
/// seed points and give each blob a phase. When `blob_count ≥` the number of
/// phases, every phase owns at least one blob (and so at least one point).
pub fn gen_phase_map(
    library: &PhaseLibrary,
    grid: GridShape,
    blob_count: usize,
    seed: u64,
) -> Result<(HyperMap, Vec<usize>)> {
    let n = grid.points();
    if n == 0 {
        return Err(Error::data("empty dataset"));
    }
    if blob_count == 0 {
        return Err(Error::param("blob_count must be positive"));
    }
    let blobs = blob_count.min(n);
    let mut rng = seeding::rng(seed, &[0xb10b]);
    let mut cells: Vec<usize> = (0..n).collect();
    cells.shuffle(&mut rng);
    let centers: Vec<(f64, f64)> = cells[..blobs]
        .iter()
        .map(|&p| ((p / grid.cols) as f64, (p % grid.cols) as f64))
        .collect();
    let k = library.len();
    let mut blob_phase: Vec<usize> = (0..blobs).map(|b| if b < k { b } else { rng.random_range(0..k) }).collect();
    blob_phase.shuffle(&mut rng);

    let labels: Vec<usize> = (0..n)
        .map(|p| {
            let (r, c) = ((p / grid.cols) as f64, (p % grid.cols) as f64);
            let nearest = centers
                .iter()
                .enumerate()
                .map(|(i, &(cr, cc))| (i, (r - cr).powi(2) + (c - cc).powi(2)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
                .expect("at least one blob");
            blob_phase[nearest]
        })
        .collect();
    let spectra = labels.iter().map(|&l| library.templates[l].clone()).collect();
    Ok((HyperMap::new(grid, spectra)?, labels))
}

/// Noise sources applied to each synthetic acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Shot noise variance per unit of expected signal.
    pub shot_scale: f64,
    /// Standard deviation of additive Gaussian read noise.
    pub read_sigma: f64,
    /// Relative standard deviation of a 1/f gain drift over repetitions.
    pub flicker_amp: f64,
    /// Additive fluorescence-like background: polynomial coefficients in the
    /// axis mapped to [-1, 1], per millisecond of integration.
    #[serde(default)]
    pub background: Vec<f64>,
    pub seed: u64,
}

impl NoiseModel {
    pub fn noiseless(seed: u64) -> Self {
        NoiseModel { shot_scale: 0.0, read_sigma: 0.0, flicker_amp: 0.0, background: Vec::new(), seed }
    }

    pub fn is_noisy(&self) -> bool {
        self.shot_scale > 0.0 || self.read_sigma > 0.0
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("shot_scale", self.shot_scale),
            ("read_sigma", self.read_sigma),
            ("flicker_amp", self.flicker_amp),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be a nonnegative number")));
            }
        }
        Ok(())
    }
}

pub(crate) fn background_curve(axis: &[f64], coeffs: &[f64]) -> Vec<f64> {
    let (lo, hi) = (axis[0], axis[axis.len() - 1]);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    axis.iter()
        .map(|&x| {
            let u = 2.0 * (x - lo) / span - 1.0;
            coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c)
        })
        .collect()
}

/// Zero-mean, unit-variance sequence with a 1/f power spectrum, by shaping
/// white noise in the frequency domain.
pub fn pink_noise<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    if len < 2 {
        return vec![0.0; len];
    }
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, v) in buf.iter_mut().enumerate().skip(1) {
        let f = k.min(len - k) as f64;
        *v /= f.sqrt();
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let re: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = re.iter().sum::<f64>() / len as f64;
    let sd = (re.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64).sqrt();
    if sd == 0.0 {
        return vec![0.0; len];
    }
    re.iter().map(|v| (v - mean) / sd).collect()
}

/// Draw `repetitions` noisy acquisitions of every point of `clean`.
///
/// The expected value of every acquisition is
/// `integration_time_ms · (clean + background)`; all noise terms are
/// zero-mean. Each (point, repetition) uses its own derived RNG stream.
pub fn synthesize_acquisitions(
    clean: &HyperMap,
    model: &NoiseModel,
    repetitions: usize,
    integration_time_ms: f64,
) -> Result<AcquisitionSet> {
    model.validate()?;
    if repetitions < 1 {
        return Err(Error::param("repetitions must be ≥ 1"));
    }
    if !(integration_time_ms > 0.0) {
        return Err(Error::param("integration time must be positive"));
    }
    if clean.spectra().iter().any(|s| s.intensities().iter().any(|&v| v < 0.0)) {
        return Err(Error::data("negative clean intensities"));
    }
    let axis = clean.axis().clone();
    let background = background_curve(&axis, &model.background);
    let read = Normal::new(0.0, model.read_sigma.max(0.0)).map_err(|e| Error::param(e.to_string()))?;

    let per_point: Vec<Vec<f32>> = clean
        .spectra()
        .par_iter()
        .enumerate()
        .map(|(p, s)| {
            let expected: Vec<f64> = s
                .intensities()
                .iter()
                .zip(&background)
                .map(|(c, b)| integration_time_ms * (c + b))
                .collect();
            let gain = if model.flicker_amp > 0.0 {
                let mut rng = seeding::rng(model.seed, &[p as u64, u64::MAX]);
                pink_noise(repetitions, &mut rng)
            } else {
                vec![0.0; repetitions]
            };
            let mut out = Vec::with_capacity(repetitions * expected.len());
            for (rep, g) in gain.iter().enumerate() {
                let mut rng = seeding::rng(model.seed, &[p as u64, rep as u64]);
                let factor = 1.0 + model.flicker_amp * g;
                for &mu in &expected {
                    let mut v = mu;
                    if model.shot_scale > 0.0 && mu > 0.0 {
                        let photons = mu / model.shot_scale;
                        v = if photons > POISSON_GAUSSIAN_SWITCH {
                            mu + (model.shot_scale * mu).sqrt() * rng.sample::<f64, _>(StandardNormal)
                        } else {
                            let draw: f64 = Poisson::new(photons).expect("positive rate").sample(&mut rng);
                            model.shot_scale * draw
                        };
                    }
                    v *= factor;
                    if model.read_sigma > 0.0 {
                        v += read.sample(&mut rng);
                    }
                    out.push(v as f32);
                }
            }
            out
        })
        .collect();
    AcquisitionSet::new(clean.grid(), integration_time_ms, repetitions, axis, per_point.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::uniform_axis;

    fn axis() -> Axis {
        uniform_axis(200.0, 2.0, 256)
    }

    #[test]
    fn library_is_deterministic() {
        let a = gen_phase_library(&axis(), 4, 5, PeakRanges::default(), 7).unwrap();
        let b = gen_phase_library(&axis(), 4, 5, PeakRanges::default(), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn library_needs_two_phases() {
        let err = gen_phase_library(&axis(), 1, 5, PeakRanges::default(), 1).unwrap_err();
        assert!(err.to_string().contains("need ≥ 2 phases"));
    }

    #[test]
    fn library_phases_are_distinct_and_nonnegative() {
        let lib = gen_phase_library(&axis(), 3, 4, PeakRanges::default(), 1).unwrap();
        let t = lib.templates();
        for i in 0..t.len() {
            assert!(t[i].intensities().iter().all(|&v| v >= 0.0));
            for j in 0..i {
                assert!(cosine_similarity(t[i].intensities(), t[j].intensities()) < 0.99);
            }
        }
    }

    #[test]
    fn single_blob_gives_uniform_labels() {
        let lib = gen_phase_library(&axis(), 3, 2, PeakRanges::default(), 1).unwrap();
        let (_, labels) = gen_phase_map(&lib, GridShape::new(6, 5), 1, 3).unwrap();
        assert!(labels.iter().all(|&l| l == labels[0]));
    }

    #[test]
    fn every_phase_present() {
        let lib = gen_phase_library(&axis(), 4, 3, PeakRanges::default(), 2).unwrap();
        let (map, labels) = gen_phase_map(&lib, GridShape::new(20, 20), 12, 5).unwrap();
        let (map2, labels2) = gen_phase_map(&lib, GridShape::new(20, 20), 12, 5).unwrap();
        assert_eq!(labels, labels2);
        assert_eq!(map, map2);
        let mut counts = [0usize; 4];
        for (p, &l) in labels.iter().enumerate() {
            assert!(l < 4);
            counts[l] += 1;
            assert_eq!(map.spectra()[p].intensities(), lib.templates()[l].intensities());
        }
        assert!(counts.iter().all(|&c| c >= 1), "{counts:?}");
    }

    #[test]
    fn zero_noise_is_scaled_clean() {
        let lib = gen_phase_library(&axis(), 2, 3, PeakRanges::default(), 2).unwrap();
        let (map, _) = gen_phase_map(&lib, GridShape::new(2, 2), 2, 1).unwrap();
        let set = synthesize_acquisitions(&map, &NoiseModel::noiseless(3), 3, 5.0).unwrap();
        for p in 0..4 {
            for r in 0..3 {
                let want: Vec<f32> = map.spectra()[p].intensities().iter().map(|v| (5.0 * v) as f32).collect();
                assert_eq!(set.raw(p, r), &want[..]);
            }
        }
    }

    #[test]
    fn negative_clean_rejected() {
        let ax = uniform_axis(0.0, 1.0, 4);
        let map = HyperMap::from_rows(GridShape::new(1, 1), ax, vec![vec![1.0, -1.0, 0.0, 0.0]]).unwrap();
        assert!(synthesize_acquisitions(&map, &NoiseModel::noiseless(0), 1, 1.0).is_err());
    }

    #[test]
    fn read_noise_statistics() {
        let ax = uniform_axis(0.0, 1.0, 6);
        let map = HyperMap::from_rows(GridShape::new(1, 1), ax, vec![vec![3.0; 6]]).unwrap();
        let model = NoiseModel { read_sigma: 1.0, ..NoiseModel::noiseless(11) };
        let reps = 10_000;
        let set = synthesize_acquisitions(&map, &model, reps, 1.0).unwrap();
        for c in 0..6 {
            let vals: Vec<f64> = (0..reps).map(|r| set.raw(0, r)[c] as f64).collect();
            let mean = vals.iter().sum::<f64>() / reps as f64;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
            assert!((mean - 3.0).abs() < 5.0 / (reps as f64).sqrt(), "mean {mean}");
            assert!((sd - 1.0).abs() < 0.03, "sd {sd}");
        }
    }

    #[test]
    fn shot_noise_variance_tracks_signal() {
        let ax = uniform_axis(0.0, 1.0, 2);
        // 5 photons per channel (exact Poisson) and 400 (Gaussian branch).
        let map = HyperMap::from_rows(GridShape::new(1, 1), ax, vec![vec![10.0, 800.0]]).unwrap();
        let model = NoiseModel { shot_scale: 2.0, ..NoiseModel::noiseless(4) };
        let reps = 20_000;
        let set = synthesize_acquisitions(&map, &model, reps, 1.0).unwrap();
        for (c, mu) in [(0usize, 10.0), (1, 800.0)] {
            let vals: Vec<f64> = (0..reps).map(|r| set.raw(0, r)[c] as f64).collect();
            let mean = vals.iter().sum::<f64>() / reps as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
            let sd_mean = (2.0 * mu / reps as f64).sqrt();
            assert!((mean - mu).abs() < 5.0 * sd_mean, "channel {c}: mean {mean}");
            assert!((var / (2.0 * mu) - 1.0).abs() < 0.05, "channel {c}: var {var}");
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let lib = gen_phase_library(&axis(), 2, 3, PeakRanges::default(), 2).unwrap();
        let (map, _) = gen_phase_map(&lib, GridShape::new(2, 3), 2, 1).unwrap();
        let model = NoiseModel { shot_scale: 0.5, read_sigma: 2.0, flicker_amp: 0.1, background: vec![1.0, 0.5], seed: 9 };
        let a = synthesize_acquisitions(&map, &model, 8, 10.0).unwrap();
        let b = synthesize_acquisitions(&map, &model, 8, 10.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn residual_error_shrinks_as_inverse_sqrt_reps() {
        let ax = uniform_axis(0.0, 1.0, 64);
        let map = HyperMap::from_rows(GridShape::new(4, 4), ax, vec![vec![1.0; 64]; 16]).unwrap();
        let model = NoiseModel { read_sigma: 1.0, ..NoiseModel::noiseless(21) };
        let max_r = 1024;
        let set = synthesize_acquisitions(&map, &model, max_r, 1.0).unwrap();
        let rs = [4usize, 16, 64, 256, 1024];
        let errs: Vec<f64> = rs
            .iter()
            .map(|&r| {
                let mut sq = 0.0;
                for p in 0..16 {
                    for c in 0..64 {
                        let m = (0..r).map(|k| set.raw(p, k)[c] as f64).sum::<f64>() / r as f64;
                        sq += (m - 1.0).powi(2);
                    }
                }
                (sq / (16.0 * 64.0)).sqrt()
            })
            .collect();
        let xs: Vec<f64> = rs.iter().map(|&r| (r as f64).ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope + 0.5).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn repetitions_are_uncorrelated_without_flicker() {
        let ax = uniform_axis(0.0, 1.0, 4000);
        let map = HyperMap::from_rows(GridShape::new(1, 1), ax, vec![vec![5.0; 4000]]).unwrap();
        let model = NoiseModel { read_sigma: 1.0, shot_scale: 0.1, ..NoiseModel::noiseless(2) };
        let set = synthesize_acquisitions(&map, &model, 4, 1.0).unwrap();
        let resid = |r: usize| -> Vec<f64> { set.raw(0, r).iter().map(|&v| v as f64 - 5.0).collect() };
        for a in 0..4 {
            for b in 0..a {
                let corr = cosine_similarity(&resid(a), &resid(b));
                assert!(corr.abs() < 0.05, "reps {a},{b}: {corr}");
            }
        }
    }

    #[test]
    fn pink_noise_is_normalized_and_low_frequency_heavy() {
        let mut rng = seeding::rng(1, &[]);
        let x = pink_noise(4096, &mut rng);
        let mean = x.iter().sum::<f64>() / 4096.0;
        let var = x.iter().map(|v| v * v).sum::<f64>() / 4096.0;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
        // Lag-1 autocorrelation is strongly positive for 1/f noise.
        let lag1 = x.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / 4095.0;
        assert!(lag1 > 0.5, "lag-1 autocorrelation {lag1}");
    }
}
