//! Spectral preprocessing: crop and resample onto a fixed channel count,
//! cosmic-ray despiking, polynomial baseline removal, L2 normalization with
//! norm bookkeeping, and the averaged-reference / repetition-subset branches.
//!
//! Per-spectrum order is fixed: standardize → despike → baseline → normalize.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;
use crate::spectrum::{l2_norm, AcquisitionSet, Axis, HyperMap, Spectrum};

pub const STANDARD_LENGTH: usize = 736;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DespikeParams {
    /// Length of the window used for local statistics, in channels.
    pub window: usize,
    /// Detection threshold in multiples of the local standard deviation.
    pub amp_threshold: f64,
    /// Widest run of flagged channels still treated as a spike.
    pub max_width: usize,
    pub max_iterations: usize,
}

impl Default for DespikeParams {
    fn default() -> Self {
        DespikeParams { window: 40, amp_threshold: 5.0, max_width: 2, max_iterations: 10 }
    }
}

impl DespikeParams {
    fn validate(&self) -> Result<()> {
        if self.window < 8 {
            return Err(Error::param("despike window must be ≥ 8"));
        }
        if !(self.amp_threshold > 0.0) {
            return Err(Error::param("despike threshold must be positive"));
        }
        if self.max_width < 1 || self.max_iterations < 1 {
            return Err(Error::param("despike max_width and max_iterations must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub degree: usize,
    pub clip_iterations: usize,
    /// Points above `fit + clip_factor · residual_std` are clipped to the fit.
    pub clip_factor: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams { degree: 4, clip_iterations: 20, clip_factor: 0.0 }
    }
}

/// Crop `crop_lo`/`crop_hi` channels from the ends, then bring the spectrum
/// to exactly `target_len` channels: plain truncation when the crop already
/// leaves that many, otherwise linear interpolation onto an evenly spaced
/// axis spanning the cropped range.
pub fn standardize(spectrum: &Spectrum, crop_lo: usize, crop_hi: usize, target_len: usize) -> Result<Spectrum> {
    let n = spectrum.len();
    if crop_lo + crop_hi >= n {
        return Err(Error::param(format!("crop ({crop_lo}, {crop_hi}) removes all {n} channels")));
    }
    let axis = &spectrum.axis()[crop_lo..n - crop_hi];
    let y = &spectrum.intensities()[crop_lo..n - crop_hi];
    let m = axis.len();
    if target_len == 0 || target_len > m {
        return Err(Error::param(format!(
            "target length {target_len} exceeds the {m} channels left after cropping"
        )));
    }
    if target_len == m {
        let s = Spectrum::new(axis.into(), y.to_vec())?;
        return s.with_norm_original(spectrum.norm_original());
    }
    if target_len == 1 {
        return Spectrum::new(vec![axis[0]].into(), vec![y[0]]);
    }
    let (lo, hi) = (axis[0], axis[m - 1]);
    let step = (hi - lo) / (target_len - 1) as f64;
    let new_axis: Vec<f64> = (0..target_len)
        .map(|i| if i == target_len - 1 { hi } else { lo + step * i as f64 })
        .collect();
    let mut seg = 0;
    let values = new_axis
        .iter()
        .map(|&x| {
            while seg + 2 < m && axis[seg + 1] < x {
                seg += 1;
            }
            let (x0, x1) = (axis[seg], axis[seg + 1]);
            let t = (x - x0) / (x1 - x0);
            y[seg] + t * (y[seg + 1] - y[seg])
        })
        .collect();
    Spectrum::new(new_axis.into(), values)
}

/// Mean and standard deviation of the window around `i`, excluding
/// `i ± max_width`. Peaks inside the window inflate the spread, so only
/// features far narrower than the window stand out.
fn local_stats(y: &[f64], i: usize, p: &DespikeParams) -> Option<(f64, f64)> {
    let half = p.window / 2;
    let lo = i.saturating_sub(half);
    let hi = (i + half + 1).min(y.len());
    let ex_lo = i.saturating_sub(p.max_width);
    let ex_hi = i + p.max_width;
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for &v in (lo..hi).filter(|&j| j < ex_lo || j > ex_hi).map(|j| &y[j]) {
        n += 1;
        sum += v;
        sq += v * v;
    }
    if n < 3 {
        return None;
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0);
    Some((mean, var.sqrt()))
}

/// One detection pass; returns the flagged runs that qualify as spikes.
fn find_spikes(y: &[f64], p: &DespikeParams) -> Vec<(usize, usize)> {
    let flagged: Vec<bool> = (0..y.len())
        .map(|i| match local_stats(y, i, p) {
            Some((level, sd)) => y[i] - level > p.amp_threshold * sd,
            None => false,
        })
        .collect();
    let mut runs = Vec::new();
    let mut i = 0;
    while i < y.len() {
        if flagged[i] {
            let start = i;
            while i < y.len() && flagged[i] {
                i += 1;
            }
            if i - start <= p.max_width && !(start == 0 && i == y.len()) {
                runs.push((start, i));
            }
        } else {
            i += 1;
        }
    }
    runs
}

/// Iteratively remove narrow positive spikes, replacing each run by linear
/// interpolation between its flanking channels. Returns the cleaned spectrum
/// and the sorted positions of every replaced channel.
pub fn despike(spectrum: &Spectrum, params: &DespikeParams) -> Result<(Spectrum, Vec<usize>)> {
    params.validate()?;
    if spectrum.len() <= params.window {
        return Err(Error::param(format!(
            "spectrum of {} channels is not longer than the despike window {}",
            spectrum.len(),
            params.window
        )));
    }
    let mut y = spectrum.intensities().to_vec();
    let mut positions = Vec::new();
    for _ in 0..params.max_iterations {
        let runs = find_spikes(&y, params);
        if runs.is_empty() {
            break;
        }
        for (s, e) in runs {
            let left = if s > 0 { Some(y[s - 1]) } else { None };
            let right = y.get(e).copied();
            let (a, b) = match (left, right) {
                (Some(a), Some(b)) => (a, b),
                (Some(a), None) => (a, a),
                (None, Some(b)) => (b, b),
                (None, None) => unreachable!("run spans the whole spectrum"),
            };
            let span = (e - s + 1) as f64;
            for (k, j) in (s..e).enumerate() {
                let t = (k + 1) as f64 / span;
                y[j] = a + t * (b - a);
                positions.push(j);
            }
        }
    }
    positions.sort_unstable();
    positions.dedup();
    Ok((spectrum.with_intensities(y), positions))
}

/// Least-squares projector for polynomials of `degree` on `axis` mapped to
/// [-1, 1]. Returns the (n × n)-free pair (Vandermonde, pseudo-inverse).
fn poly_projector(axis: &[f64], degree: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = axis.len();
    let (lo, hi) = (axis[0], axis[n - 1]);
    if !(hi > lo) {
        return Err(Error::Numeric("rank-deficient baseline fit: constant axis".into()));
    }
    let v = DMatrix::from_fn(n, degree + 1, |i, j| (2.0 * (axis[i] - lo) / (hi - lo) - 1.0).powi(j as i32));
    let svd = v.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= smax * 1e-12 {
        return Err(Error::Numeric("rank-deficient baseline fit".into()));
    }
    let pinv = svd.pseudo_inverse(0.0).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok((v, pinv))
}

/// Subtract an iteratively clipped least-squares polynomial background.
pub fn baseline_correct(spectrum: &Spectrum, params: &BaselineParams) -> Result<Spectrum> {
    if params.clip_iterations < 1 {
        return Err(Error::param("clip_iterations must be ≥ 1"));
    }
    if spectrum.len() <= params.degree + 1 {
        return Err(Error::param(format!(
            "{} channels cannot support a degree-{} baseline",
            spectrum.len(),
            params.degree
        )));
    }
    let (v, pinv) = poly_projector(spectrum.axis(), params.degree)?;
    let y = DVector::from_column_slice(spectrum.intensities());
    let fit_of = |w: &DVector<f64>| &v * (&pinv * w);
    let mut work = y.clone();
    for _ in 0..params.clip_iterations {
        let fit = fit_of(&work);
        let resid = &work - &fit;
        let n = resid.len() as f64;
        let mean = resid.sum() / n;
        let sd = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        for (w, f) in work.iter_mut().zip(fit.iter()) {
            let cap = f + params.clip_factor * sd;
            if *w > cap {
                *w = *f;
            }
        }
    }
    let baseline = fit_of(&work);
    Ok(spectrum.with_intensities((y - baseline).iter().copied().collect()))
}

/// Scale to unit L2 norm, recording the original norm.
pub fn l2_normalize(spectrum: &Spectrum) -> Result<Spectrum> {
    let norm = spectrum.l2_norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::data("zero-norm spectrum"));
    }
    spectrum
        .with_intensities(spectrum.intensities().iter().map(|v| v / norm).collect())
        .with_norm_original(Some(norm))
}

/// Undo [`l2_normalize`]: multiply by the stored norm and clear it.
pub fn rescale(spectrum: &Spectrum) -> Result<Spectrum> {
    let norm = spectrum
        .norm_original()
        .ok_or_else(|| Error::data("spectrum has no recorded original norm"))?;
    spectrum
        .with_intensities(spectrum.intensities().iter().map(|v| v * norm).collect())
        .with_norm_original(None)
}

/// Per-point mean over repetitions (apply [`preprocess_set`] first to obtain
/// the despiked, baseline-corrected reference).
pub fn averaged_reference(set: &AcquisitionSet) -> Result<HyperMap> {
    let c = set.channels();
    let r = set.repetitions();
    let spectra = (0..set.points())
        .map(|p| {
            let mut acc = vec![0.0f64; c];
            for rep in 0..r {
                for (a, &v) in acc.iter_mut().zip(set.raw(p, rep)) {
                    *a += v as f64;
                }
            }
            acc.iter_mut().for_each(|a| *a /= r as f64);
            Spectrum::new(set.axis().clone(), acc)
        })
        .collect::<Result<Vec<_>>>()?;
    HyperMap::new(set.grid(), spectra)
}

/// Seeded per-point random subset of `keep` repetitions, kept in acquisition
/// order.
pub fn downsample_repetitions(set: &AcquisitionSet, keep: usize, seed: u64) -> Result<AcquisitionSet> {
    let r = set.repetitions();
    if keep == 0 || keep > r {
        return Err(Error::param(format!("cannot keep {keep} of {r} repetitions")));
    }
    if keep == r {
        return Ok(set.clone());
    }
    let per_point: Vec<Vec<usize>> = (0..set.points())
        .map(|p| {
            let mut idx: Vec<usize> = (0..r).collect();
            idx.shuffle(&mut seeding::rng(seed, &[p as u64]));
            let mut chosen = idx[..keep].to_vec();
            chosen.sort_unstable();
            chosen
        })
        .collect();
    set.select_reps(&per_point)
}

/// Which per-spectrum steps to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub crop_lo: usize,
    pub crop_hi: usize,
    /// `None` keeps the cropped length.
    pub target_len: Option<usize>,
    pub despike: Option<DespikeParams>,
    pub baseline: Option<BaselineParams>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            crop_lo: 0,
            crop_hi: 0,
            target_len: Some(STANDARD_LENGTH),
            despike: Some(DespikeParams::default()),
            baseline: Some(BaselineParams::default()),
        }
    }
}

/// standardize → despike → baseline for one spectrum (no normalization).
pub fn preprocess_spectrum(s: &Spectrum, cfg: &PreprocessConfig) -> Result<Spectrum> {
    let target = cfg.target_len.unwrap_or(s.len().saturating_sub(cfg.crop_lo + cfg.crop_hi));
    let mut s = standardize(s, cfg.crop_lo, cfg.crop_hi, target)?;
    if let Some(p) = &cfg.despike {
        s = despike(&s, p)?.0;
    }
    if let Some(p) = &cfg.baseline {
        s = baseline_correct(&s, p)?;
    }
    Ok(s)
}

/// Apply [`preprocess_spectrum`] to every acquisition of a set.
pub fn preprocess_set(set: &AcquisitionSet, cfg: &PreprocessConfig) -> Result<AcquisitionSet> {
    let first = preprocess_spectrum(&set.spectrum(0, 0), cfg)?;
    let axis: Axis = first.axis().clone();
    let data: Vec<Vec<Vec<f64>>> = {
        use rayon::prelude::*;
        (0..set.points())
            .into_par_iter()
            .map(|p| {
                (0..set.repetitions())
                    .map(|r| preprocess_spectrum(&set.spectrum(p, r), cfg).map(Spectrum::into_intensities))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?
    };
    let out = AcquisitionSet::from_spectra(set.grid(), set.integration_time_ms(), axis, &data)?;
    match set.point_coords() {
        Some(c) => out.with_point_coords(c.to_vec()),
        None => Ok(out),
    }
}

/// L2 norm of a raw vector, exposed for callers that work on plain slices.
pub fn norm(v: &[f64]) -> f64 {
    l2_norm(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{uniform_axis, GridShape};
    use crate::synth::{lorentzian_sum, Peak};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn spec(v: Vec<f64>) -> Spectrum {
        Spectrum::new(uniform_axis(100.0, 1.5, v.len()), v).unwrap()
    }

    #[test]
    fn standardize_identity() {
        let s = spec((0..736).map(|i| (i as f64).sin()).collect());
        assert_eq!(standardize(&s, 0, 0, 736).unwrap(), s);
    }

    #[test]
    fn standardize_exact_truncation() {
        let s = spec((0..800).map(|i| i as f64 * 0.1).collect());
        let out = standardize(&s, 32, 32, 736).unwrap();
        assert_eq!(out.intensities(), &s.intensities()[32..768]);
        assert_eq!(&out.axis()[..], &s.axis()[32..768]);
    }

    #[test]
    fn standardize_preserves_linear_ramp() {
        let axis: Axis = (0..1000).map(|i| 300.0 + 1.7 * i as f64 + 0.001 * (i as f64).powi(2)).collect();
        let s = Spectrum::new(axis, (0..1000).map(|_| 0.0).collect()).unwrap();
        let ramp = |x: f64| 2.5 * x - 40.0;
        let s = s.with_intensities(s.axis().iter().map(|&x| ramp(x)).collect());
        let out = standardize(&s, 0, 0, 736).unwrap();
        assert_eq!(out.len(), 736);
        assert!(out.axis().windows(2).all(|w| w[1] > w[0]));
        for (&x, &y) in out.axis().iter().zip(out.intensities()) {
            assert!((y - ramp(x)).abs() <= 1e-12 * ramp(x).abs().max(1.0));
        }
    }

    #[test]
    fn standardize_rejects_overlong_target() {
        let s = spec(vec![0.0; 100]);
        assert!(standardize(&s, 10, 10, 81).is_err());
    }

    #[test]
    fn flat_spectrum_has_no_spikes() {
        let s = spec(vec![1.0; 200]);
        let (out, pos) = despike(&s, &DespikeParams::default()).unwrap();
        assert_eq!(out, s);
        assert!(pos.is_empty());
    }

    #[test]
    fn single_spike_replaced_by_neighbor_mean() {
        let mut rng = seeding::rng(3, &[]);
        let mut v: Vec<f64> = (0..200).map(|_| 1.0 + 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
        let clean = v.clone();
        v[90] += 50.0 * 0.01;
        let (out, pos) = despike(&spec(v), &DespikeParams::default()).unwrap();
        assert_eq!(pos, vec![90]);
        let want = 0.5 * (clean[89] + clean[91]);
        assert!((out.intensities()[90] - want).abs() < 1e-9);
        for i in (0..200).filter(|&i| i != 90) {
            assert_eq!(out.intensities()[i], clean[i]);
        }
    }

    #[test]
    fn broad_peak_untouched() {
        let axis = uniform_axis(0.0, 1.0, 300);
        let y = lorentzian_sum(&axis, &[Peak { center: 150.0, width: 20.0, amplitude: 10.0 }]);
        let s = Spectrum::new(axis, y).unwrap();
        let (out, pos) = despike(&s, &DespikeParams::default()).unwrap();
        assert!(pos.is_empty());
        assert_eq!(out, s);
    }

    #[test]
    fn despike_is_idempotent() {
        let mut rng = seeding::rng(5, &[]);
        let mut v: Vec<f64> = (0..300).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        v[20] += 60.0;
        v[21] += 40.0;
        v[150] += 80.0;
        v[299] += 70.0;
        let p = DespikeParams::default();
        let (once, pos) = despike(&spec(v), &p).unwrap();
        for injected in [20, 21, 150, 299] {
            assert!(pos.contains(&injected), "{pos:?}");
        }
        let (twice, pos2) = despike(&once, &p).unwrap();
        assert_eq!(once, twice);
        assert!(pos2.is_empty());
    }

    #[test]
    fn despike_rejects_short_spectra() {
        assert!(despike(&spec(vec![0.0; 40]), &DespikeParams::default()).is_err());
    }

    #[test]
    fn baseline_annihilates_quartic() {
        let axis = uniform_axis(200.0, 2.0, 500);
        let q = |x: f64| {
            let u = (x - 700.0) / 500.0;
            3.0 + 2.0 * u - 5.0 * u * u + 0.7 * u.powi(3) + 4.0 * u.powi(4)
        };
        let y: Vec<f64> = axis.iter().map(|&x| q(x)).collect();
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let out = baseline_correct(&Spectrum::new(axis, y).unwrap(), &BaselineParams::default()).unwrap();
        assert!(out.intensities().iter().all(|v| v.abs() < 1e-6 * scale));
    }

    #[test]
    fn baseline_of_zero_is_zero() {
        let out = baseline_correct(&spec(vec![0.0; 100]), &BaselineParams::default()).unwrap();
        assert!(out.intensities().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn baseline_recovers_peak_heights() {
        let axis = uniform_axis(200.0, 2.0, 736);
        let peaks = [
            Peak { center: 500.0, width: 8.0, amplitude: 5.0 },
            Peak { center: 900.0, width: 6.0, amplitude: 3.0 },
            Peak { center: 1400.0, width: 10.0, amplitude: 4.0 },
        ];
        let bg: Vec<f64> = axis
            .iter()
            .map(|&x| {
                let u = (x - 935.0) / 735.0;
                20.0 + 6.0 * u - 8.0 * u * u + 3.0 * u.powi(3) + 2.0 * u.powi(4)
            })
            .collect();
        let clean = lorentzian_sum(&axis, &peaks);
        let y: Vec<f64> = clean.iter().zip(&bg).map(|(a, b)| a + b).collect();
        let out = baseline_correct(&Spectrum::new(axis.clone(), y).unwrap(), &BaselineParams::default()).unwrap();
        for p in &peaks {
            let idx = axis.iter().position(|&x| (x - p.center).abs() < 1e-9).unwrap();
            let got = out.intensities()[idx];
            assert!((got - clean[idx]).abs() < 0.05 * clean[idx], "peak at {}: {got} vs {}", p.center, clean[idx]);
        }
    }

    #[test]
    fn baseline_too_few_channels() {
        assert!(baseline_correct(&spec(vec![1.0; 5]), &BaselineParams::default()).is_err());
    }

    #[test]
    fn normalize_examples() {
        let s = spec(vec![3.0, 4.0]);
        let n = l2_normalize(&s).unwrap();
        assert_eq!(n.intensities(), &[0.6, 0.8]);
        assert_eq!(n.norm_original(), Some(5.0));
        let unit = spec(vec![1.0, 0.0]);
        let n = l2_normalize(&unit).unwrap();
        assert_eq!(n.intensities(), unit.intensities());
        assert_eq!(n.norm_original(), Some(1.0));
        let err = l2_normalize(&spec(vec![0.0, 0.0])).unwrap_err();
        assert!(err.to_string().contains("zero-norm spectrum"));
    }

    #[test]
    fn rescale_examples() {
        assert!(rescale(&spec(vec![1.0, 2.0])).is_err());
        let unit = spec(vec![0.6, 0.8]).with_norm_original(Some(2.5)).unwrap();
        let r = rescale(&unit).unwrap();
        assert!((r.l2_norm() - 2.5).abs() < 1e-12);
        assert_eq!(r.norm_original(), None);
    }

    fn set_of(reps: &[Vec<f64>]) -> AcquisitionSet {
        let axis = uniform_axis(0.0, 1.0, reps[0].len());
        AcquisitionSet::from_spectra(GridShape::new(1, 1), 5.0, axis, &[reps.to_vec()]).unwrap()
    }

    #[test]
    fn averaged_reference_examples() {
        let one = set_of(&[vec![1.0, 2.0, 3.0]]);
        assert_eq!(averaged_reference(&one).unwrap().spectra()[0].intensities(), &[1.0, 2.0, 3.0]);
        let two = set_of(&[vec![1.0, 1.0], vec![3.0, 3.0]]);
        assert_eq!(averaged_reference(&two).unwrap().spectra()[0].intensities(), &[2.0, 2.0]);
    }

    #[test]
    fn downsample_examples() {
        let reps: Vec<Vec<f64>> = (0..30).map(|r| vec![r as f64; 4]).collect();
        let set = set_of(&reps);
        assert_eq!(downsample_repetitions(&set, 30, 1).unwrap(), set);
        let d = downsample_repetitions(&set, 20, 1).unwrap();
        assert_eq!(d.repetitions(), 20);
        let mut seen: Vec<f32> = (0..20).map(|r| d.raw(0, r)[0]).collect();
        seen.dedup();
        assert_eq!(seen.len(), 20);
        assert_eq!(d, downsample_repetitions(&set, 20, 1).unwrap());
        assert_ne!(d, downsample_repetitions(&set, 20, 2).unwrap());
        assert!(downsample_repetitions(&set, 31, 1).is_err());
    }
}
