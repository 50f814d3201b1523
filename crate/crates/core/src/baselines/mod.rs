//! Classical denoisers and their RMSE-driven hyperparameter search.

mod fourier;
mod savgol;
mod wavelet;

use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use fourier::{fourier_filter, FilterShape};
pub use savgol::savgol_filter;
pub use wavelet::{wavelet_denoise, wavelet_roundtrip, ThresholdStrategy, WaveletFamily};

use crate::error::{Error, Result};
use crate::metrics::{rmse, MetricsReport};
use crate::seeding;
use crate::spectrum::{AcquisitionSet, HyperMap, Spectrum};
use crate::trainer::{grouped_kfold, reference_labels, score_fold, EvalOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Savgol,
    Fourier,
    Wavelet,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Savgol, Method::Fourier, Method::Wavelet];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Savgol => "savgol",
            Method::Fourier => "fourier",
            Method::Wavelet => "wavelet",
        })
    }
}

/// One fully specified classical filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum BaselineSpec {
    Savgol { window: usize, order: usize },
    Fourier { cutoff: f64, shape: FilterShape },
    Wavelet { family: WaveletFamily, level: usize, strategy: ThresholdStrategy },
}

impl BaselineSpec {
    pub fn method(&self) -> Method {
        match self {
            BaselineSpec::Savgol { .. } => Method::Savgol,
            BaselineSpec::Fourier { .. } => Method::Fourier,
            BaselineSpec::Wavelet { .. } => Method::Wavelet,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match *self {
            BaselineSpec::Savgol { window, order } => savgol_filter(x, window, order),
            BaselineSpec::Fourier { cutoff, shape } => fourier_filter(x, cutoff, shape),
            BaselineSpec::Wavelet { family, level, strategy } => wavelet_denoise(x, family, level, strategy),
        }
    }

    pub fn apply_spectrum(&self, s: &Spectrum) -> Result<Spectrum> {
        Ok(s.with_intensities(self.apply(s.intensities())?))
    }
}

pub fn savgol(s: &Spectrum, window: usize, order: usize) -> Result<Spectrum> {
    BaselineSpec::Savgol { window, order }.apply_spectrum(s)
}

pub fn fourier(s: &Spectrum, cutoff: f64, shape: FilterShape) -> Result<Spectrum> {
    BaselineSpec::Fourier { cutoff, shape }.apply_spectrum(s)
}

pub fn wavelet(s: &Spectrum, family: WaveletFamily, level: usize, strategy: ThresholdStrategy) -> Result<Spectrum> {
    BaselineSpec::Wavelet { family, level, strategy }.apply_spectrum(s)
}

/// Default search space for `method`, restricted to settings valid for
/// spectra of length `len`.
pub fn default_grid(method: Method, len: usize) -> Vec<BaselineSpec> {
    match method {
        Method::Savgol => (5..=51)
            .step_by(2)
            .filter(|&w| w <= len)
            .flat_map(|window| (2..=5).filter(move |&o| o < window).map(move |order| BaselineSpec::Savgol { window, order }))
            .collect(),
        Method::Fourier => (1..=25)
            .flat_map(|i| {
                let cutoff = 0.02 * i as f64;
                [FilterShape::Hard, FilterShape::RaisedCosine].map(|shape| BaselineSpec::Fourier { cutoff, shape })
            })
            .collect(),
        Method::Wavelet => {
            let max = if len < 2 { 0 } else { usize::BITS as usize - 1 - len.leading_zeros() as usize };
            WaveletFamily::ALL
                .into_iter()
                .flat_map(|family| {
                    (2..=6.min(max)).flat_map(move |level| {
                        [ThresholdStrategy::SoftUniversal, ThresholdStrategy::HardUniversal]
                            .map(|strategy| BaselineSpec::Wavelet { family, level, strategy })
                    })
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneOptions {
    /// Fraction of the training points used for the search.
    pub fraction: f64,
    pub seed: u64,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions { fraction: 0.25, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuned {
    pub spec: BaselineSpec,
    /// Mean RMSE of the chosen spec on the search subset.
    pub rmse: f64,
    pub subset: Vec<usize>,
}

/// Grid search minimising mean RMSE against the reference on a seeded
/// subset of `points`. Ties go to the earliest grid entry.
pub fn tune_baseline(
    noisy: &AcquisitionSet,
    reference: &HyperMap,
    points: &[usize],
    grid: &[BaselineSpec],
    opts: &TuneOptions,
) -> Result<Tuned> {
    if grid.is_empty() {
        return Err(Error::param("empty search grid"));
    }
    if points.is_empty() {
        return Err(Error::data("no training points to tune on"));
    }
    if !(opts.fraction > 0.0 && opts.fraction <= 1.0) {
        return Err(Error::param("tuning fraction must lie in (0, 1]"));
    }
    check_aligned(noisy, reference)?;
    let mut subset = points.to_vec();
    subset.shuffle(&mut seeding::rng(opts.seed, &[0x7e]));
    subset.truncate(((points.len() as f64 * opts.fraction).ceil() as usize).max(1));
    subset.sort_unstable();

    let scores: Vec<Result<f64>> = grid
        .par_iter()
        .map(|spec| {
            let mut total = 0.0;
            let mut n = 0usize;
            for &p in &subset {
                let r = reference.spectra()[p].intensities();
                for rep in 0..noisy.repetitions() {
                    let x: Vec<f64> = noisy.raw(p, rep).iter().map(|&v| f64::from(v)).collect();
                    total += rmse(r, &spec.apply(&x)?)?;
                    n += 1;
                }
            }
            Ok(total / n as f64)
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        let s = s?;
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((i, s));
        }
    }
    let (i, rmse) = best.expect("grid is nonempty");
    Ok(Tuned { spec: grid[i], rmse, subset })
}

fn check_aligned(noisy: &AcquisitionSet, reference: &HyperMap) -> Result<()> {
    if reference.grid() != noisy.grid() {
        return Err(Error::GridMismatch(format!(
            "reference grid {}x{} vs dataset grid {}x{}",
            reference.grid().rows,
            reference.grid().cols,
            noisy.grid().rows,
            noisy.grid().cols
        )));
    }
    if reference.channels() != noisy.channels() {
        return Err(Error::ShapeMismatch("reference and dataset channel counts differ".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFold {
    pub fold: usize,
    pub tuned: Tuned,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub method: Method,
    pub folds: Vec<BaselineFold>,
    pub mean: MetricsReport,
}

/// Per fold: tune on the training points only, then score the held-out
/// spectra. Uses the same grouped folds as the autoencoder for equal seeds.
pub fn cross_validate_baseline(
    noisy: &AcquisitionSet,
    reference: &HyperMap,
    grid: &[BaselineSpec],
    folds: usize,
    seed: u64,
    eval: &EvalOptions,
) -> Result<BaselineReport> {
    check_aligned(noisy, reference)?;
    let method = grid.first().ok_or_else(|| Error::param("empty search grid"))?.method();
    let ids: Vec<usize> = (0..noisy.points()).collect();
    let split = grouped_kfold(&ids, folds, seed)?;
    let ref_labels = eval.clusters.map(|k| reference_labels(reference, k, seed, &eval.kmeans)).transpose()?;
    let reps = noisy.repetitions();
    let mut out = Vec::with_capacity(folds);
    for (f, val) in split.iter().enumerate() {
        let train: Vec<usize> = split
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, p)| p.iter().copied())
            .collect();
        let tuned = tune_baseline(noisy, reference, &train, grid, &TuneOptions { seed: seeding::derive(seed, &[f as u64]), ..Default::default() })?;
        let pairs: Vec<(usize, usize)> = val.iter().flat_map(|&p| (0..reps).map(move |r| (p, r))).collect();
        let outputs: Vec<Vec<f64>> = pairs
            .par_iter()
            .map(|&(p, r)| {
                let x: Vec<f64> = noisy.raw(p, r).iter().map(|&v| f64::from(v)).collect();
                tuned.spec.apply(&x)
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&[f64]> = pairs.iter().map(|&(p, _)| reference.spectra()[p].intensities()).collect();
        let truth: Option<Vec<usize>> = ref_labels.as_ref().map(|l| pairs.iter().map(|&(p, _)| l[p]).collect());
        let metrics = score_fold(
            format!("fold{f}/{method}"),
            &refs,
            &outputs,
            truth.as_deref().zip(eval.clusters),
            seeding::derive(seed, &[f as u64]),
            eval,
        )?;
        out.push(BaselineFold { fold: f, tuned, metrics });
    }
    let reports: Vec<MetricsReport> = out.iter().map(|f| f.metrics.clone()).collect();
    Ok(BaselineReport { method, mean: MetricsReport::mean(format!("mean/{method}"), &reports)?, folds: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{uniform_axis, GridShape};

    #[test]
    fn grid_sizes() {
        // order 5 is dropped for the 5-channel window
        assert_eq!(default_grid(Method::Savgol, 736).len(), 24 * 4 - 1);
        assert_eq!(default_grid(Method::Fourier, 736).len(), 50);
        assert_eq!(default_grid(Method::Wavelet, 736).len(), 4 * 5 * 2);
        assert!(default_grid(Method::Savgol, 9).iter().all(|s| matches!(s, BaselineSpec::Savgol { window, .. } if *window <= 9)));
    }

    fn toy(noise: f64) -> (AcquisitionSet, HyperMap) {
        let axis = uniform_axis(0.0, 1.0, 64);
        let clean: Vec<Vec<f64>> = (0..6).map(|p| (0..64).map(|i| ((i + p) as f64 * 0.2).sin() + 2.0).collect()).collect();
        let spectra: Vec<Vec<Vec<f64>>> = clean
            .iter()
            .enumerate()
            .map(|(p, c)| {
                (0..3)
                    .map(|r| c.iter().enumerate().map(|(i, v)| v + noise * (((i * 31 + p * 7 + r * 13) % 17) as f64 - 8.0)).collect())
                    .collect()
            })
            .collect();
        let set = AcquisitionSet::from_spectra(GridShape::new(2, 3), 1.0, axis.clone(), &spectra).unwrap();
        (set, HyperMap::from_rows(GridShape::new(2, 3), axis, clean).unwrap())
    }

    #[test]
    fn tuning_picks_all_pass_on_clean_data() {
        let (set, reference) = toy(0.0);
        let grid = [
            BaselineSpec::Fourier { cutoff: 0.1, shape: FilterShape::Hard },
            BaselineSpec::Fourier { cutoff: 1.0, shape: FilterShape::Hard },
            BaselineSpec::Fourier { cutoff: 0.5, shape: FilterShape::Hard },
        ];
        let t = tune_baseline(&set, &reference, &[0, 1, 2, 3, 4, 5], &grid, &TuneOptions::default()).unwrap();
        assert_eq!(t.spec, grid[1]);
        // only f32 storage error remains
        assert!(t.rmse < 1e-6);
        let single = tune_baseline(&set, &reference, &[0, 1], &grid[..1], &TuneOptions::default()).unwrap();
        assert_eq!(single.spec, grid[0]);
        assert!(tune_baseline(&set, &reference, &[0], &[], &TuneOptions::default()).is_err());
    }

    #[test]
    fn tuning_is_deterministic() {
        let (set, reference) = toy(0.05);
        let grid = default_grid(Method::Savgol, 64);
        let pts: Vec<usize> = (0..6).collect();
        let a = tune_baseline(&set, &reference, &pts, &grid, &TuneOptions { seed: 4, ..Default::default() }).unwrap();
        let b = tune_baseline(&set, &reference, &pts, &grid, &TuneOptions { seed: 4, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.subset.len(), 2);
    }

    #[test]
    fn spec_serde_round_trip() {
        let s = BaselineSpec::Wavelet {
            family: WaveletFamily::Daubechies4,
            level: 3,
            strategy: ThresholdStrategy::SoftUniversal,
        };
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"method":"wavelet","family":"daubechies-4","level":3,"strategy":"soft-universal"}"#);
        assert_eq!(serde_json::from_str::<BaselineSpec>(&j).unwrap(), s);
    }
}
