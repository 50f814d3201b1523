//! Noise2Noise training: repetition pairing, Adam, grouped k-fold
//! cross-validation and full-map inference.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{backward, forward, Architecture, Batch, ModelParams};
use crate::clustering::{kmeans, KMeansParams};
use crate::error::{Error, Result};
use crate::metrics::{clustering_accuracy, MetricsReport, DEFAULT_SSIM_WINDOW};
use crate::preprocess::norm;
use crate::seeding;
use crate::spectrum::{AcquisitionSet, HyperMap, Spectrum};

const TAG_SHUFFLE: u64 = 0x5f;
const TAG_PAIRS: u64 = 0x9a;
const TAG_FOLDS: u64 = 0xf0;
const INFERENCE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// A fresh derangement of the repetitions for every point and epoch.
    #[default]
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub folds: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub pairing: Pairing,
    pub architecture: Architecture,
    /// Run micro-batches sequentially instead of on the thread pool. Both
    /// modes sum micro-batch gradients in the same order.
    pub deterministic: bool,
    /// Rows per forward/backward unit inside a batch.
    pub micro_batch: usize,
    /// Stop once the epoch loss has not improved for this many epochs.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            batch_size: 128,
            epochs: 500,
            folds: 5,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            pairing: Pairing::Dynamic,
            architecture: Architecture::default(),
            deterministic: false,
            micro_batch: 16,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.micro_batch == 0 {
            return Err(Error::param("batch_size, epochs and micro_batch must be ≥ 1"));
        }
        if self.folds < 2 {
            return Err(Error::param("folds must be ≥ 2"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::param("Adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::param("adam_eps must be positive"));
        }
        if self.patience == Some(0) {
            return Err(Error::param("patience must be ≥ 1"));
        }
        self.architecture.validate()
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Split points into `k` disjoint folds whose sizes differ by at most one.
pub fn grouped_kfold(point_ids: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > point_ids.len() {
        return Err(Error::param(format!("cannot split {} points into {k} folds", point_ids.len())));
    }
    let mut ids = point_ids.to_vec();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::data("duplicate point ids"));
    }
    ids.shuffle(&mut seeding::rng(seed, &[TAG_FOLDS, k as u64]));
    let mut folds = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// A uniformly random derangement of `0..reps` (rejection sampling).
fn derangement(reps: usize, seed: u64, epoch: u64, point: u64) -> Vec<usize> {
    let mut rng = seeding::rng(seed, &[TAG_PAIRS, epoch, point]);
    let mut perm: Vec<usize> = (0..reps).collect();
    loop {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().all(|(i, &j)| i != j) {
            return perm;
        }
    }
}

/// (input, target) repetition pairs for every point; each repetition is the
/// input exactly once and never its own target.
pub fn sample_pairs(set: &AcquisitionSet, epoch: usize, seed: u64) -> Result<Vec<Vec<(usize, usize)>>> {
    let reps = set.repetitions();
    if reps < 2 {
        return Err(Error::data("Noise2Noise pairing needs at least 2 repetitions"));
    }
    Ok((0..set.points())
        .map(|p| derangement(reps, seed, epoch as u64, p as u64).into_iter().enumerate().collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
    pub stopped_early: bool,
    pub train_points: usize,
    pub seconds: f64,
}

impl TrainHistory {
    /// Mean of the last `window` epoch losses.
    pub fn tail_mean(&self, window: usize) -> Option<f64> {
        let n = self.epoch_loss.len();
        if n == 0 || window == 0 {
            return None;
        }
        let w = window.min(n);
        Some(self.epoch_loss[n - w..].iter().sum::<f64>() / w as f64)
    }
}

/// Train on every point of `set`, which should already be preprocessed and
/// L2-normalised.
pub fn train(set: &AcquisitionSet, config: &TrainConfig) -> Result<(ModelParams<f32>, TrainHistory)> {
    let all: Vec<usize> = (0..set.points()).collect();
    train_on_points(set, &all, config)
}

struct Step<'a> {
    set: &'a AcquisitionSet,
    params: &'a ModelParams<f32>,
    /// 2 / (rows in the full batch × channels)
    scale: f32,
}

impl Step<'_> {
    /// Squared-error sum and flat gradient of one micro-batch.
    fn run(&self, pairs: &[(usize, usize, usize)]) -> Result<(f64, Vec<f32>)> {
        let len = self.set.channels();
        let mut input = Vec::with_capacity(pairs.len() * len);
        let mut target = Vec::with_capacity(pairs.len() * len);
        for &(p, a, b) in pairs {
            input.extend_from_slice(self.set.raw(p, a));
            target.extend_from_slice(self.set.raw(p, b));
        }
        let (out, cache) = forward(self.params, &Batch::new(pairs.len(), len, input)?, true)?;
        let mut sse = 0.0f64;
        let grad: Vec<f32> = out
            .data()
            .iter()
            .zip(&target)
            .map(|(&y, &t)| {
                let r = y - t;
                sse += f64::from(r) * f64::from(r);
                self.scale * r
            })
            .collect();
        let (g, _) = backward(self.params, &cache.expect("cache recorded"), &Batch::new(pairs.len(), len, grad)?)?;
        Ok((sse, g.to_flat()))
    }
}

/// Train using only the given points (all their repetitions).
pub fn train_on_points(
    set: &AcquisitionSet,
    points: &[usize],
    config: &TrainConfig,
) -> Result<(ModelParams<f32>, TrainHistory)> {
    config.validate()?;
    config.architecture.check_length(set.channels())?;
    if set.repetitions() < 2 {
        return Err(Error::data("Noise2Noise pairing needs at least 2 repetitions"));
    }
    if points.is_empty() || points.iter().any(|&p| p >= set.points()) {
        return Err(Error::data("training point list is empty or out of range"));
    }
    let started = Instant::now();
    let mut params = ModelParams::<f32>::build(&config.architecture, config.seed)?;
    let mut master: Vec<f64> = params.iter().map(f64::from).collect();
    let mut adam = Adam::new(master.len(), config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps);
    let reps = set.repetitions();
    let len = set.channels();
    let mut history = TrainHistory { train_points: points.len(), ..Default::default() };
    let mut best = f64::INFINITY;
    let mut since_best = 0;

    for epoch in 0..config.epochs {
        let mut pairs: Vec<(usize, usize, usize)> = Vec::with_capacity(points.len() * reps);
        for &p in points {
            let perm = derangement(reps, config.seed, epoch as u64, p as u64);
            pairs.extend(perm.into_iter().enumerate().map(|(a, b)| (p, a, b)));
        }
        pairs.shuffle(&mut seeding::rng(config.seed, &[TAG_SHUFFLE, epoch as u64]));

        let mut epoch_sse = 0.0;
        for (b, batch) in pairs.chunks(config.batch_size).enumerate() {
            let step = Step { set, params: &params, scale: 2.0 / (batch.len() * len) as f32 };
            let parts: Vec<Result<(f64, Vec<f32>)>> = if config.deterministic {
                batch.chunks(config.micro_batch).map(|c| step.run(c)).collect()
            } else {
                batch.par_chunks(config.micro_batch).map(|c| step.run(c)).collect()
            };
            let mut grad = vec![0.0f64; master.len()];
            let mut sse = 0.0;
            for part in parts {
                let (s, g) = part?;
                sse += s;
                for (acc, v) in grad.iter_mut().zip(&g) {
                    *acc += f64::from(*v);
                }
            }
            if !sse.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("training diverged at epoch {epoch}, batch {b}")));
            }
            epoch_sse += sse;
            adam.step(&mut master, &grad);
            for (p, m) in params.iter_mut().zip(&master) {
                *p = *m as f32;
            }
        }
        let loss = epoch_sse / (pairs.len() * len) as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training diverged at epoch {epoch}")));
        }
        history.epoch_loss.push(loss);
        if let Some(patience) = config.patience {
            if loss < best {
                best = loss;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    history.seconds = started.elapsed().as_secs_f64();
    Ok((params, history))
}

/// Forward pass over arbitrary rows in bounded chunks.
pub fn predict<R: AsRef<[f64]> + Sync>(params: &ModelParams<f32>, rows: &[R]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = rows.first() else { return Ok(Vec::new()) };
    let len = first.as_ref().len();
    params.arch().check_length(len)?;
    let chunks: Result<Vec<Vec<Vec<f64>>>> = rows
        .par_chunks(INFERENCE_CHUNK)
        .map(|chunk| {
            let batch = Batch::<f32>::from_rows(chunk)?;
            let (out, _) = forward(params, &batch, false)?;
            Ok((0..out.rows()).map(|i| out.row_f64(i)).collect())
        })
        .collect();
    Ok(chunks?.concat())
}

/// Denoise every spectrum of an L2-normalised map. With `restore_norms` each
/// output is multiplied by its stored original norm; otherwise outputs stay
/// on the unit scale and keep the stored norm.
pub fn denoise_map(params: &ModelParams<f32>, map: &HyperMap, restore_norms: bool) -> Result<HyperMap> {
    if map.is_empty() {
        return Err(Error::data("empty dataset"));
    }
    if restore_norms && map.spectra().iter().any(|s| s.norm_original().is_none()) {
        return Err(Error::data("cannot restore norms: spectrum without a recorded norm"));
    }
    let rows: Vec<&[f64]> = map.spectra().iter().map(Spectrum::intensities).collect();
    let out = predict(params, &rows)?;
    let spectra = map
        .spectra()
        .iter()
        .zip(out)
        .map(|(s, y)| match (restore_norms, s.norm_original()) {
            (true, Some(n)) => Ok(s.with_intensities(y.into_iter().map(|v| v * n).collect()).with_norm_original(None)?),
            _ => Ok(s.with_intensities(y)),
        })
        .collect::<Result<Vec<_>>>()?;
    HyperMap::new(map.grid(), spectra)
}

/// L2-normalise every acquisition, returning the normalised set and the
/// original norms in (point, repetition) order.
pub fn normalize_set(set: &AcquisitionSet) -> Result<(AcquisitionSet, Vec<f64>)> {
    let norms: Vec<f64> = (0..set.spectrum_count())
        .map(|i| {
            let raw = set.raw(i / set.repetitions(), i % set.repetitions());
            raw.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
        })
        .collect();
    if norms.iter().any(|&n| !(n > 0.0) || !n.is_finite()) {
        return Err(Error::data("zero-norm spectrum"));
    }
    let normalized = set.map_spectra(|s| {
        let n = norm(s.intensities());
        Ok(s.into_intensities().into_iter().map(|v| v / n).collect())
    })?;
    Ok((normalized, norms))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub ssim_window: usize,
    /// Number of clusters for the clustering-agreement column; `None` skips it.
    pub clusters: Option<usize>,
    pub kmeans: KMeansParams,
    /// Keep every held-out prediction (count scale) in [`CrossValidation::outputs`].
    pub keep_outputs: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ssim_window: DEFAULT_SSIM_WINDOW,
            clusters: None,
            kmeans: KMeansParams::default(),
            keep_outputs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_points: Vec<usize>,
    pub val_points: Vec<usize>,
    pub leakage_check: bool,
    pub noisy: MetricsReport,
    pub denoised: MetricsReport,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSeconds {
    pub training: f64,
    pub inference: f64,
    pub metrics: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub folds: Vec<FoldReport>,
    pub mean_noisy: MetricsReport,
    pub mean_denoised: MetricsReport,
    pub seconds: StageSeconds,
    /// Out-of-fold denoised acquisitions, each point predicted by the model
    /// that did not train on it.
    #[serde(skip)]
    pub outputs: Option<AcquisitionSet>,
}

/// Grouped k-fold Noise2Noise evaluation.
///
/// `set` holds preprocessed acquisitions on their physical scale and
/// `reference` the matching per-point references on the same scale. Each
/// fold trains on the normalised spectra of the other folds; held-out
/// outputs are rescaled by their input norms before scoring, and both the
/// raw noisy spectra and the denoised ones are scored against the reference.
pub fn cross_validate(
    set: &AcquisitionSet,
    reference: &HyperMap,
    config: &TrainConfig,
    eval: &EvalOptions,
) -> Result<CrossValidation> {
    config.validate()?;
    if reference.grid() != set.grid() || reference.len() != set.points() {
        return Err(Error::GridMismatch(format!(
            "reference grid {}x{} vs dataset grid {}x{}",
            reference.grid().rows,
            reference.grid().cols,
            set.grid().rows,
            set.grid().cols
        )));
    }
    if reference.channels() != set.channels() {
        return Err(Error::ShapeMismatch(format!(
            "reference has {} channels, dataset {}",
            reference.channels(),
            set.channels()
        )));
    }
    let (normalized, norms) = normalize_set(set)?;
    let reps = set.repetitions();
    let ids: Vec<usize> = (0..set.points()).collect();
    let folds = grouped_kfold(&ids, config.folds, config.seed)?;

    let ref_labels = eval
        .clusters
        .map(|k| reference_labels(reference, k, config.seed, &eval.kmeans))
        .transpose()?;

    let mut seconds = StageSeconds::default();
    let mut reports = Vec::with_capacity(folds.len());
    let c = set.channels();
    let mut kept = if eval.keep_outputs { vec![0f32; set.data().len()] } else { Vec::new() };
    for (f, val) in folds.iter().enumerate() {
        let train_pts: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, pts)| pts.iter().copied())
            .collect();
        if train_pts.iter().any(|p| val.binary_search(p).is_ok()) {
            return Err(Error::data(format!("fold {f}: validation point found in training set")));
        }
        let (params, history) = train_on_points(&normalized, &train_pts, config)?;
        seconds.training += history.seconds;

        let t = Instant::now();
        let inputs: Vec<Vec<f64>> = val
            .iter()
            .flat_map(|&p| (0..reps).map(move |r| (p, r)))
            .map(|(p, r)| normalized.raw(p, r).iter().map(|&v| f64::from(v)).collect())
            .collect();
        let outputs_unit = predict(&params, &inputs)?;
        seconds.inference += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut refs = Vec::with_capacity(inputs.len());
        let mut noisy = Vec::with_capacity(inputs.len());
        let mut denoised = Vec::with_capacity(inputs.len());
        for (i, (p, r)) in val.iter().flat_map(|&p| (0..reps).map(move |r| (p, r))).enumerate() {
            let n = norms[p * reps + r];
            refs.push(reference.spectra()[p].intensities());
            noisy.push(set.raw(p, r).iter().map(|&v| f64::from(v)).collect::<Vec<f64>>());
            denoised.push(outputs_unit[i].iter().map(|v| v * n).collect::<Vec<f64>>());
            if eval.keep_outputs {
                let at = (p * reps + r) * c;
                for (dst, v) in kept[at..at + c].iter_mut().zip(&denoised[i]) {
                    *dst = *v as f32;
                }
            }
        }
        let truth: Option<(Vec<usize>, usize)> = match (eval.clusters, &ref_labels) {
            (Some(k), Some(labels)) => {
                Some((val.iter().flat_map(|&p| std::iter::repeat_n(labels[p], reps)).collect(), k))
            }
            _ => None,
        };
        let truth_ref = truth.as_ref().map(|(t, k)| (t.as_slice(), *k));
        let seed = seeding::derive(config.seed, &[f as u64]);
        let noisy_report = score_fold(format!("fold{f}/noisy"), &refs, &noisy, truth_ref, seed, eval)?;
        let denoised_report = score_fold(format!("fold{f}/denoised"), &refs, &denoised, truth_ref, seed, eval)?;
        seconds.metrics += t.elapsed().as_secs_f64();
        reports.push(FoldReport {
            fold: f,
            train_points: train_pts,
            val_points: val.clone(),
            leakage_check: true,
            noisy: noisy_report,
            denoised: denoised_report,
            history,
        });
    }
    let noisy: Vec<MetricsReport> = reports.iter().map(|r| r.noisy.clone()).collect();
    let denoised: Vec<MetricsReport> = reports.iter().map(|r| r.denoised.clone()).collect();
    let outputs = if eval.keep_outputs {
        Some(AcquisitionSet::new(set.grid(), set.integration_time_ms(), reps, set.axis().clone(), kept)?)
    } else {
        None
    };
    Ok(CrossValidation {
        mean_noisy: MetricsReport::mean("mean/noisy", &noisy)?,
        mean_denoised: MetricsReport::mean("mean/denoised", &denoised)?,
        folds: reports,
        seconds,
        outputs,
    })
}

/// Fidelity metrics of `tests` against `refs`, plus clustering agreement
/// with `truth` (labels, k) when given. Clustering runs on unit-norm copies.
pub(crate) fn score_fold(
    label: String,
    refs: &[&[f64]],
    tests: &[Vec<f64>],
    truth: Option<(&[usize], usize)>,
    seed: u64,
    eval: &EvalOptions,
) -> Result<MetricsReport> {
    let mut report = MetricsReport::compute(label, refs, tests, eval.ssim_window)?;
    if let Some((labels, k)) = truth {
        let rows: Vec<Vec<f64>> = tests.iter().map(|v| unit_vec(v)).collect::<Result<_>>()?;
        let got = kmeans(&rows, k.min(rows.len()), seed, &eval.kmeans)?.labels;
        report.kmeans_accuracy = Some(clustering_accuracy(labels, &got, k)?);
    }
    Ok(report)
}

/// K-means labels of the unit-normalised reference spectra.
pub(crate) fn reference_labels(reference: &HyperMap, k: usize, seed: u64, params: &KMeansParams) -> Result<Vec<usize>> {
    let rows: Vec<Vec<f64>> = reference.spectra().iter().map(unit).collect::<Result<_>>()?;
    Ok(kmeans(&rows, k, seed, params)?.labels)
}

fn unit_vec(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > 0.0) {
        return Err(Error::Numeric("zero-norm output spectrum".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn unit(s: &Spectrum) -> Result<Vec<f64>> {
    unit_vec(s.intensities())
}
