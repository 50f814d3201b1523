use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use raman_n2n::autoencoder::{load_params, save_params};
use raman_n2n::baselines::{cross_validate_baseline, default_grid, BaselineReport, BaselineSpec};
use raman_n2n::clustering::{cluster_means, elbow_scan, kmeans, knee};
use raman_n2n::dataset::{load_dataset, save_dataset};
use raman_n2n::metrics::{clustering_accuracy, workflow_speedup, MetricsReport};
use raman_n2n::noisediag::{block_average_curve, default_block_sizes, fit_loglog_slope, last_point_departure};
use raman_n2n::preprocess::{averaged_reference, norm, preprocess_set};
use raman_n2n::seeding;
use raman_n2n::spectrum::{uniform_axis, AcquisitionSet, GridShape, HyperMap};
use raman_n2n::synth::{gen_distinct_phase_library, gen_phase_map, synthesize_acquisitions, NoiseModel};
use raman_n2n::trainer::{cross_validate, normalize_set, predict, train, EvalOptions, FoldReport};
use raman_n2n::Error;
use serde::Serialize;
use serde_json::Value;

use crate::artifacts::{
    read_label_map, write_columns, write_json, write_label_map, RunManifest, Timings, ARTIFACT_VERSION, RUN_MANIFEST,
};
use crate::config::PipelineConfig;
use crate::{CliError, Command};

const MODEL_FILE: &str = "model.n2n";

// Sub-seed tags so each stage draws from its own stream.
const TAG_LIBRARY: u64 = 1;
const TAG_MAP: u64 = 2;
const TAG_NOISE: u64 = 3;
const TAG_CLUSTER: u64 = 4;

struct Outcome {
    out: PathBuf,
    inputs: BTreeMap<&'static str, String>,
    outputs: Vec<String>,
}

impl Outcome {
    fn new(out: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(out)?;
        Ok(Outcome { out: out.to_path_buf(), inputs: BTreeMap::new(), outputs: Vec::new() })
    }

    fn input(mut self, name: &'static str, path: &Path) -> Self {
        self.inputs.insert(name, path.display().to_string());
        self
    }

    /// Path of a new output, recorded for the manifest.
    fn file(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }
}

pub fn execute(command: &Command, cfg: &PipelineConfig, argv: &[String], repeat: usize) -> Result<(), CliError> {
    let mut timings = Timings::default();
    let mut last = None;
    for _ in 0..repeat {
        let t = std::time::Instant::now();
        let outcome = run_once(command, cfg, &mut timings)?;
        timings.record("total", t.elapsed().as_secs_f64());
        last = Some(outcome);
    }
    let outcome = last.expect("repeat is at least 1");
    let manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        command: name(command),
        argv,
        seed: cfg.seed,
        inputs: outcome.inputs,
        outputs: outcome.outputs,
        config: cfg,
        timings_seconds: timings.summary(),
    };
    write_json(&outcome.out.join(RUN_MANIFEST), &manifest)
}

fn name(command: &Command) -> &'static str {
    match command {
        Command::Synth { .. } => "synth",
        Command::Preprocess { .. } => "preprocess",
        Command::Train { .. } => "train",
        Command::CrossValidate { .. } => "cross-validate",
        Command::Denoise { .. } => "denoise",
        Command::Cluster { .. } => "cluster",
        Command::Evaluate { .. } => "evaluate",
        Command::Baseline { .. } => "baseline",
        Command::NoiseScan { .. } => "noise-scan",
        Command::Report { .. } => "report",
    }
}

fn run_once(command: &Command, cfg: &PipelineConfig, timings: &mut Timings) -> Result<Outcome, CliError> {
    match command {
        Command::Synth { out } => synth(&out.out, cfg, timings),
        Command::Preprocess { input, out } => preprocess(input, &out.out, cfg, timings),
        Command::Train { input, out } => train_cmd(input, &out.out, cfg, timings),
        Command::CrossValidate { input, reference, out } => cross_validate_cmd(input, reference, &out.out, cfg, timings),
        Command::Denoise { model, input, no_restore, out } => denoise(model, input, !no_restore, &out.out, timings),
        Command::Cluster { input, out } => cluster(input, &out.out, cfg, timings),
        Command::Evaluate { reference, input, denoised, labels, out } => {
            evaluate(reference, input, denoised.as_deref(), labels.as_deref(), &out.out, cfg, timings)
        }
        Command::Baseline { input, reference, out } => baseline(input, reference, &out.out, cfg, timings),
        Command::NoiseScan { input, out } => noise_scan(input, &out.out, cfg, timings),
        Command::Report { metrics, out } => report(metrics, &out.out, cfg),
    }
}

fn load(path: &Path, timings: &mut Timings) -> Result<AcquisitionSet, CliError> {
    Ok(timings.time("load", || load_dataset(path))?)
}

/// Per-point reference spectra: the repetition mean (a no-op for one
/// repetition).
fn load_reference(path: &Path, timings: &mut Timings) -> Result<HyperMap, CliError> {
    let set = load(path, timings)?;
    Ok(averaged_reference(&set)?)
}

fn check_grid(what: &str, a: GridShape, b: GridShape) -> Result<(), CliError> {
    if a != b {
        return Err(Error::GridMismatch(format!("{what} grid {}x{} vs dataset grid {}x{}", a.rows, a.cols, b.rows, b.cols))
            .into());
    }
    Ok(())
}

fn eval_options(cfg: &PipelineConfig, keep_outputs: bool) -> EvalOptions {
    EvalOptions {
        ssim_window: cfg.eval.ssim_window,
        clusters: cfg.clustering.k,
        kmeans: cfg.clustering.kmeans,
        keep_outputs,
    }
}

fn unit_rows(rows: impl IntoIterator<Item = Vec<f64>>) -> Result<Vec<Vec<f64>>, CliError> {
    rows.into_iter()
        .map(|v| {
            let n = norm(&v);
            if !(n > 0.0) {
                return Err(Error::Numeric("zero-norm spectrum".into()).into());
            }
            Ok(v.into_iter().map(|x| x / n).collect())
        })
        .collect()
}

fn set_rows(set: &AcquisitionSet) -> Vec<Vec<f64>> {
    (0..set.spectrum_count())
        .map(|i| set.raw(i / set.repetitions(), i % set.repetitions()).iter().map(|&v| f64::from(v)).collect())
        .collect()
}

fn synth(out: &Path, cfg: &PipelineConfig, timings: &mut Timings) -> Result<Outcome, CliError> {
    let s = &cfg.synth;
    let mut o = Outcome::new(out)?;
    let (set, clean, labels, templates) = timings.time("generate", || -> Result<_, Error> {
        let axis = uniform_axis(s.axis_start, s.axis_step, s.channels);
        let lib = gen_distinct_phase_library(
            &axis,
            s.phases,
            s.peaks_per_phase,
            s.peaks,
            s.max_similarity,
            seeding::derive(cfg.seed, &[TAG_LIBRARY]),
        )?;
        let (clean, labels) =
            gen_phase_map(&lib, GridShape::new(s.rows, s.cols), s.blobs, seeding::derive(cfg.seed, &[TAG_MAP]))?;
        let noise = NoiseModel {
            shot_scale: s.shot_scale,
            read_sigma: s.read_sigma,
            flicker_amp: s.flicker_amp,
            background: s.background.clone(),
            seed: seeding::derive(cfg.seed, &[TAG_NOISE]),
        };
        let set = synthesize_acquisitions(&clean, &noise, s.repetitions, s.integration_time_ms)?;
        let templates: Vec<Vec<f64>> = lib.templates().iter().map(|t| t.intensities().to_vec()).collect();
        Ok((set, clean, labels, templates))
    })?;
    timings.time("write", || -> Result<(), CliError> {
        save_dataset(&set, o.file("noisy"))?;
        // Expected counts of one acquisition, on the same scale as `noisy`.
        let reference = clean.scaled(s.integration_time_ms).to_set(s.integration_time_ms)?;
        save_dataset(&reference, o.file("reference"))?;
        write_label_map(&o.file("labels.csv"), set.grid(), &labels)?;
        let names: Vec<String> = (0..templates.len()).map(|i| format!("phase{i}")).collect();
        write_columns(&o.file("phases.csv"), set.axis(), &names, &templates)
    })?;
    Ok(o)
}

fn preprocess(input: &Path, out: &Path, cfg: &PipelineConfig, timings: &mut Timings) -> Result<Outcome, CliError> {
    let set = load(input, timings)?;
    let mut o = Outcome::new(out)?.input("input", input);
    let processed = timings.time("preprocess", || preprocess_set(&set, &cfg.preprocess))?;
    let averaged = timings.time("average", || averaged_reference(&processed))?;
    timings.time("write", || -> Result<(), CliError> {
        save_dataset(&processed, o.file("dataset"))?;
        save_dataset(&averaged.to_set(processed.integration_time_ms())?, o.file("averaged"))?;
        Ok(())
    })?;
    Ok(o)
}

fn train_cmd(input: &Path, out: &Path, cfg: &PipelineConfig, timings: &mut Timings) -> Result<Outcome, CliError> {
    let set = load(input, timings)?;
    let mut o = Outcome::new(out)?.input("input", input);
    let (normalized, _) = timings.time("normalize", || normalize_set(&set))?;
    let (params, history) = timings.time("train", || train(&normalized, &cfg.train))?;
    save_params(&params, o.file(MODEL_FILE))?;
    write_json(&o.file("history.json"), &history)?;
    Ok(o)
}

#[derive(Serialize)]
struct FoldSummary<'a> {
    fold: usize,
    train_points: usize,
    val_points: usize,
    leakage_check: bool,
    final_loss: Option<f64>,
    noisy: &'a MetricsReport,
    denoised: &'a MetricsReport,
}

impl<'a> From<&'a FoldReport> for FoldSummary<'a> {
    fn from(f: &'a FoldReport) -> Self {
        FoldSummary {
            fold: f.fold,
            train_points: f.train_points.len(),
            val_points: f.val_points.len(),
            leakage_check: f.leakage_check,
            final_loss: f.history.epoch_loss.last().copied(),
            noisy: &f.noisy,
            denoised: &f.denoised,
        }
    }
}

#[derive(Serialize)]
struct MetricsFile<'a, T: Serialize> {
    integration_time_ms: f64,
    reports: Vec<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    folds: Option<Vec<FoldSummary<'a>>>,
}

fn cross_validate_cmd(
    input: &Path,
    reference: &Path,
    out: &Path,
    cfg: &PipelineConfig,
    timings: &mut Timings,
) -> Result<Outcome, CliError> {
    let set = load(input, timings)?;
    let refs = load_reference(reference, timings)?;
    check_grid("reference", refs.grid(), set.grid())?;
    let mut o = Outcome::new(out)?.input("input", input).input("reference", reference);
    let cv = cross_validate(&set, &refs, &cfg.train, &eval_options(cfg, true))?;
    timings.record("training", cv.seconds.training);
    timings.record("inference", cv.seconds.inference);
    timings.record("metrics", cv.seconds.metrics);
    let file = MetricsFile {
        integration_time_ms: set.integration_time_ms(),
        reports: vec![&cv.mean_noisy, &cv.mean_denoised],
        folds: Some(cv.folds.iter().map(FoldSummary::from).collect()),
    };
    write_json(&o.file("metrics.json"), &file)?;
    if let Some(outputs) = &cv.outputs {
        save_dataset(outputs, o.file("denoised"))?;
    }
    Ok(o)
}

fn denoise(model: &Path, input: &Path, restore: bool, out: &Path, timings: &mut Timings) -> Result<Outcome, CliError> {
    let params = timings.time("load", || load_params(model))?;
    let set = load(input, timings)?;
    let mut o = Outcome::new(out)?.input("model", model).input("input", input);
    let (normalized, norms) = timings.time("normalize", || normalize_set(&set))?;
    let outputs = timings.time("inference", || predict(&params, &set_rows(&normalized)))?;
    let data: Vec<f32> = outputs
        .iter()
        .zip(&norms)
        .flat_map(|(row, &n)| row.iter().map(move |v| (if restore { v * n } else { *v }) as f32))
        .collect();
    let mut denoised =
        AcquisitionSet::new(set.grid(), set.integration_time_ms(), set.repetitions(), set.axis().clone(), data)?;
    if let Some(c) = set.point_coords() {
        denoised = denoised.with_point_coords(c.to_vec())?;
    }
    save_dataset(&denoised, o.file("denoised"))?;
    Ok(o)
}

#[derive(Serialize)]
struct ClusterSummary {
    k: usize,
    inertia: f64,
    sizes: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    elbow: Option<Vec<(usize, f64)>>,
}

fn cluster(input: &Path, out: &Path, cfg: &PipelineConfig, timings: &mut Timings) -> Result<Outcome, CliError> {
    let set = load(input, timings)?;
    let mut o = Outcome::new(out)?.input("input", input);
    let mean = averaged_reference(&set)?;
    let rows = unit_rows(mean.rows())?;
    let c = &cfg.clustering;
    let seed = seeding::derive(cfg.seed, &[TAG_CLUSTER]);
    let (k, elbow) = match c.k {
        Some(k) => (k, None),
        None => {
            let scan = timings.time("elbow", || elbow_scan(&rows, c.k_min, c.k_max.min(rows.len()), seed, &c.kmeans))?;
            (knee(&scan).unwrap_or(c.k_min), Some(scan))
        }
    };
    let result = timings.time("kmeans", || kmeans(&rows, k, seed, &c.kmeans))?;
    let means = cluster_means(&rows, &result.labels, k);
    let mut sizes = vec![0; k];
    result.labels.iter().for_each(|&l| sizes[l] += 1);
    write_label_map(&o.file("labels.csv"), set.grid(), &result.labels)?;
    let names: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
    write_columns(&o.file("cluster_means.csv"), set.axis(), &names, &means)?;
    write_json(&o.file("clusters.json"), &ClusterSummary { k, inertia: result.inertia, sizes, elbow })?;
    Ok(o)
}

fn evaluate(
    reference: &Path,
    input: &Path,
    denoised: Option<&Path>,
    labels: Option<&Path>,
    out: &Path,
    cfg: &PipelineConfig,
    timings: &mut Timings,
) -> Result<Outcome, CliError> {
    let refs = load_reference(reference, timings)?;
    let set = load(input, timings)?;
    check_grid("reference", refs.grid(), set.grid())?;
    let mut o = Outcome::new(out)?.input("reference", reference).input("input", input);
    let mut candidates = vec![("noisy", set)];
    if let Some(path) = denoised {
        let d = load(path, timings)?;
        check_grid("denoised", d.grid(), refs.grid())?;
        o = o.input("denoised", path);
        candidates.push(("denoised", d));
    }
    let seed = seeding::derive(cfg.seed, &[TAG_CLUSTER]);
    // Known phase labels if given, else k-means labels of the reference.
    let truth = match labels {
        Some(path) => {
            let (grid, l) = read_label_map(path)?;
            check_grid("labels", grid, refs.grid())?;
            o = o.input("labels", path);
            let k = cfg.clustering.k.unwrap_or_else(|| l.iter().max().map_or(1, |m| m + 1));
            Some((k, l))
        }
        None => cfg
            .clustering
            .k
            .map(|k| -> Result<_, CliError> {
                let rows = unit_rows(refs.rows())?;
                Ok((k, kmeans(&rows, k, seed, &cfg.clustering.kmeans)?.labels))
            })
            .transpose()?,
    };
    let mut reports = Vec::new();
    for (label, s) in &candidates {
        let reps = s.repetitions();
        let aligned: Vec<&[f64]> =
            (0..s.spectrum_count()).map(|i| refs.spectra()[i / reps].intensities()).collect();
        let tests = set_rows(s);
        let mut report = timings.time("metrics", || MetricsReport::compute(*label, &aligned, &tests, cfg.eval.ssim_window))?;
        if let Some((k, labels)) = &truth {
            let expanded: Vec<usize> = labels.iter().flat_map(|&l| std::iter::repeat_n(l, reps)).collect();
            let got = kmeans(&unit_rows(tests)?, *k, seed, &cfg.clustering.kmeans)?.labels;
            report.kmeans_accuracy = Some(clustering_accuracy(&expanded, &got, *k)?);
        }
        reports.push(report);
    }
    let file = MetricsFile { integration_time_ms: candidates[0].1.integration_time_ms(), reports, folds: None };
    write_json(&o.file("metrics.json"), &file)?;
    Ok(o)
}

fn baseline(input: &Path, reference: &Path, out: &Path, cfg: &PipelineConfig, timings: &mut Timings) -> Result<Outcome, CliError> {
    let set = load(input, timings)?;
    let refs = load_reference(reference, timings)?;
    check_grid("reference", refs.grid(), set.grid())?;
    let mut o = Outcome::new(out)?.input("input", input).input("reference", reference);
    let eval = eval_options(cfg, false);
    let mut reports: Vec<BaselineReport> = Vec::new();
    for &method in &cfg.baselines.methods {
        let grid: Vec<BaselineSpec> = if cfg.baselines.grid.is_empty() {
            default_grid(method, set.channels())
        } else {
            cfg.baselines.grid.iter().copied().filter(|s| s.method() == method).collect()
        };
        let r = timings.time(&method.to_string(), || {
            cross_validate_baseline(&set, &refs, &grid, cfg.train.folds, cfg.seed, &eval)
        })?;
        reports.push(r);
    }
    let file = MetricsFile { integration_time_ms: set.integration_time_ms(), reports, folds: None };
    write_json(&o.file("baselines.json"), &file)?;
    Ok(o)
}

fn noise_scan(input: &Path, out: &Path, cfg: &PipelineConfig, timings: &mut Timings) -> Result<Outcome, CliError> {
    let set = load(input, timings)?;
    let mut o = Outcome::new(out)?.input("input", input);
    let sizes = if cfg.noise_scan.block_sizes.is_empty() {
        default_block_sizes(set.repetitions())
    } else {
        cfg.noise_scan.block_sizes.clone()
    };
    let curve = timings.time("curve", || block_average_curve(&set, &sizes))?;
    let fit = if curve.points.len() >= 3 { Some(fit_loglog_slope(&curve.points)?) } else { None };
    let departure = cfg.noise_scan.fit_points.map(|n| last_point_departure(&curve, n)).transpose()?;
    let mut csv = String::from("total_time_s,noise\n");
    for (t, n) in &curve.points {
        csv.push_str(&format!("{t},{n}\n"));
    }
    fs::write(o.file("noise_curve.csv"), csv)?;
    write_json(
        &o.file("noise_fit.json"),
        &serde_json::json!({ "curve": curve, "fit": fit, "departure": departure }),
    )?;
    Ok(o)
}

#[derive(Serialize)]
struct ReportRow {
    source: String,
    #[serde(flatten)]
    metrics: MetricsReport,
}

/// Metric rows from any `reports` array written by evaluate, cross-validate
/// or baseline. Baseline entries contribute their fold mean.
fn collect_rows(path: &Path) -> Result<Vec<ReportRow>, CliError> {
    let text = fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text).map_err(Error::from)?;
    let items = v
        .get("reports")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::InvalidData(format!("{}: no `reports` array", path.display())))?;
    items
        .iter()
        .map(|item| {
            let m = item.get("mean").unwrap_or(item);
            let metrics: MetricsReport = serde_json::from_value(m.clone()).map_err(Error::from)?;
            Ok(ReportRow { source: path.display().to_string(), metrics })
        })
        .collect()
}

fn report(metrics: &[PathBuf], out: &Path, cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let mut o = Outcome::new(out)?;
    let mut rows = Vec::new();
    for path in metrics {
        rows.extend(collect_rows(path)?);
    }
    o.inputs.insert("metrics", metrics.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","));
    let r = &cfg.report;
    let speedup = workflow_speedup(r.map_points, r.short_ms, r.long_ms, r.train_seconds, r.validation_seconds, r.compute_seconds);
    let mut csv = String::from("source,label,rmse,snr,ssim,kmeans_accuracy\n");
    for row in &rows {
        let m = &row.metrics;
        let acc = m.kmeans_accuracy.map(|a| a.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{},{},{},{},{}\n", row.source, m.label, m.rmse, m.snr, m.ssim, acc));
    }
    fs::write(o.file("report.csv"), csv)?;
    write_json(
        &o.file("report.json"),
        &serde_json::json!({ "rows": rows, "workflow_speedup": speedup, "speedup_inputs": r }),
    )?;
    Ok(o)
}
