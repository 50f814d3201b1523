use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use raman_n2n::spectrum::GridShape;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::CliError;

pub const RUN_MANIFEST: &str = "run.json";
pub const ARTIFACT_VERSION: u32 = 1;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(raman_n2n::Error::from)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// One row per map row, one integer column per map column.
pub fn write_label_map(path: &Path, grid: GridShape, labels: &[usize]) -> Result<(), CliError> {
    let mut out = String::new();
    for r in 0..grid.rows {
        let row: Vec<String> = labels[r * grid.cols..(r + 1) * grid.cols].iter().map(|l| l.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_label_map(path: &Path) -> Result<(GridShape, Vec<usize>), CliError> {
    let text = fs::read_to_string(path)?;
    let mut labels = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: Vec<usize> = line
            .split(',')
            .map(|v| v.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|e| raman_n2n::Error::InvalidData(format!("{}: bad label: {e}", path.display())))?;
        if *cols.get_or_insert(row.len()) != row.len() {
            return Err(raman_n2n::Error::InvalidData(format!("{}: ragged label map", path.display())).into());
        }
        labels.extend(row);
        rows += 1;
    }
    Ok((GridShape::new(rows, cols.unwrap_or(0)), labels))
}

/// `shift,<name0>,<name1>,...` with one row per channel.
pub fn write_columns(path: &Path, axis: &[f64], names: &[String], columns: &[Vec<f64>]) -> Result<(), CliError> {
    let mut out = String::from("shift");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (i, x) in axis.iter().enumerate() {
        let _ = write!(out, "{x}");
        for c in columns {
            let _ = write!(out, ",{}", c[i]);
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Wall-clock seconds per named stage, accumulated over repeated runs.
#[derive(Debug, Default)]
pub struct Timings {
    stages: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct TimingStat {
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

impl Timings {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.record(stage, t.elapsed().as_secs_f64());
        out
    }

    pub fn record(&mut self, stage: &str, seconds: f64) {
        self.stages.entry(stage.to_string()).or_default().push(seconds);
    }

    pub fn summary(&self) -> BTreeMap<String, TimingStat> {
        self.stages
            .iter()
            .map(|(k, v)| {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let std = if v.len() > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                (k.clone(), TimingStat { mean, std, runs: v.len() })
            })
            .collect()
    }
}

/// Everything needed to re-run the producing command.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub artifact_version: u32,
    pub tool_version: &'static str,
    pub command: &'a str,
    pub argv: &'a [String],
    pub seed: u64,
    pub inputs: BTreeMap<&'a str, String>,
    pub outputs: Vec<String>,
    pub config: &'a PipelineConfig,
    pub timings_seconds: BTreeMap<String, TimingStat>,
}
