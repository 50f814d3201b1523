//! Spectral-fidelity metrics (RMSE, linear SNR, 1-D SSIM), Hungarian-matched
//! clustering agreement, and workflow speedup arithmetic.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

pub const DEFAULT_SSIM_WINDOW: usize = 11;

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("lengths {} and {} differ", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::data("empty spectra"));
    }
    Ok(())
}

pub fn rmse(reference: &[f64], test: &[f64]) -> Result<f64> {
    same_len(reference, test)?;
    let mse = reference.iter().zip(test).map(|(r, t)| (t - r).powi(2)).sum::<f64>() / reference.len() as f64;
    Ok(mse.sqrt())
}

/// `P_signal / P_noise` with both powers as mean squares; `+∞` when the
/// residual vanishes.
pub fn snr(reference: &[f64], test: &[f64]) -> Result<f64> {
    same_len(reference, test)?;
    let n = reference.len() as f64;
    let p_signal = reference.iter().map(|r| r * r).sum::<f64>() / n;
    let p_noise = reference.iter().zip(test).map(|(r, t)| (t - r).powi(2)).sum::<f64>() / n;
    if p_noise == 0.0 {
        if p_signal == 0.0 {
            return Err(Error::Numeric("SNR undefined: zero reference and zero residual".into()));
        }
        return Ok(f64::INFINITY);
    }
    Ok(p_signal / p_noise)
}

/// Mean SSIM over all length-`window` sliding windows with uniform weights.
/// The dynamic range `L` (hence `C1 = (0.01 L)²`, `C2 = (0.03 L)²`) is taken
/// from the reference.
pub fn ssim(reference: &[f64], test: &[f64], window: usize) -> Result<f64> {
    same_len(reference, test)?;
    if window == 0 || window > reference.len() {
        return Err(Error::param(format!(
            "SSIM window {window} does not fit {} channels",
            reference.len()
        )));
    }
    let (lo, hi) = reference
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::Numeric("degenerate dynamic range".into()));
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let w = window as f64;
    let count = reference.len() - window + 1;
    let total: f64 = (0..count)
        .map(|start| {
            let x = &reference[start..start + window];
            let y = &test[start..start + window];
            let mx = x.iter().sum::<f64>() / w;
            let my = y.iter().sum::<f64>() / w;
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for (a, b) in x.iter().zip(y) {
                vx += (a - mx) * (a - mx);
                vy += (b - my) * (b - my);
                cxy += (a - mx) * (b - my);
            }
            let (vx, vy, cxy) = (vx / w, vy / w, cxy / w);
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / count as f64)
}

/// Minimum-cost perfect assignment for a square cost matrix.
///
/// Returns `assignment[row] = column` and the total cost. Shortest
/// augmenting paths with row/column potentials, `O(n³)`.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = cost.len();
    if n == 0 {
        return Err(Error::param("empty cost matrix"));
    }
    if cost.iter().any(|r| r.len() != n) {
        return Err(Error::ShapeMismatch("cost matrix is not square".into()));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("cost matrix has non-finite entries".into()));
    }
    // 1-based internal indexing; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok((assignment, total))
}

/// Fraction of points on which two labelings agree after the best one-to-one
/// relabeling.
pub fn clustering_accuracy(labels_a: &[usize], labels_b: &[usize], k: usize) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::ShapeMismatch("label sequences differ in length".into()));
    }
    if labels_a.is_empty() || k == 0 {
        return Err(Error::param("empty labeling"));
    }
    let mut confusion = vec![vec![0.0; k]; k];
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        if a >= k || b >= k {
            return Err(Error::data(format!("label out of range for k = {k}")));
        }
        confusion[a][b] += 1.0;
    }
    let neg: Vec<Vec<f64>> = confusion.iter().map(|r| r.iter().map(|c| -c).collect()).collect();
    let (_, cost) = hungarian(&neg)?;
    Ok(-cost / labels_a.len() as f64)
}

/// Conventional acquisition time over the short-exposure workflow time
/// (short-exposure map + training set + validation set + compute).
pub fn workflow_speedup(
    map_points: usize,
    short_ms: f64,
    long_ms: f64,
    train_seconds: f64,
    validation_seconds: f64,
    compute_seconds: f64,
) -> f64 {
    let points = map_points as f64;
    let conventional = points * long_ms / 1000.0;
    conventional / (points * short_ms / 1000.0 + train_seconds + validation_seconds + compute_seconds)
}

fn finite_or_string<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(if *v > 0.0 { "inf" } else { "nan" })
    }
}

/// Table-style metrics for one evaluation (means over spectra).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub rmse: f64,
    #[serde(serialize_with = "finite_or_string", deserialize_with = "de_lenient_f64")]
    pub snr: f64,
    pub ssim: f64,
    pub kmeans_accuracy: Option<f64>,
    pub spectra: usize,
}

fn de_lenient_f64<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }
    Ok(match Num::deserialize(d)? {
        Num::F(v) => v,
        Num::S(s) if s == "inf" => f64::INFINITY,
        Num::S(_) => f64::NAN,
    })
}

impl MetricsReport {
    /// Per-spectrum metrics averaged over aligned (reference, test) pairs.
    pub fn compute<R: AsRef<[f64]>, T: AsRef<[f64]>>(
        label: impl Into<String>,
        references: &[R],
        tests: &[T],
        ssim_window: usize,
    ) -> Result<Self> {
        if references.len() != tests.len() || references.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "{} references for {} spectra",
                references.len(),
                tests.len()
            )));
        }
        let n = references.len() as f64;
        let (mut r, mut s, mut q) = (0.0, 0.0, 0.0);
        for (a, b) in references.iter().zip(tests) {
            r += rmse(a.as_ref(), b.as_ref())?;
            s += snr(a.as_ref(), b.as_ref())?;
            q += ssim(a.as_ref(), b.as_ref(), ssim_window)?;
        }
        Ok(MetricsReport {
            label: label.into(),
            rmse: r / n,
            snr: s / n,
            ssim: q / n,
            kmeans_accuracy: None,
            spectra: references.len(),
        })
    }

    /// Field-wise mean of several reports.
    pub fn mean(label: impl Into<String>, reports: &[MetricsReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::param("no reports to average"));
        }
        let n = reports.len() as f64;
        let acc = if reports.iter().all(|r| r.kmeans_accuracy.is_some()) {
            Some(reports.iter().filter_map(|r| r.kmeans_accuracy).sum::<f64>() / n)
        } else {
            None
        };
        Ok(MetricsReport {
            label: label.into(),
            rmse: reports.iter().map(|r| r.rmse).sum::<f64>() / n,
            snr: reports.iter().map(|r| r.snr).sum::<f64>() / n,
            ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
            kmeans_accuracy: acc,
            spectra: reports.iter().map(|r| r.spectra).sum(),
        })
    }
}
