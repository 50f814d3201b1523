//! Block-averaging noise analysis: how the noise of averaged repetitions
//! falls with total acquisition time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::AcquisitionSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragingCurve {
    /// (total averaging time in seconds, noise estimate)
    pub points: Vec<(f64, f64)>,
    pub block_sizes: Vec<usize>,
    pub integration_time_ms: f64,
    pub aggregation: String,
}

const AGGREGATION: &str = "rms over channels of block-mean std, mean over points";

/// Powers of two up to half the repetition count.
pub fn default_block_sizes(repetitions: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |m| m.checked_mul(2)).take_while(|&m| 2 * m <= repetitions).collect()
}

/// For each block size `m`, average consecutive runs of `m` repetitions and
/// measure the spread of those block means.
pub fn block_average_curve(set: &AcquisitionSet, block_sizes: &[usize]) -> Result<AveragingCurve> {
    let reps = set.repetitions();
    if reps < 2 {
        return Err(Error::data("block averaging needs at least 2 repetitions"));
    }
    if block_sizes.is_empty() {
        return Err(Error::param("no block sizes given"));
    }
    let mut sizes = block_sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    for &m in &sizes {
        if m == 0 || m > reps {
            return Err(Error::param(format!("block size {m} outside 1..={reps}")));
        }
        if reps / m < 2 {
            return Err(Error::param(format!("block size {m} leaves fewer than two blocks of {reps} repetitions")));
        }
    }
    let c = set.channels();
    let points: Vec<(f64, f64)> = sizes
        .iter()
        .map(|&m| {
            let blocks = reps / m;
            let per_point: Vec<f64> = (0..set.points())
                .into_par_iter()
                .map(|p| {
                    let mut means = vec![0.0f64; blocks * c];
                    for b in 0..blocks {
                        let row = &mut means[b * c..(b + 1) * c];
                        for r in b * m..(b + 1) * m {
                            for (acc, &v) in row.iter_mut().zip(set.raw(p, r)) {
                                *acc += f64::from(v);
                            }
                        }
                        row.iter_mut().for_each(|v| *v /= m as f64);
                    }
                    let mut var_sum = 0.0;
                    for ch in 0..c {
                        let mu = (0..blocks).map(|b| means[b * c + ch]).sum::<f64>() / blocks as f64;
                        let ss: f64 = (0..blocks).map(|b| (means[b * c + ch] - mu).powi(2)).sum();
                        var_sum += ss / (blocks - 1) as f64;
                    }
                    (var_sum / c as f64).sqrt()
                })
                .collect();
            let noise = per_point.iter().sum::<f64>() / per_point.len() as f64;
            (m as f64 * set.integration_time_ms() / 1000.0, noise)
        })
        .collect();
    Ok(AveragingCurve {
        points,
        block_sizes: sizes,
        integration_time_ms: set.integration_time_ms(),
        aggregation: AGGREGATION.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Residual standard deviation in natural-log units (n − 2 dof).
    pub residual_std: f64,
}

impl LogLogFit {
    pub fn predict(&self, t: f64) -> f64 {
        (self.intercept + self.slope * t.ln()).exp()
    }
}

/// Least squares on (ln T, ln noise).
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if points.len() < 3 {
        return Err(Error::param("need at least 3 points for a slope fit"));
    }
    if points.iter().any(|&(t, n)| !(t > 0.0) || !(n > 0.0)) {
        return Err(Error::data("log-log fit needs strictly positive values"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::data("all averaging times are equal"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(LogLogFit { slope, intercept, residual_std: (ssr / (n - 2.0)).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Departure {
    pub fit: LogLogFit,
    /// ln(observed / extrapolated) at the last point.
    pub log_excess: f64,
    /// `log_excess` in units of the fit residual std.
    pub sigmas: f64,
}

/// Fit the first `fit_points` points and measure how far the last point sits
/// above the extrapolated line.
pub fn last_point_departure(curve: &AveragingCurve, fit_points: usize) -> Result<Departure> {
    if fit_points >= curve.points.len() {
        return Err(Error::param("need at least one point beyond the fitted range"));
    }
    let fit = fit_loglog_slope(&curve.points[..fit_points])?;
    let &(t, n) = curve.points.last().expect("nonempty");
    let log_excess = n.ln() - (fit.intercept + fit.slope * t.ln());
    let sigmas = if fit.residual_std > 0.0 { log_excess / fit.residual_std } else { f64::INFINITY * log_excess.signum() };
    Ok(Departure { fit, log_excess, sigmas })
}
