//! Shared data model: spectra on a common Raman-shift axis, repeated
//! acquisitions over a spatial grid, and single-spectrum-per-point maps.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shared, immutable Raman-shift axis (cm⁻¹).
pub type Axis = Arc<[f64]>;

/// Build an evenly spaced axis.
pub fn uniform_axis(start: f64, step: f64, len: usize) -> Axis {
    (0..len).map(|i| start + step * i as f64).collect()
}

pub(crate) fn check_axis(axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::data("empty shift axis"));
    }
    if axis.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite shift axis value"));
    }
    if axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::data("non-increasing shift axis"));
    }
    Ok(())
}

/// One intensity trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    axis: Axis,
    intensities: Vec<f64>,
    norm_original: Option<f64>,
}

impl Spectrum {
    pub fn new(axis: Axis, intensities: Vec<f64>) -> Result<Self> {
        check_axis(&axis)?;
        if axis.len() != intensities.len() {
            return Err(Error::ShapeMismatch(format!(
                "axis has {} channels, intensities {}",
                axis.len(),
                intensities.len()
            )));
        }
        Ok(Spectrum {
            axis,
            intensities,
            norm_original: None,
        })
    }

    /// Construct without validating the axis; the caller guarantees it was
    /// already checked (e.g. it comes from a validated set).
    pub(crate) fn from_parts(axis: Axis, intensities: Vec<f64>, norm: Option<f64>) -> Self {
        debug_assert_eq!(axis.len(), intensities.len());
        Spectrum {
            axis,
            intensities,
            norm_original: norm,
        }
    }

    pub fn axis(&self) -> &Axis {
        &self.axis
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn into_intensities(self) -> Vec<f64> {
        self.intensities
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn norm_original(&self) -> Option<f64> {
        self.norm_original
    }

    pub fn with_norm_original(mut self, norm: Option<f64>) -> Result<Self> {
        if let Some(n) = norm {
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::data(format!("norm_original must be positive, got {n}")));
            }
        }
        self.norm_original = norm;
        Ok(self)
    }

    /// Same axis and norm bookkeeping, new intensities.
    pub fn with_intensities(&self, intensities: Vec<f64>) -> Self {
        assert_eq!(intensities.len(), self.len(), "intensity length changed");
        Spectrum {
            axis: self.axis.clone(),
            intensities,
            norm_original: self.norm_original,
        }
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.intensities)
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(rows: usize, cols: usize) -> Self {
        GridShape { rows, cols }
    }

    pub fn points(&self) -> usize {
        self.rows * self.cols
    }
}

/// Repeated acquisitions over a grid of spatial points at one integration
/// time. Intensities are stored as `f32` in (point, repetition, channel)
/// order, matching the on-disk payload so that save/load is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionSet {
    grid: GridShape,
    integration_time_ms: f64,
    repetitions: usize,
    axis: Axis,
    data: Vec<f32>,
    point_coords: Option<Vec<(f64, f64)>>,
}

impl AcquisitionSet {
    pub fn new(
        grid: GridShape,
        integration_time_ms: f64,
        repetitions: usize,
        axis: Axis,
        data: Vec<f32>,
    ) -> Result<Self> {
        if grid.rows == 0 || grid.cols == 0 {
            return Err(Error::data("empty dataset"));
        }
        if repetitions == 0 {
            return Err(Error::data("repetitions must be positive"));
        }
        if !(integration_time_ms > 0.0 && integration_time_ms.is_finite()) {
            return Err(Error::data("integration time must be positive"));
        }
        check_axis(&axis)?;
        let expected = grid.points() * repetitions * axis.len();
        if data.len() != expected {
            return Err(Error::PayloadSizeMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(AcquisitionSet {
            grid,
            integration_time_ms,
            repetitions,
            axis,
            data,
            point_coords: None,
        })
    }

    /// Assemble from per-point, per-repetition intensity vectors.
    pub fn from_spectra(
        grid: GridShape,
        integration_time_ms: f64,
        axis: Axis,
        spectra: &[Vec<Vec<f64>>],
    ) -> Result<Self> {
        if spectra.len() != grid.points() {
            return Err(Error::GridMismatch(format!(
                "{} points for a {}x{} grid",
                spectra.len(),
                grid.rows,
                grid.cols
            )));
        }
        let reps = spectra.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(grid.points() * reps * axis.len());
        for point in spectra {
            if point.len() != reps {
                return Err(Error::data("ragged repetition counts"));
            }
            for s in point {
                if s.len() != axis.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "spectrum of length {} on a {}-channel axis",
                        s.len(),
                        axis.len()
                    )));
                }
                data.extend(s.iter().map(|&v| v as f32));
            }
        }
        Self::new(grid, integration_time_ms, reps, axis, data)
    }

    pub fn with_point_coords(mut self, coords: Vec<(f64, f64)>) -> Result<Self> {
        if coords.len() != self.grid.points() {
            return Err(Error::GridMismatch(format!(
                "{} coordinates for {} points",
                coords.len(),
                self.grid.points()
            )));
        }
        self.point_coords = Some(coords);
        Ok(self)
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    pub fn points(&self) -> usize {
        self.grid.points()
    }

    pub fn repetitions(&self) -> usize {
        self.repetitions
    }

    pub fn channels(&self) -> usize {
        self.axis.len()
    }

    pub fn integration_time_ms(&self) -> f64 {
        self.integration_time_ms
    }

    pub fn axis(&self) -> &Axis {
        &self.axis
    }

    pub fn point_coords(&self) -> Option<&[(f64, f64)]> {
        self.point_coords.as_deref()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn spectrum_count(&self) -> usize {
        self.points() * self.repetitions
    }

    /// Raw intensities of one acquisition.
    pub fn raw(&self, point: usize, rep: usize) -> &[f32] {
        let c = self.channels();
        let start = (point * self.repetitions + rep) * c;
        &self.data[start..start + c]
    }

    pub fn spectrum(&self, point: usize, rep: usize) -> Spectrum {
        let v = self.raw(point, rep).iter().map(|&x| x as f64).collect();
        Spectrum::from_parts(self.axis.clone(), v, None)
    }

    /// Apply `f` to every acquisition, keeping layout and metadata.
    pub fn map_spectra<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(Spectrum) -> Result<Vec<f64>> + Sync,
    {
        use rayon::prelude::*;
        let c = self.channels();
        let chunks: Result<Vec<Vec<f32>>> = (0..self.spectrum_count())
            .into_par_iter()
            .map(|idx| {
                let s = self.spectrum(idx / self.repetitions, idx % self.repetitions);
                let out = f(s)?;
                if out.len() != c {
                    return Err(Error::ShapeMismatch("map_spectra changed length".into()));
                }
                Ok(out.into_iter().map(|v| v as f32).collect())
            })
            .collect();
        let data = chunks?.concat();
        let mut out = Self::new(
            self.grid,
            self.integration_time_ms,
            self.repetitions,
            self.axis.clone(),
            data,
        )?;
        out.point_coords = self.point_coords.clone();
        Ok(out)
    }

    /// Keep the listed repetitions (same list for every point).
    pub(crate) fn select_reps(&self, per_point: &[Vec<usize>]) -> Result<Self> {
        let keep = per_point.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(self.points() * keep * self.channels());
        for (p, reps) in per_point.iter().enumerate() {
            for &r in reps {
                data.extend_from_slice(self.raw(p, r));
            }
        }
        let mut out = Self::new(
            self.grid,
            self.integration_time_ms,
            keep,
            self.axis.clone(),
            data,
        )?;
        out.point_coords = self.point_coords.clone();
        Ok(out)
    }

    /// The `rep`-th acquisition of every point as a map.
    pub fn repetition_map(&self, rep: usize) -> HyperMap {
        let spectra = (0..self.points()).map(|p| self.spectrum(p, rep)).collect();
        HyperMap {
            grid: self.grid,
            axis: self.axis.clone(),
            spectra,
        }
    }
}

/// One spectrum per spatial point.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperMap {
    grid: GridShape,
    axis: Axis,
    spectra: Vec<Spectrum>,
}

impl HyperMap {
    pub fn new(grid: GridShape, spectra: Vec<Spectrum>) -> Result<Self> {
        if grid.points() == 0 {
            return Err(Error::data("empty dataset"));
        }
        if spectra.len() != grid.points() {
            return Err(Error::GridMismatch(format!(
                "{} spectra for a {}x{} grid",
                spectra.len(),
                grid.rows,
                grid.cols
            )));
        }
        let axis = spectra[0].axis().clone();
        if spectra.iter().any(|s| s.axis()[..] != axis[..]) {
            return Err(Error::data("map spectra do not share one shift axis"));
        }
        // Share a single allocation for the axis.
        let spectra = spectra
            .into_iter()
            .map(|s| Spectrum {
                axis: axis.clone(),
                ..s
            })
            .collect();
        Ok(HyperMap {
            grid,
            axis,
            spectra,
        })
    }

    pub fn from_rows(grid: GridShape, axis: Axis, rows: Vec<Vec<f64>>) -> Result<Self> {
        check_axis(&axis)?;
        let spectra = rows
            .into_iter()
            .map(|r| Spectrum::new(axis.clone(), r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, spectra)
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    pub fn axis(&self) -> &Axis {
        &self.axis
    }

    pub fn spectra(&self) -> &[Spectrum] {
        &self.spectra
    }

    pub fn into_spectra(self) -> Vec<Spectrum> {
        self.spectra
    }

    pub fn len(&self) -> usize {
        self.spectra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectra.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.axis.len()
    }

    /// Intensities as row vectors.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.spectra.iter().map(|s| s.intensities().to_vec()).collect()
    }

    /// Multiply every spectrum by `factor` (e.g. to bring a reference
    /// acquired at another integration time onto the same count scale).
    pub fn scaled(&self, factor: f64) -> HyperMap {
        let spectra = self
            .spectra
            .iter()
            .map(|s| s.with_intensities(s.intensities().iter().map(|v| v * factor).collect()))
            .collect();
        HyperMap {
            grid: self.grid,
            axis: self.axis.clone(),
            spectra,
        }
    }

    /// View as an acquisition set with a single repetition.
    pub fn to_set(&self, integration_time_ms: f64) -> Result<AcquisitionSet> {
        let spectra: Vec<Vec<Vec<f64>>> = self
            .spectra
            .iter()
            .map(|s| vec![s.intensities().to_vec()])
            .collect();
        AcquisitionSet::from_spectra(self.grid, integration_time_ms, self.axis.clone(), &spectra)
    }

    pub fn subset(&self, points: &[usize]) -> Vec<Spectrum> {
        points.iter().map(|&p| self.spectra[p].clone()).collect()
    }
}
