//! On-disk dataset format: a JSON manifest next to a raw little-endian f32
//! payload, plus a small CSV format for hand-written fixtures.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{AcquisitionSet, GridShape};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "data.f32le";
const ORDER: &str = "point,rep,channel";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub rows: usize,
    pub cols: usize,
    pub repetitions: usize,
    pub integration_time_ms: f64,
    pub channels: usize,
    pub axis: Vec<f64>,
    pub payload: String,
    pub order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_coords: Option<Vec<(f64, f64)>>,
}

impl DatasetManifest {
    pub fn for_set(set: &AcquisitionSet) -> Self {
        DatasetManifest {
            version: DATASET_FORMAT_VERSION,
            rows: set.grid().rows,
            cols: set.grid().cols,
            repetitions: set.repetitions(),
            integration_time_ms: set.integration_time_ms(),
            channels: set.channels(),
            axis: set.axis().to_vec(),
            payload: PAYLOAD_FILE.into(),
            order: ORDER.into(),
            point_coords: set.point_coords().map(<[_]>::to_vec),
        }
    }
}

/// Write `manifest.json` and the payload into directory `dir` (created if
/// needed). Identical sets produce identical bytes.
pub fn save_dataset(set: &AcquisitionSet, dir: impl AsRef<Path>) -> Result<()> {
    if set.points() == 0 || set.spectrum_count() == 0 {
        return Err(Error::data("empty dataset"));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let manifest = DatasetManifest::for_set(set);
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(dir.join(MANIFEST_FILE), json)?;
    let mut bytes = Vec::with_capacity(set.data().len() * 4);
    for v in set.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(&manifest.payload), bytes)?;
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::MissingManifest(path.display().to_string()));
    }
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(&path)?)?;
    if manifest.version != DATASET_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(manifest.version));
    }
    if manifest.order != ORDER {
        return Err(Error::data(format!("unsupported payload order '{}'", manifest.order)));
    }
    if manifest.axis.len() != manifest.channels {
        return Err(Error::data(format!(
            "manifest declares {} channels but an axis of {}",
            manifest.channels,
            manifest.axis.len()
        )));
    }
    Ok(manifest)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<AcquisitionSet> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let bytes = fs::read(dir.join(&manifest.payload))?;
    let expected = manifest.rows * manifest.cols * manifest.repetitions * manifest.channels;
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(Error::PayloadSizeMismatch { expected, found: bytes.len() / 4 });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let set = AcquisitionSet::new(
        GridShape::new(manifest.rows, manifest.cols),
        manifest.integration_time_ms,
        manifest.repetitions,
        manifest.axis.into(),
        data,
    )?;
    match manifest.point_coords {
        Some(c) => set.with_point_coords(c),
        None => Ok(set),
    }
}

/// Read a CSV fixture: header `shift,s0,s1,...`, first column the shift
/// axis, then one column per spectrum in (point, repetition) order.
pub fn read_csv(
    path: impl AsRef<Path>,
    grid: GridShape,
    repetitions: usize,
    integration_time_ms: f64,
) -> Result<AcquisitionSet> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::data("empty CSV"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"shift") {
        return Err(Error::data("CSV header must start with 'shift'"));
    }
    let n_spectra = cols.len() - 1;
    if n_spectra != grid.points() * repetitions {
        return Err(Error::GridMismatch(format!(
            "{n_spectra} spectra for a {}x{} grid with {repetitions} repetitions",
            grid.rows, grid.cols
        )));
    }
    let mut axis = Vec::new();
    let mut columns = vec![Vec::new(); n_spectra];
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::data(format!("CSV row {} has {} fields, expected {}", lineno + 2, fields.len(), cols.len())));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::data(format!("CSV row {}: cannot parse '{s}'", lineno + 2)))
        };
        axis.push(parse(fields[0])?);
        for (col, f) in columns.iter_mut().zip(&fields[1..]) {
            col.push(parse(f)? as f32);
        }
    }
    let channels = axis.len();
    let mut data = Vec::with_capacity(n_spectra * channels);
    for col in columns {
        data.extend(col);
    }
    AcquisitionSet::new(grid, integration_time_ms, repetitions, axis.into(), data)
}

pub fn write_csv(set: &AcquisitionSet, path: impl AsRef<Path>) -> Result<()> {
    let n = set.spectrum_count();
    let mut out = String::from("shift");
    for i in 0..n {
        write!(out, ",s{i}").unwrap();
    }
    out.push('\n');
    let (reps, ch) = (set.repetitions(), set.channels());
    for (c, x) in set.axis().iter().enumerate() {
        write!(out, "{x}").unwrap();
        for i in 0..n {
            write!(out, ",{}", set.raw(i / reps, i % reps)[c]).unwrap();
        }
        out.push('\n');
    }
    debug_assert_eq!(set.data().len(), n * ch);
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::uniform_axis;

    fn small_set() -> AcquisitionSet {
        let axis = uniform_axis(100.0, 0.5, 5);
        let data = (0..2 * 3 * 2 * 5).map(|i| (i as f32 * 0.731).sin() * 1e3).collect();
        AcquisitionSet::new(GridShape::new(2, 3), 5.0, 2, axis, data).unwrap()
    }

    #[test]
    fn round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let set = small_set().with_point_coords((0..6).map(|i| (i as f64, 0.5)).collect()).unwrap();
        save_dataset(&set, dir.path().join("a")).unwrap();
        save_dataset(&set, dir.path().join("b")).unwrap();
        assert_eq!(load_dataset(dir.path().join("a")).unwrap(), set);
        for f in [MANIFEST_FILE, PAYLOAD_FILE] {
            assert_eq!(
                fs::read(dir.path().join("a").join(f)).unwrap(),
                fs::read(dir.path().join("b").join(f)).unwrap()
            );
        }
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&small_set(), dir.path()).unwrap();
        let p = dir.path().join(PAYLOAD_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&p, bytes).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("payload size mismatch"), "{err}");
    }

    #[test]
    fn missing_manifest_and_bad_version() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingManifest(_))));
        save_dataset(&small_set(), dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&p).unwrap().replace("\"version\": 1", "\"version\": 9");
        fs::write(&p, text).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::UnsupportedVersion(9))));
    }

    #[test]
    fn non_increasing_axis_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&small_set(), dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let mut m: DatasetManifest = serde_json::from_slice(&fs::read(&p).unwrap()).unwrap();
        m.axis[3] = m.axis[1];
        fs::write(&p, serde_json::to_vec(&m).unwrap()).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = small_set();
        let p = dir.path().join("s.csv");
        write_csv(&set, &p).unwrap();
        let back = read_csv(&p, set.grid(), 2, 5.0).unwrap();
        assert_eq!(back, set);
        assert!(read_csv(&p, GridShape::new(1, 3), 2, 5.0).is_err());
    }
}
