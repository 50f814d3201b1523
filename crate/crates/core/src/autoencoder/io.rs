//! Model file: `N2NMODEL` magic, u32 LE header length, JSON header, then the
//! float32 LE payload (per layer: weights, then bias, in declared order).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{count_params, Architecture, LayerKind, LayerParams, ModelParams};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"N2NMODEL";

#[derive(Debug, Serialize, Deserialize)]
struct LayerHeader {
    kind: LayerKind,
    weight_shape: [usize; 3],
    bias_len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    architecture: Architecture,
    seed: u64,
    param_count: usize,
    dtype: String,
    layers: Vec<LayerHeader>,
}

pub(crate) fn encode(params: &ModelParams<f32>) -> Result<Vec<u8>> {
    let arch = params.arch();
    let header = Header {
        version: MODEL_FORMAT_VERSION,
        architecture: arch.clone(),
        seed: params.seed(),
        param_count: params.count(),
        dtype: "f32le".into(),
        layers: arch
            .layers()
            .iter()
            .map(|s| LayerHeader { kind: s.kind, weight_shape: s.weight_shape(), bias_len: s.out_ch })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * params.count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in params.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<ModelParams<f32>> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::data("not a model file (bad magic or truncated)"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() < hlen {
        return Err(Error::data("truncated model header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])?;
    if header.version != MODEL_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(header.version));
    }
    let arch = header.architecture;
    arch.validate()?;
    let expected = count_params(&arch);
    if header.param_count != expected {
        return Err(Error::ShapeMismatch(format!(
            "header declares {} parameters, architecture has {expected}",
            header.param_count
        )));
    }
    let payload = &body[hlen..];
    if payload.len() != 4 * expected {
        return Err(Error::PayloadSizeMismatch { expected: 4 * expected, found: payload.len() });
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let layers = arch
        .layers()
        .iter()
        .map(|s| LayerParams {
            weight: values.by_ref().take(s.weight_len()).collect(),
            bias: values.by_ref().take(s.out_ch).collect(),
        })
        .collect();
    let params = ModelParams::from_layers(&arch, header.seed, layers)?;
    if !params.is_finite() {
        return Err(Error::Numeric("model file contains non-finite parameters".into()));
    }
    Ok(params)
}

pub fn save_params(params: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(params)?)?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    decode(&fs::read(path)?)
}

/// Load and require a specific architecture.
pub fn load_params_for(path: impl AsRef<Path>, arch: &Architecture) -> Result<ModelParams<f32>> {
    let params = load_params(path)?;
    if params.arch() != arch {
        return Err(Error::ShapeMismatch(
            "model file architecture differs from the requested one".into(),
        ));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> Architecture {
        Architecture {
            encoder_filters: vec![2, 3],
            latent_filters: 4,
            decoder_filters: vec![3, 2],
            kernel: 5,
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let p = ModelParams::<f32>::build(&small_arch(), 9).unwrap();
        let bytes = encode(&p).unwrap();
        let q = decode(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(encode(&q).unwrap(), bytes);
    }

    #[test]
    fn truncated_file_rejected() {
        let p = ModelParams::<f32>::build(&small_arch(), 9).unwrap();
        let bytes = encode(&p).unwrap();
        for cut in [4, 11, 30, bytes.len() - 1] {
            assert!(decode(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn default_payload_size() {
        let p = ModelParams::<f32>::build(&Architecture::default(), 0).unwrap();
        let bytes = encode(&p).unwrap();
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert_eq!(bytes.len() - 12 - hlen, 1_050_820);
    }

    #[test]
    fn architecture_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_params(&ModelParams::<f32>::build(&small_arch(), 1).unwrap(), &path).unwrap();
        let err = load_params_for(&path, &Architecture::default()).unwrap_err();
        assert!(err.to_string().contains("shape mismatch"));
    }

    #[test]
    fn unknown_version_rejected() {
        let p = ModelParams::<f32>::build(&small_arch(), 1).unwrap();
        let bytes = encode(&p).unwrap();
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = String::from_utf8(bytes[12..12 + hlen].to_vec()).unwrap();
        let patched = header.replacen("\"version\":1", "\"version\":7", 1);
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(patched.len() as u32).to_le_bytes());
        out.extend_from_slice(patched.as_bytes());
        out.extend_from_slice(&bytes[12 + hlen..]);
        assert!(matches!(decode(&out), Err(Error::UnsupportedVersion(7))));
    }
}
