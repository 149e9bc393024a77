//! Instance files.
//!
//! An instance is stored as a JSON metadata document. Because generation is
//! deterministic, the metadata alone reproduces the instance; optionally the
//! arrays are written to a sibling binary file of little-endian `f64`s in the
//! order: A real, A imaginary (row-major, rows `a_j^*`), b real, b imaginary,
//! x real, x imaginary, y.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::model::{generate_instance, GaussianConvention, InstanceParams, ProblemInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(flatten)]
    pub params: InstanceParams,
    pub measurement_convention: GaussianConvention,
    pub signal_convention: GaussianConvention,
    /// Binary array file, relative to the JSON file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrays: Option<String>,
}

impl InstanceFile {
    pub fn new(params: InstanceParams) -> Self {
        Self {
            params,
            measurement_convention: GaussianConvention::UnitModulus,
            signal_convention: GaussianConvention::UnitComponents,
            arrays: None,
        }
    }
}

fn push_complex(out: &mut Vec<u8>, values: &[Complex64]) {
    for c in values {
        out.extend_from_slice(&c.re.to_le_bytes());
    }
    for c in values {
        out.extend_from_slice(&c.im.to_le_bytes());
    }
}

pub fn encode_arrays(instance: &ProblemInstance) -> Vec<u8> {
    let (m, d) = (instance.m(), instance.d());
    let mut out = Vec::with_capacity(8 * (2 * m * d + 3 * m + 2 * d));
    push_complex(&mut out, instance.a.as_slice());
    push_complex(&mut out, &instance.b);
    push_complex(&mut out, &instance.x);
    for y in &instance.y {
        out.extend_from_slice(&y.to_le_bytes());
    }
    out
}

pub fn decode_arrays(bytes: &[u8], params: &InstanceParams) -> std::result::Result<ProblemInstance, String> {
    let (m, d) = (params.m, params.d);
    let expected = 8 * (2 * m * d + 2 * m + 2 * d + m);
    if bytes.len() != expected {
        return Err(format!("array file has {} bytes, expected {expected}", bytes.len()));
    }
    let mut floats = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    let mut complex = |n: usize| -> Vec<Complex64> {
        let re: Vec<f64> = floats.by_ref().take(n).collect();
        let im: Vec<f64> = floats.by_ref().take(n).collect();
        re.into_iter().zip(im).map(|(r, i)| Complex64::new(r, i)).collect()
    };
    let a = complex(m * d);
    let b = complex(m);
    let x = complex(d);
    let y: Vec<f64> = floats.collect();
    let a = ComplexMatrix::from_row_major(m, d, a).map_err(|e| e.to_string())?;
    ProblemInstance::new(a, b, x, y, params.sigma, params.seed).map_err(|e| e.to_string())
}

/// Writes `json_path` and, if `with_arrays`, a `.bin` file next to it.
pub fn write_instance(
    instance: &ProblemInstance,
    params: &InstanceParams,
    json_path: &Path,
    with_arrays: bool,
) -> Result<()> {
    if let Some(dir) = json_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut meta = InstanceFile::new(*params);
    if with_arrays {
        let bin = json_path.with_extension("bin");
        fs::write(&bin, encode_arrays(instance)).map_err(|e| Error::io(&bin, e))?;
        meta.arrays = bin.file_name().map(|n| n.to_string_lossy().into_owned());
    }
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(json_path, format!("{text}\n")).map_err(|e| Error::io(json_path, e))
}

/// Loads an instance, from its array file when present and by regeneration
/// from the metadata otherwise.
pub fn read_instance(json_path: &Path) -> Result<(InstanceFile, ProblemInstance)> {
    let text = fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
    let meta: InstanceFile = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: json_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let instance = match &meta.arrays {
        Some(name) => {
            let bin: PathBuf = json_path
                .parent()
                .map(|p| p.join(name))
                .unwrap_or_else(|| PathBuf::from(name));
            let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
            decode_arrays(&bytes, &meta.params).map_err(|message| Error::Format { path: bin, message })?
        }
        None => generate_instance(&meta.params)?,
    };
    Ok((meta, instance))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arrays_round_trip_through_disk() {
        let params = InstanceParams::new(3, 11, 5.0, 0.05, 17);
        let inst = generate_instance(&params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        write_instance(&inst, &params, &path, true).unwrap();
        assert!(dir.path().join("inst.bin").exists());
        let (meta, back) = read_instance(&path).unwrap();
        assert_eq!(meta.params, params);
        assert_eq!(back, inst);
    }

    #[test]
    fn metadata_alone_regenerates() {
        let params = InstanceParams::new(2, 9, 5.0, 0.0, 4);
        let inst = generate_instance(&params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("meta.json");
        write_instance(&inst, &params, &path, false).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["d", "m", "bias_lambda", "sigma", "seed"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["measurement_convention"], "unit-modulus");
        assert_eq!(read_instance(&path).unwrap().1, inst);
    }

    #[test]
    fn binary_layout_is_real_then_imaginary() {
        let params = InstanceParams::new(1, 2, 1.0, 0.0, 1);
        let inst = generate_instance(&params).unwrap();
        let bytes = encode_arrays(&inst);
        let f = |i: usize| f64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
        assert_eq!(f(0), inst.a.as_slice()[0].re);
        assert_eq!(f(1), inst.a.as_slice()[1].re);
        assert_eq!(f(2), inst.a.as_slice()[0].im);
        assert_eq!(f(4), inst.b[0].re);
        assert_eq!(f(9), inst.x[0].im);
        assert_eq!(f(10), inst.y[0]);
        assert_eq!(bytes.len(), 8 * 12);
    }

    #[test]
    fn truncated_arrays_are_rejected() {
        let params = InstanceParams::new(2, 3, 1.0, 0.0, 1);
        let inst = generate_instance(&params).unwrap();
        let bytes = encode_arrays(&inst);
        assert!(decode_arrays(&bytes[..bytes.len() - 8], &params).is_err());
    }
}
