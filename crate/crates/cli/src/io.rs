//! On-disk artifacts: raw `f32` arrays with JSON sidecars, PGM previews, CSV,
//! manifests. Every file is written to a temporary sibling and renamed.

use std::io::Write;
use std::path::{Path, PathBuf};

use codex_core::sampling::PlanParams;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::Failure;

pub const DTYPE: &str = "float32_le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub shape: [usize; 2],
    pub dtype: String,
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default)]
    pub lambda0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamped: Option<usize>,
}

impl Sidecar {
    pub fn new(role: &str, shape: (usize, usize)) -> Self {
        Self {
            shape: [shape.0, shape.1],
            dtype: DTYPE.into(),
            role: role.into(),
            angles: None,
            plan: None,
            code: None,
            lambda0: None,
            seed: None,
            clamped: None,
        }
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir.display(), e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Failure::io(dir.display(), e))?;
    tmp.write_all(bytes).map_err(|e| Failure::io(path.display(), e))?;
    tmp.persist(path).map_err(|e| Failure::io(path.display(), e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

/// Writes `<dir>/<stem>.f32` and its sidecar `<dir>/<stem>.json`; returns the file names.
pub fn write_array(dir: &Path, stem: &str, array: &Array2<f64>, sidecar: &Sidecar) -> Result<Vec<String>, Failure> {
    let bytes: Vec<u8> = array.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    let data = dir.join(format!("{stem}.f32"));
    write_atomic(&data, &bytes)?;
    write_json(&sidecar_path(&data), sidecar)?;
    Ok(vec![format!("{stem}.f32"), format!("{stem}.json")])
}

/// Reads an `.f32` file through its sidecar.
pub fn read_array(data: &Path) -> Result<(Array2<f64>, Sidecar), Failure> {
    let sidecar: Sidecar = read_json(&sidecar_path(data))?;
    if sidecar.dtype != DTYPE {
        return Err(Failure::config(format!("{}: unsupported dtype {}", data.display(), sidecar.dtype)));
    }
    let bytes = std::fs::read(data).map_err(|e| Failure::io(data.display(), e))?;
    let [rows, cols] = sidecar.shape;
    if bytes.len() != rows * cols * 4 {
        return Err(Failure::config(format!(
            "{}: {} bytes do not match shape {rows}x{cols}",
            data.display(),
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let array = Array2::from_shape_vec((rows, cols), values).expect("length checked");
    Ok((array, sidecar))
}

/// Binary 8-bit PGM, min-max windowed.
pub fn pgm(array: &Array2<f64>) -> Vec<u8> {
    let (rows, cols) = array.dim();
    let lo = array.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = array.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(array.iter().map(|&v| ((v - lo) * scale).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn write_pgm(dir: &Path, stem: &str, array: &Array2<f64>) -> Result<String, Failure> {
    let name = format!("{stem}.pgm");
    write_atomic(&dir.join(&name), &pgm(array))?;
    Ok(name)
}

pub fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<(), Failure> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

/// Provenance of one output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub files: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";
