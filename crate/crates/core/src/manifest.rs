//! Model manifests and raw `f32` tensor files.
//!
//! Input manifest (`manifest.json`):
//!
//! ```json
//! {
//!   "version": 1,
//!   "tensors": [
//!     {"name": "h.0.attn.qkv", "rows": 1024, "cols": 3072, "dtype": "f32",
//!      "file": "h0_qkv.f32", "role": "attn.qkv", "layer": 0},
//!     {"name": "h.0.ln.bias", "rows": 1024, "dtype": "f32", "file": "h0_ln_bias.f32"}
//!   ],
//!   "exclude": ["^lm_head"]
//! }
//! ```
//!
//! An entry without `cols` is a 1-D tensor of length `rows` and is copied
//! through unquantized, as is any 2-D tensor whose name is filtered out by
//! the optional `include` / `exclude` regex lists. Tensor files hold
//! `rows * cols` little-endian `f32` values in row-major order.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::DenseMatrix;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    pub dtype: String,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<u32>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols.unwrap_or(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub version: u32,
    pub tensors: Vec<TensorSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub include: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclude: Vec<String>,
}

impl ModelManifest {
    pub fn new(tensors: Vec<TensorSpec>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            tensors,
            include: Vec::new(),
            exclude: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Reads and validates a manifest. Tensor files are checked when they
    /// are processed, so one missing file fails only that tensor.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported manifest version {}",
                self.version
            )));
        }
        let mut seen = HashSet::new();
        for t in &self.tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate tensor name `{}`",
                    t.name
                )));
            }
            if t.dtype != "f32" {
                return Err(Error::Manifest(format!(
                    "tensor `{}` has dtype `{}`, only f32 is supported",
                    t.name, t.dtype
                )));
            }
            if t.rows == 0 || t.cols == Some(0) {
                return Err(Error::Manifest(format!(
                    "tensor `{}` has an empty shape",
                    t.name
                )));
            }
        }
        self.filter()?;
        Ok(())
    }

    pub fn filter(&self) -> Result<NameFilter> {
        NameFilter::new(&self.include, &self.exclude)
    }
}

/// Decides which 2-D tensors get quantized.
#[derive(Debug, Clone)]
pub struct NameFilter {
    include: Vec<Regex>,
    exclude: Vec<Regex>,
}

impl NameFilter {
    pub fn new(include: &[String], exclude: &[String]) -> Result<Self> {
        let compile = |pats: &[String]| {
            pats.iter()
                .map(|p| {
                    Regex::new(p).map_err(|e| Error::Manifest(format!("bad pattern `{p}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            include: compile(include)?,
            exclude: compile(exclude)?,
        })
    }

    pub fn quantizes(&self, spec: &TensorSpec) -> bool {
        spec.cols.is_some()
            && (self.include.is_empty() || self.include.iter().any(|r| r.is_match(&spec.name)))
            && !self.exclude.iter().any(|r| r.is_match(&spec.name))
    }
}

pub fn read_raw_f32(path: impl AsRef<Path>, len: usize) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != len * 4 {
        return Err(Error::TensorFile {
            path: path.to_path_buf(),
            detail: format!(
                "{} bytes, expected {} for {len} f32 values",
                bytes.len(),
                len * 4
            ),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_raw_f32(path: impl AsRef<Path>, data: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a 2-D tensor described by `spec`, relative to `base`.
pub fn load_matrix(base: &Path, spec: &TensorSpec) -> Result<DenseMatrix> {
    let path = base.join(&spec.file);
    let cols = spec.cols.unwrap_or(1);
    let data = read_raw_f32(&path, spec.rows * cols)?;
    DenseMatrix::new(spec.rows, cols, data).map_err(|e| Error::TensorFile {
        path,
        detail: e.to_string(),
    })
}

/// Filesystem-safe stem, prefixed with the manifest index to stay unique.
pub(crate) fn file_stem(index: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{index:04}_{clean}")
}

pub(crate) fn manifest_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}
