//! Whole-model quantization over a fixed-size worker pool.
//!
//! Workers pull tensor indices from a shared counter, so at most `workers`
//! tensors are resident at once. Each task reads one tensor, writes one
//! output file and yields one record; records are merged in manifest order,
//! and the quantized manifest is written only when every tensor succeeded.
//! Output bytes do not depend on the worker count.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{read_quantized, write_quantized};
use crate::manifest::{
    file_stem, load_matrix, manifest_dir, read_raw_f32, write_raw_f32, ModelManifest, TensorSpec,
    MANIFEST_FILE,
};
use crate::pipeline::{dequantize_tensor, quantize_impl, Mode};
use crate::types::{ErrorSummary, QuantConfig, QuantizedWeight};

pub const QUANTIZED_MANIFEST_FILE: &str = "quantized_manifest.json";
pub const QUANTIZED_FORMAT: &str = "ezquant-model";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Quantized,
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedEntry {
    pub name: String,
    pub rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    pub kind: EntryKind,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlier_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errors: Option<ErrorSummary>,
}

impl QuantizedEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols.unwrap_or(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Index of a quantized model directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedManifest {
    pub format: String,
    pub version: u32,
    pub mode: Mode,
    pub config: QuantConfig,
    pub tensors: Vec<QuantizedEntry>,
}

impl QuantizedManifest {
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(QUANTIZED_MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        if m.format != QUANTIZED_FORMAT || m.version != 1 {
            return Err(Error::Manifest(format!(
                "{}: unsupported format {} v{}",
                path.display(),
                m.format,
                m.version
            )));
        }
        Ok(m)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join(QUANTIZED_MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Result of processing one manifest entry.
#[derive(Debug)]
pub struct TensorOutcome {
    pub name: String,
    pub elapsed: Duration,
    pub result: Result<QuantizedEntry>,
}

#[derive(Debug)]
pub struct QuantizedModel {
    pub out_dir: PathBuf,
    pub manifest: QuantizedManifest,
    pub outcomes: Vec<TensorOutcome>,
}

impl QuantizedModel {
    pub fn failures(&self) -> impl Iterator<Item = &TensorOutcome> {
        self.outcomes.iter().filter(|o| o.result.is_err())
    }

    pub fn is_complete(&self) -> bool {
        self.failures().next().is_none()
    }
}

/// Passes tensors that are not quantized through as raw `f32` copies.
fn process(
    index: usize,
    spec: &TensorSpec,
    quantize: bool,
    base: &Path,
    out_dir: &Path,
    cfg: &QuantConfig,
    mode: Mode,
) -> Result<QuantizedEntry> {
    let mut entry = QuantizedEntry {
        name: spec.name.clone(),
        rows: spec.rows,
        cols: spec.cols,
        kind: EntryKind::Passthrough,
        file: String::new(),
        role: spec.role.clone(),
        layer: spec.layer,
        outlier_count: None,
        errors: None,
    };
    if !quantize {
        let data = read_raw_f32(base.join(&spec.file), spec.len())?;
        entry.file = format!("{}.f32", file_stem(index, &spec.name));
        write_raw_f32(out_dir.join(&entry.file), &data)?;
        return Ok(entry);
    }

    let w = load_matrix(base, spec)?;
    let q = quantize_impl(&w, cfg, mode, false)?;
    drop(w);
    entry.kind = EntryKind::Quantized;
    entry.file = format!("{}.ezqt", file_stem(index, &spec.name));
    entry.outlier_count = Some(q.outliers.len());
    entry.errors = q.errors;
    write_quantized(&q, out_dir.join(&entry.file))?;
    Ok(entry)
}

/// Quantizes every tensor of `manifest` (files relative to `base`) into
/// `out_dir` using `workers` threads.
pub fn quantize_model(
    manifest: &ModelManifest,
    base: &Path,
    out_dir: &Path,
    cfg: &QuantConfig,
    mode: Mode,
    workers: usize,
) -> Result<QuantizedModel> {
    cfg.validate()?;
    manifest.validate()?;
    let filter = manifest.filter()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let tensors = &manifest.tensors;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<TensorOutcome>>> =
        Mutex::new((0..tensors.len()).map(|_| None).collect());

    thread::scope(|scope| {
        for _ in 0..workers.clamp(1, tensors.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(spec) = tensors.get(i) else { break };
                let start = Instant::now();
                let result = process(i, spec, filter.quantizes(spec), base, out_dir, cfg, mode);
                let outcome = TensorOutcome {
                    name: spec.name.clone(),
                    elapsed: start.elapsed(),
                    result,
                };
                slots
                    .lock()
                    .expect("no worker panics while holding the lock")[i] = Some(outcome);
            });
        }
    });

    let outcomes: Vec<TensorOutcome> = slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|o| o.expect("every index was claimed"))
        .collect();
    let qm = QuantizedManifest {
        format: QUANTIZED_FORMAT.into(),
        version: 1,
        mode,
        config: cfg.clone(),
        tensors: outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().ok().cloned())
            .collect(),
    };
    let model = QuantizedModel {
        out_dir: out_dir.to_path_buf(),
        manifest: qm,
        outcomes,
    };
    if model.is_complete() {
        model.manifest.save_dir(out_dir)?;
    }
    Ok(model)
}

/// Convenience wrapper that resolves tensor files next to the manifest.
pub fn quantize_manifest_file(
    manifest_path: &Path,
    out_dir: &Path,
    cfg: &QuantConfig,
    mode: Mode,
    workers: usize,
) -> Result<QuantizedModel> {
    let manifest = ModelManifest::load(manifest_path)?;
    quantize_model(
        &manifest,
        &manifest_dir(manifest_path),
        out_dir,
        cfg,
        mode,
        workers,
    )
}

/// Reads one quantized tensor from a model directory.
pub fn load_entry(dir: &Path, entry: &QuantizedEntry) -> Result<QuantizedWeight> {
    let mut q = read_quantized(dir.join(&entry.file))?;
    if Some(q.cols) != entry.cols || q.rows != entry.rows {
        return Err(Error::Manifest(format!(
            "`{}`: file shape {}x{} disagrees with manifest",
            entry.name, q.rows, q.cols
        )));
    }
    q.errors = entry.errors;
    Ok(q)
}

/// Reconstructs `f32` tensors plus an input-style manifest in `out_dir`.
pub fn dequantize_model(in_dir: &Path, out_dir: &Path) -> Result<ModelManifest> {
    let qm = QuantizedManifest::load_dir(in_dir)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut specs = Vec::with_capacity(qm.tensors.len());
    for (i, entry) in qm.tensors.iter().enumerate() {
        let file = format!("{}.f32", file_stem(i, &entry.name));
        let data = match entry.kind {
            EntryKind::Quantized => dequantize_tensor(&load_entry(in_dir, entry)?)?.into_data(),
            EntryKind::Passthrough => read_raw_f32(in_dir.join(&entry.file), entry.len())?,
        };
        write_raw_f32(out_dir.join(&file), &data)?;
        specs.push(TensorSpec {
            name: entry.name.clone(),
            rows: entry.rows,
            cols: entry.cols,
            dtype: "f32".into(),
            file,
            role: entry.role.clone(),
            layer: entry.layer,
        });
    }
    let manifest = ModelManifest::new(specs);
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Writes a manifest plus raw tensor files for a synthetic model.
///
/// Every `passthrough_every`-th tensor (if nonzero) is a 1-D bias vector.
pub fn write_synthetic_model(
    dir: &Path,
    tensors: usize,
    rows: usize,
    cols: usize,
    outlier_fraction: f64,
    passthrough_every: usize,
    seed: u64,
) -> Result<ModelManifest> {
    use crate::synthetic::{gaussian_vec, planted_matrix, rng};

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    const ROLES: [&str; 4] = ["attn.qkv", "attn.output", "ffn.1", "ffn.2"];
    let mut specs = Vec::with_capacity(tensors);
    for i in 0..tensors {
        let layer = (i / ROLES.len()) as u32;
        let role = ROLES[i % ROLES.len()];
        let bias = passthrough_every > 0 && (i + 1) % passthrough_every == 0;
        let (name, file, data, spec_cols) = if bias {
            let data = gaussian_vec(&mut rng(seed.wrapping_add(i as u64)), rows);
            (
                format!("h.{layer}.{role}.bias"),
                format!("t{i:03}.f32"),
                data,
                None,
            )
        } else {
            let (w, _) = planted_matrix(
                rows,
                cols,
                outlier_fraction,
                10.0,
                50.0,
                seed.wrapping_add(i as u64),
            );
            (
                format!("h.{layer}.{role}.weight"),
                format!("t{i:03}.f32"),
                w.into_data(),
                Some(cols),
            )
        };
        write_raw_f32(dir.join(&file), &data)?;
        specs.push(TensorSpec {
            name,
            rows,
            cols: spec_cols,
            dtype: "f32".into(),
            file,
            role: Some(role.into()),
            layer: Some(layer),
        });
    }
    let manifest = ModelManifest::new(specs);
    manifest.save(dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Outlier fraction and reconstruction error at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma_n: f32,
    pub tensors: usize,
    pub elements: usize,
    pub outliers: usize,
    pub outlier_fraction: f64,
    /// Full-tensor error of plain round-to-nearest.
    pub rtn_error: f64,
    /// Full-tensor error after isolation, optimization and outlier restore.
    pub final_error: f64,
}

/// Quantizes every selected tensor in memory at each threshold. Nothing is
/// written; tensors are loaded one at a time.
pub fn sweep_manifest(
    manifest: &ModelManifest,
    base: &Path,
    sigmas: &[f32],
    cfg: &QuantConfig,
) -> Result<Vec<SweepRow>> {
    use crate::rtn::reconstruction_error;

    manifest.validate()?;
    let filter = manifest.filter()?;
    let mut rows: Vec<SweepRow> = sigmas
        .iter()
        .map(|&sigma_n| SweepRow {
            sigma_n,
            tensors: 0,
            elements: 0,
            outliers: 0,
            outlier_fraction: 0.0,
            rtn_error: 0.0,
            final_error: 0.0,
        })
        .collect();
    for spec in manifest.tensors.iter().filter(|t| filter.quantizes(t)) {
        let w = load_matrix(base, spec)?;
        let rtn = quantize_impl(&w, cfg, Mode::Rtn, true)?;
        let rtn_error = rtn.errors.map_or(0.0, |e| e.final_error);
        for row in rows.iter_mut() {
            let c = QuantConfig {
                sigma_n: row.sigma_n,
                ..cfg.clone()
            };
            let q = quantize_impl(&w, &c, Mode::Easyquant, true)?;
            row.tensors += 1;
            row.elements += w.len();
            row.outliers += q.outliers.len();
            row.rtn_error += rtn_error;
            row.final_error += reconstruction_error(&w, &dequantize_tensor(&q)?, None)?;
        }
    }
    for row in rows.iter_mut() {
        row.outlier_fraction = row.outliers as f64 / row.elements.max(1) as f64;
    }
    Ok(rows)
}
