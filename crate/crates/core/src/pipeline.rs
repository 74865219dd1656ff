//! Whole-tensor quantization and dequantization.
//!
//! EasyQuant on one tensor: detect n-sigma outliers over the whole matrix,
//! optimize each column's scale on its remaining entries, quantize those
//! entries, and keep the outliers in full precision. Dequantization rescales
//! every level and then writes the outliers back over their slots.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::optimize_normals;
use crate::outlier::{detect_with_stats, normal_view, scatter_into};
use crate::pack::{pack_levels, packed_len};
use crate::rtn::{channel_error_unchecked, initial_scale, level, LevelVector};
use crate::stats::tensor_stats;
use crate::types::{
    ChannelScales, DenseMatrix, ErrorSummary, OutlierSet, QuantConfig, QuantizedWeight,
};

/// Which parts of the algorithm run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Outlier isolation plus range optimization.
    #[default]
    Easyquant,
    /// Plain round-to-nearest at max-abs scales.
    Rtn,
    /// Outlier isolation at max-abs scales, no optimization.
    OutliersOnly,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Easyquant => "easyquant",
            Mode::Rtn => "rtn",
            Mode::OutliersOnly => "outliers-only",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "easyquant" => Ok(Mode::Easyquant),
            "rtn" => Ok(Mode::Rtn),
            "outliers-only" => Ok(Mode::OutliersOnly),
            _ => Err(format!(
                "unknown mode `{s}`, expected easyquant, rtn or outliers-only"
            )),
        }
    }
}

pub fn easyquant_tensor(w: &DenseMatrix, cfg: &QuantConfig) -> Result<QuantizedWeight> {
    quantize_tensor(w, cfg, Mode::Easyquant)
}

pub fn rtn_tensor(w: &DenseMatrix, cfg: &QuantConfig) -> Result<QuantizedWeight> {
    quantize_tensor(w, cfg, Mode::Rtn)
}

pub fn outliers_only_tensor(w: &DenseMatrix, cfg: &QuantConfig) -> Result<QuantizedWeight> {
    quantize_tensor(w, cfg, Mode::OutliersOnly)
}

/// Quantizes `w` with columns processed in parallel. The result does not
/// depend on scheduling.
pub fn quantize_tensor(w: &DenseMatrix, cfg: &QuantConfig, mode: Mode) -> Result<QuantizedWeight> {
    quantize_impl(w, cfg, mode, true)
}

struct ColumnResult {
    scale: f32,
    levels: Vec<i16>,
    positions: Vec<usize>,
    rtn_error: f64,
    final_error: f64,
}

/// `f32` scale that stays strictly positive after narrowing.
fn narrow_scale(s: f64) -> f32 {
    (s as f32).max(f32::MIN_POSITIVE)
}

fn quantize_column(
    column: &[f32],
    excluded: &[usize],
    cfg: &QuantConfig,
    mode: Mode,
) -> ColumnResult {
    let normals = normal_view(column, excluded);
    let x = &normals.values;

    let s0 = narrow_scale(initial_scale(x, cfg));
    let rtn_error = channel_error_unchecked(x, s0 as f64, cfg);
    let (scale, final_error) = match mode {
        Mode::Easyquant => {
            let (s, _) = optimize_normals(x, cfg);
            let s = narrow_scale(s);
            let e = channel_error_unchecked(x, s as f64, cfg);
            // Narrowing to f32 can nudge the error; never store a scale that
            // does worse than the starting point.
            if e <= rtn_error {
                (s, e)
            } else {
                (s0, rtn_error)
            }
        }
        Mode::Rtn | Mode::OutliersOnly => (s0, rtn_error),
    };

    let (lo, hi) = (cfg.l_min() as f64, cfg.l_max() as f64);
    let levels = x
        .iter()
        .map(|&v| level(v, scale as f64, lo, hi) as i16)
        .collect();
    ColumnResult {
        scale,
        levels,
        positions: normals.positions,
        rtn_error,
        final_error,
    }
}

pub(crate) fn quantize_impl(
    w: &DenseMatrix,
    cfg: &QuantConfig,
    mode: Mode,
    parallel: bool,
) -> Result<QuantizedWeight> {
    cfg.validate()?;
    let (rows, cols) = (w.rows(), w.cols());
    let stats = tensor_stats(w);
    let outliers = match mode {
        Mode::Rtn => OutlierSet::empty(stats.mean, stats.std, cfg.sigma_n),
        Mode::Easyquant | Mode::OutliersOnly => detect_with_stats(w, &stats, cfg.sigma_n),
    };
    let excluded = outliers.rows_by_column(cols);

    let run = |j: usize| quantize_column(&w.column(j), &excluded[j], cfg, mode);
    let columns: Vec<ColumnResult> = if parallel {
        (0..cols).into_par_iter().map(run).collect()
    } else {
        (0..cols).map(run).collect()
    };

    // Outlier slots keep level 0.
    let mut grid = vec![0i16; rows * cols];
    let mut rtn_error = 0.0f64;
    let mut final_error = 0.0f64;
    for (j, c) in columns.iter().enumerate() {
        for (&row, &l) in c.positions.iter().zip(&c.levels) {
            grid[row * cols + j] = l;
        }
        rtn_error += c.rtn_error;
        final_error += c.final_error;
    }
    if final_error > rtn_error {
        return Err(Error::Invariant(format!(
            "final error {final_error} exceeds initial error {rtn_error}"
        )));
    }

    let scales = ChannelScales::new(columns.iter().map(|c| c.scale).collect())?;
    let packed_levels = pack_levels(&LevelVector::new(grid, cfg.bits)?);
    Ok(QuantizedWeight {
        rows,
        cols,
        bits: cfg.bits,
        packed_levels,
        scales,
        outliers,
        errors: Some(ErrorSummary {
            rtn_error,
            final_error,
        }),
    })
}

fn check_consistent(q: &QuantizedWeight) -> Result<()> {
    QuantConfig::with_bits(q.bits).validate()?;
    if q.rows == 0 || q.cols == 0 {
        return Err(Error::EmptyMatrix {
            rows: q.rows,
            cols: q.cols,
        });
    }
    if q.scales.len() != q.cols {
        return Err(Error::Invariant(format!(
            "{} scales for {} columns",
            q.scales.len(),
            q.cols
        )));
    }
    let need = packed_len(q.len(), q.bits);
    if q.packed_levels.len() < need {
        return Err(Error::ShortLevels {
            have: q.packed_levels.len(),
            need,
            count: q.len(),
        });
    }
    q.outliers.check_bounds(q.rows, q.cols)
}

/// `scale_j * level` for every element, without restoring outliers.
pub fn dequantize_levels(q: &QuantizedWeight) -> Result<DenseMatrix> {
    check_consistent(q)?;
    let cfg = QuantConfig::with_bits(q.bits);
    let span = (cfg.l_max() - cfg.l_min() + 1) as usize;
    let table: Vec<f32> = (0..span).map(|c| (c as i32 + cfg.l_min()) as f32).collect();
    let scales = q.scales.as_slice();
    let cols = q.cols;
    let mut out = vec![0.0f32; q.len()];

    if q.bits == 4 {
        for (i, v) in out.iter_mut().enumerate() {
            let byte = q.packed_levels[i >> 1];
            let code = if i & 1 == 0 { byte & 0x0f } else { byte >> 4 };
            *v = table[code as usize] * scales[i % cols];
        }
    } else {
        for (i, (v, &code)) in out.iter_mut().zip(&q.packed_levels).enumerate() {
            let l = table.get(code as usize).ok_or_else(|| {
                Error::Invariant(format!(
                    "code {code} at element {i} exceeds {}-bit range",
                    q.bits
                ))
            })?;
            *v = l * scales[i % cols];
        }
    }
    DenseMatrix::new(q.rows, q.cols, out)
}

/// Reconstructs the full matrix: rescaled levels with outliers restored
/// bit-exactly.
pub fn dequantize_tensor(q: &QuantizedWeight) -> Result<DenseMatrix> {
    let mut w = dequantize_levels(q)?;
    scatter_into(&mut w, &q.outliers)?;
    Ok(w)
}
