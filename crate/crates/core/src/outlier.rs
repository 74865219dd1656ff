//! n-sigma outlier isolation.
//!
//! An element is an outlier when `|w - mean| >= n * std` over the whole
//! tensor. Outliers stay in full precision; everything else is quantized.

use crate::error::Result;
use crate::stats::tensor_stats;
use crate::types::{DenseMatrix, OutlierEntry, OutlierSet, QuantConfig, TensorStats};

/// Threshold test shared by detection and reload verification.
#[inline]
pub fn is_outlier(value: f32, mean: f64, std: f64, sigma_n: f32) -> bool {
    std > 0.0 && (value as f64 - mean).abs() >= sigma_n as f64 * std
}

pub fn detect_outliers(w: &DenseMatrix, cfg: &QuantConfig) -> OutlierSet {
    detect_with_stats(w, &tensor_stats(w), cfg.sigma_n)
}

/// Detection against precomputed statistics. A zero `std` yields no outliers.
pub fn detect_with_stats(w: &DenseMatrix, stats: &TensorStats, sigma_n: f32) -> OutlierSet {
    let cols = w.cols();
    let entries: Vec<OutlierEntry> = w
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| is_outlier(v, stats.mean, stats.std, sigma_n))
        .map(|(i, &value)| OutlierEntry {
            row: i / cols,
            col: i % cols,
            value,
        })
        .collect();
    OutlierSet::new(entries, stats.mean, stats.std, sigma_n)
        .expect("row-major scan yields sorted entries")
}

/// Non-outlier entries of one channel, with their original positions.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalView {
    pub values: Vec<f32>,
    pub positions: Vec<usize>,
}

impl NormalView {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Drops the positions listed in `excluded` (ascending) from `x`.
pub fn normal_view(x: &[f32], excluded: &[usize]) -> NormalView {
    let mut skip = excluded.iter().peekable();
    let mut values = Vec::with_capacity(x.len().saturating_sub(excluded.len()));
    let mut positions = Vec::with_capacity(values.capacity());
    for (i, &v) in x.iter().enumerate() {
        while skip.peek().is_some_and(|&&e| e < i) {
            skip.next();
        }
        if skip.peek() == Some(&&i) {
            continue;
        }
        values.push(v);
        positions.push(i);
    }
    NormalView { values, positions }
}

/// Copies `w_hat` and overwrites every outlier coordinate with its stored
/// full-precision value.
pub fn scatter_outliers(w_hat: &DenseMatrix, outliers: &OutlierSet) -> Result<DenseMatrix> {
    let mut out = w_hat.clone();
    scatter_into(&mut out, outliers)?;
    Ok(out)
}

pub fn scatter_into(w_hat: &mut DenseMatrix, outliers: &OutlierSet) -> Result<()> {
    let (rows, cols) = (w_hat.rows(), w_hat.cols());
    outliers.check_bounds(rows, cols)?;
    let data = w_hat.data_mut();
    for e in outliers.entries() {
        data[e.row * cols + e.col] = e.value;
    }
    Ok(())
}
