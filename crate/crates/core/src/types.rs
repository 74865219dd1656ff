//! Shared domain types.
//!
//! Everything here is immutable once built and validated at construction,
//! so downstream code can assume shape and finiteness invariants hold.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `f32` weight matrix. Every element is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::ShapeData {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let data: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    /// Copies column `col` out of the row-major buffer.
    pub fn column(&self, col: usize) -> Vec<f32> {
        self.data[col..]
            .iter()
            .step_by(self.cols)
            .copied()
            .collect()
    }

    /// Elementwise `a * x + b`, rounded to `f32`.
    pub fn affine(&self, a: f32, b: f32) -> Result<Self> {
        Self::new(
            self.rows,
            self.cols,
            self.data.iter().map(|&x| a * x + b).collect(),
        )
    }

    pub(crate) fn check_same_shape(&self, other: &DenseMatrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        Ok(())
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// How the optimizer picks the scale it returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectPolicy {
    /// Lowest recorded reconstruction error across all steps.
    #[default]
    BestError,
    /// Scale after a fixed number of optimizer steps.
    FixedStep(usize),
}

impl fmt::Display for SelectPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectPolicy::BestError => f.write_str("best"),
            SelectPolicy::FixedStep(n) => write!(f, "step:{n}"),
        }
    }
}

impl FromStr for SelectPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "best" | "best_error" => Ok(SelectPolicy::BestError),
            _ => s
                .strip_prefix("step:")
                .and_then(|n| n.parse().ok())
                .map(SelectPolicy::FixedStep)
                .ok_or_else(|| format!("expected `best` or `step:N`, got `{s}`")),
        }
    }
}

/// Quantization hyperparameters.
///
/// The clamp bounds are derived from `bits` on demand and never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub bits: u8,
    pub sigma_n: f32,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub steps: usize,
    pub select: SelectPolicy,
    pub seed: u64,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bits: 4,
            sigma_n: 3.0,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            steps: 200,
            select: SelectPolicy::BestError,
            seed: 0,
        }
    }
}

impl QuantConfig {
    pub const MIN_BITS: u8 = 2;
    pub const MAX_BITS: u8 = 8;

    pub fn with_bits(bits: u8) -> Self {
        Self {
            bits,
            ..Self::default()
        }
    }

    /// Lowest level, `-2^(k-1) + 1`.
    pub fn l_min(&self) -> i32 {
        -(1i32 << (self.bits - 1)) + 1
    }

    /// Highest level, `2^(k-1)`.
    pub fn l_max(&self) -> i32 {
        1i32 << (self.bits - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(Self::MIN_BITS..=Self::MAX_BITS).contains(&self.bits) {
            return Err(Error::InvalidConfig(format!(
                "bits must be in [{}, {}], got {}",
                Self::MIN_BITS,
                Self::MAX_BITS,
                self.bits
            )));
        }
        if !(self.sigma_n.is_finite() && self.sigma_n >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sigma_n must be finite and >= 0, got {}",
                self.sigma_n
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        for (name, beta) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be in [0, 1), got {beta}"
                )));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "adam_eps must be positive, got {}",
                self.adam_eps
            )));
        }
        Ok(())
    }
}

/// One positive scale per matrix column.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelScales(Vec<f32>);

impl ChannelScales {
    pub fn new(scales: Vec<f32>) -> Result<Self> {
        if let Some(&s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidScale(s as f64));
        }
        Ok(Self(scales))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, col: usize) -> f32 {
        self.0[col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierEntry {
    pub row: usize,
    pub col: usize,
    pub value: f32,
}

/// Full-precision values kept out of quantization, sorted by `(row, col)`.
///
/// Carries the tensor statistics and threshold that selected them so the
/// selection can be re-verified after a reload.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierSet {
    entries: Vec<OutlierEntry>,
    pub mean: f64,
    pub std: f64,
    pub sigma_n: f32,
}

impl OutlierSet {
    pub fn new(entries: Vec<OutlierEntry>, mean: f64, std: f64, sigma_n: f32) -> Result<Self> {
        let sorted = entries
            .windows(2)
            .all(|w| (w[0].row, w[0].col) < (w[1].row, w[1].col));
        if !sorted {
            return Err(Error::UnsortedOutliers);
        }
        Ok(Self {
            entries,
            mean,
            std,
            sigma_n,
        })
    }

    pub fn empty(mean: f64, std: f64, sigma_n: f32) -> Self {
        Self {
            entries: Vec::new(),
            mean,
            std,
            sigma_n,
        }
    }

    pub fn entries(&self) -> &[OutlierEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.entries
            .binary_search_by(|e| (e.row, e.col).cmp(&(row, col)))
            .is_ok()
    }

    pub fn check_bounds(&self, rows: usize, cols: usize) -> Result<()> {
        match self.entries.iter().find(|e| e.row >= rows || e.col >= cols) {
            Some(e) => Err(Error::OutOfBounds {
                row: e.row,
                col: e.col,
                rows,
                cols,
            }),
            None => Ok(()),
        }
    }

    /// Excluded row indices for each column, ascending within a column.
    pub fn rows_by_column(&self, cols: usize) -> Vec<Vec<usize>> {
        let mut by_col = vec![Vec::new(); cols];
        for e in &self.entries {
            by_col[e.col].push(e.row);
        }
        by_col
    }
}

/// Tensor-wide statistics. `std` is the population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorStats {
    pub mean: f64,
    pub std: f64,
    pub max_abs: f64,
    pub count: usize,
}

/// Reconstruction errors recorded when a tensor was quantized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    /// Masked error at the initial (max-abs) scales.
    pub rtn_error: f64,
    /// Masked error at the scales actually stored.
    pub final_error: f64,
}

impl ErrorSummary {
    /// Percentage of `rtn_error` removed; 0 when there was nothing to remove.
    pub fn reduction_pct(&self) -> f64 {
        if self.rtn_error > 0.0 {
            100.0 * (self.rtn_error - self.final_error) / self.rtn_error
        } else {
            0.0
        }
    }
}

/// A quantized weight matrix: packed levels, per-column scales and the
/// isolated outliers.
///
/// `errors` is provenance only. It is known right after quantization but is
/// not part of the on-disk tensor layout, so a tensor read back from a file
/// has `errors == None`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeight {
    pub rows: usize,
    pub cols: usize,
    pub bits: u8,
    pub packed_levels: Vec<u8>,
    pub scales: ChannelScales,
    pub outliers: OutlierSet,
    pub errors: Option<ErrorSummary>,
}

impl QuantizedWeight {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn outlier_fraction(&self) -> f64 {
        self.outliers.len() as f64 / self.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_bounds_follow_bits() {
        let cfg = QuantConfig::default();
        assert_eq!((cfg.l_min(), cfg.l_max()), (-7, 8));
        let cfg = QuantConfig::with_bits(2);
        assert_eq!((cfg.l_min(), cfg.l_max()), (-1, 2));
        let cfg = QuantConfig::with_bits(8);
        assert_eq!((cfg.l_min(), cfg.l_max()), (-127, 128));
    }

    #[test]
    fn config_validation() {
        assert!(QuantConfig::default().validate().is_ok());
        assert!(QuantConfig::with_bits(1).validate().is_err());
        assert!(QuantConfig::with_bits(9).validate().is_err());
        let bad = QuantConfig {
            sigma_n: -1.0,
            ..QuantConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = QuantConfig {
            lr: 0.0,
            ..QuantConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn matrix_rejects_bad_input() {
        assert!(matches!(
            DenseMatrix::new(2, 2, vec![0.0; 3]),
            Err(Error::ShapeData { .. })
        ));
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![0.0, f32::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(matches!(
            DenseMatrix::new(0, 2, vec![]),
            Err(Error::EmptyMatrix { .. })
        ));
    }

    #[test]
    fn column_is_strided() {
        let m = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]).unwrap();
        assert_eq!(m.column(1), vec![2.0, 4.0, 6.0]);
        assert_eq!(m.get(2, 0), 5.0);
    }

    #[test]
    fn scales_must_be_positive() {
        assert!(ChannelScales::new(vec![1.0, 0.5]).is_ok());
        assert!(ChannelScales::new(vec![1.0, 0.0]).is_err());
        assert!(ChannelScales::new(vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn outlier_set_requires_sorted_entries() {
        let e = |row, col| OutlierEntry {
            row,
            col,
            value: 1.0,
        };
        assert!(OutlierSet::new(vec![e(0, 1), e(1, 0)], 0.0, 1.0, 3.0).is_ok());
        assert!(OutlierSet::new(vec![e(1, 0), e(0, 1)], 0.0, 1.0, 3.0).is_err());
        assert!(OutlierSet::new(vec![e(0, 1), e(0, 1)], 0.0, 1.0, 3.0).is_err());
    }

    #[test]
    fn select_policy_parses() {
        assert_eq!("best".parse::<SelectPolicy>(), Ok(SelectPolicy::BestError));
        assert_eq!(
            "step:100".parse::<SelectPolicy>(),
            Ok(SelectPolicy::FixedStep(100))
        );
        assert!("step:x".parse::<SelectPolicy>().is_err());
        assert_eq!(SelectPolicy::FixedStep(5).to_string(), "step:5");
    }
}
