//! Round-to-nearest quantizer.
//!
//! A level is `clamp(round(x / s), l_min, l_max)` with ties rounded away from
//! zero, and a value is reconstructed as `s * level`. The scale `s` is the
//! step between adjacent levels.

use crate::error::{Error, Result};
use crate::types::{DenseMatrix, OutlierSet, QuantConfig};

/// Integer codes for one channel, each within the configured clamp bounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelVector {
    levels: Vec<i16>,
    bits: u8,
}

impl LevelVector {
    pub fn new(levels: Vec<i16>, bits: u8) -> Result<Self> {
        let cfg = QuantConfig::with_bits(bits);
        cfg.validate()?;
        let (lo, hi) = (cfg.l_min(), cfg.l_max());
        if let Some(&l) = levels.iter().find(|&&l| !(lo..=hi).contains(&(l as i32))) {
            return Err(Error::Invariant(format!(
                "level {l} outside [{lo}, {hi}] for {bits}-bit quantization"
            )));
        }
        Ok(Self { levels, bits })
    }

    pub(crate) fn new_unchecked(levels: Vec<i16>, bits: u8) -> Self {
        Self { levels, bits }
    }

    pub fn levels(&self) -> &[i16] {
        &self.levels
    }

    pub fn into_levels(self) -> Vec<i16> {
        self.levels
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

pub(crate) fn check_scale(s: f64) -> Result<()> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidScale(s))
    }
}

/// Level for a single value. `s` must already be validated.
#[inline]
pub(crate) fn level(x: f32, s: f64, l_min: f64, l_max: f64) -> f64 {
    // f64::round rounds half away from zero.
    (x as f64 / s).round().clamp(l_min, l_max)
}

/// Scale that maps the largest magnitude onto `l_max`.
///
/// An empty or all-zero channel gets `1.0`; every level is then 0 and the
/// channel reconstructs exactly.
pub fn initial_scale(x: &[f32], cfg: &QuantConfig) -> f64 {
    let max_abs = x.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    if max_abs > 0.0 {
        max_abs / cfg.l_max() as f64
    } else {
        1.0
    }
}

pub fn quantize_channel(x: &[f32], s: f64, cfg: &QuantConfig) -> Result<LevelVector> {
    check_scale(s)?;
    let (lo, hi) = (cfg.l_min() as f64, cfg.l_max() as f64);
    let levels = x.iter().map(|&v| level(v, s, lo, hi) as i16).collect();
    Ok(LevelVector::new_unchecked(levels, cfg.bits))
}

pub fn dequantize_channel(levels: &LevelVector, s: f64) -> Vec<f32> {
    levels
        .levels()
        .iter()
        .map(|&l| (s * l as f64) as f32)
        .collect()
}

/// `sum (s * level_i - x_i)^2` over the channel, in `f64` and element order.
pub fn channel_error(x: &[f32], s: f64, cfg: &QuantConfig) -> Result<f64> {
    check_scale(s)?;
    Ok(channel_error_unchecked(x, s, cfg))
}

pub(crate) fn channel_error_unchecked(x: &[f32], s: f64, cfg: &QuantConfig) -> f64 {
    let (lo, hi) = (cfg.l_min() as f64, cfg.l_max() as f64);
    x.iter()
        .map(|&v| {
            let d = s * level(v, s, lo, hi) - v as f64;
            d * d
        })
        .sum()
}

/// Squared Frobenius distance between `w` and `w_hat`, skipping positions
/// listed in `mask`.
///
/// Sums each column top to bottom, then adds the column totals left to right.
pub fn reconstruction_error(
    w: &DenseMatrix,
    w_hat: &DenseMatrix,
    mask: Option<&OutlierSet>,
) -> Result<f64> {
    w.check_same_shape(w_hat)?;
    let (rows, cols) = (w.rows(), w.cols());
    let excluded = match mask {
        Some(m) => {
            m.check_bounds(rows, cols)?;
            m.rows_by_column(cols)
        }
        None => vec![Vec::new(); cols],
    };

    let (a, b) = (w.data(), w_hat.data());
    let mut total = 0.0f64;
    for (col, skip) in excluded.iter().enumerate() {
        let mut skip = skip.iter().peekable();
        let mut col_sum = 0.0f64;
        for row in 0..rows {
            if skip.peek() == Some(&&row) {
                skip.next();
                continue;
            }
            let i = row * cols + col;
            let d = a[i] as f64 - b[i] as f64;
            col_sum += d * d;
        }
        total += col_sum;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::OutlierEntry;
    use proptest::prelude::*;

    fn k4() -> QuantConfig {
        QuantConfig::default()
    }

    #[test]
    fn initial_scale_examples() {
        assert_eq!(initial_scale(&[-3.0, 1.0, 2.0], &k4()), 0.375);
        assert_eq!(initial_scale(&[0.0, 0.0, 0.0], &k4()), 1.0);
        assert_eq!(initial_scale(&[], &k4()), 1.0);

        let s = initial_scale(&[8.0], &k4());
        assert_eq!(s, 1.0);
        let q = quantize_channel(&[8.0], s, &k4()).unwrap();
        assert_eq!(dequantize_channel(&q, s), vec![8.0]);
    }

    #[test]
    fn quantize_examples() {
        let q = quantize_channel(&[0.5, -0.25, 1.0, 2.5], 0.25, &k4()).unwrap();
        assert_eq!(q.levels(), &[2, -1, 4, 8]);
        assert_eq!(dequantize_channel(&q, 0.25), vec![0.5, -0.25, 1.0, 2.0]);

        let q = quantize_channel(&[0.0; 5], 0.7, &k4()).unwrap();
        assert!(q.levels().iter().all(|&l| l == 0));
        assert!(dequantize_channel(&q, 0.7).iter().all(|&v| v == 0.0));

        let q = quantize_channel(&[-1.75], 0.25, &k4()).unwrap();
        assert_eq!(q.levels(), &[-7]);
        let q = quantize_channel(&[-2.0], 0.25, &k4()).unwrap();
        assert_eq!(q.levels(), &[-7]);
    }

    #[test]
    fn ties_round_away_from_zero() {
        let q = quantize_channel(&[0.5, -0.5, 1.5, -2.5], 1.0, &k4()).unwrap();
        assert_eq!(q.levels(), &[1, -1, 2, -3]);
    }

    #[test]
    fn rejects_bad_scale() {
        for s in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                quantize_channel(&[1.0], s, &k4()),
                Err(Error::InvalidScale(_))
            ));
        }
    }

    #[test]
    fn grid_values_round_trip() {
        let s = 0.125;
        let x: Vec<f32> = (-7..=8).map(|l| l as f32 * 0.125).collect();
        let q = quantize_channel(&x, s, &k4()).unwrap();
        assert_eq!(dequantize_channel(&q, s), x);
        assert_eq!(channel_error(&x, s, &k4()).unwrap(), 0.0);
    }

    #[test]
    fn reconstruction_error_examples() {
        let w = DenseMatrix::from_rows(&[&[1.0, 2.0]]).unwrap();
        let zero = DenseMatrix::zeros(1, 2).unwrap();
        assert_eq!(reconstruction_error(&w, &w, None).unwrap(), 0.0);
        assert_eq!(reconstruction_error(&w, &zero, None).unwrap(), 5.0);

        let mask = OutlierSet::new(
            vec![OutlierEntry {
                row: 0,
                col: 1,
                value: 2.0,
            }],
            1.5,
            0.5,
            1.0,
        )
        .unwrap();
        assert_eq!(reconstruction_error(&w, &zero, Some(&mask)).unwrap(), 1.0);

        let other = DenseMatrix::zeros(2, 1).unwrap();
        assert!(matches!(
            reconstruction_error(&w, &other, None),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    fn channel() -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-10.0f32..10.0, 1..64)
    }

    proptest! {
        #[test]
        fn idempotent(x in channel(), s in 0.01f64..2.0, bits in 2u8..=8) {
            let cfg = QuantConfig::with_bits(bits);
            let q = quantize_channel(&x, s, &cfg).unwrap();
            let again = quantize_channel(&dequantize_channel(&q, s), s, &cfg).unwrap();
            prop_assert_eq!(q, again);
        }

        #[test]
        fn monotone(x in channel(), s in 0.01f64..2.0) {
            let q = quantize_channel(&x, s, &k4()).unwrap();
            for i in 0..x.len() {
                for j in 0..x.len() {
                    if x[i] <= x[j] {
                        prop_assert!(q.levels()[i] <= q.levels()[j]);
                    }
                }
            }
        }

        #[test]
        fn half_step_bound_without_clipping(x in channel()) {
            let cfg = k4();
            let s = initial_scale(&x, &cfg);
            let q = quantize_channel(&x, s, &cfg).unwrap();
            // s0 maps the largest magnitude to l_max, so only a negative
            // extreme can fall below l_min and clip.
            let lo = cfg.l_min() as f64 - 0.5;
            for (&v, &l) in x.iter().zip(q.levels()) {
                if (v as f64) / s < lo {
                    prop_assert_eq!(l as i32, cfg.l_min());
                    continue;
                }
                let err = (s * l as f64 - v as f64).abs();
                prop_assert!(err <= s / 2.0 * (1.0 + 1e-12));
            }
        }

        #[test]
        fn scale_equivariant(x in channel(), s in 0.01f64..2.0, e in -4i32..4) {
            // A power-of-two factor keeps c * x and c * s exact.
            let c = 2f64.powi(e);
            let cx: Vec<f32> = x.iter().map(|&v| (v as f64 * c) as f32).collect();
            let a = quantize_channel(&x, s, &k4()).unwrap();
            let b = quantize_channel(&cx, s * c, &k4()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
