//! Dequantization timing as a function of outlier density.

use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::outlier::scatter_into;
use crate::pack::pack_levels;
use crate::pipeline::dequantize_levels;
use crate::rtn::LevelVector;
use crate::synthetic::rng;
use crate::types::{ChannelScales, OutlierEntry, OutlierSet, QuantConfig, QuantizedWeight};

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub ratio: f64,
    pub outliers: usize,
    /// Median seconds for rescaling all levels.
    pub dequant_s: f64,
    /// Median seconds for writing the outliers back.
    pub scatter_s: f64,
    pub overhead_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: usize,
    pub cols: usize,
    pub reps: usize,
    pub results: Vec<BenchRow>,
    /// Scatter time never decreases as the ratio grows.
    pub monotone: bool,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Random 4-bit weight with `ratio * rows * cols` outliers.
pub fn synthetic_weight(
    rows: usize,
    cols: usize,
    ratio: f64,
    seed: u64,
) -> Result<QuantizedWeight> {
    let cfg = QuantConfig::default();
    let mut rng = rng(seed);
    let len = rows * cols;
    let levels: Vec<i16> = (0..len)
        .map(|_| rng.gen_range(cfg.l_min()..=cfg.l_max()) as i16)
        .collect();
    let scales: Vec<f32> = (0..cols).map(|_| rng.gen_range(0.01..0.1)).collect();
    let count = ((ratio * len as f64).round() as usize).min(len);
    let mut picks = index::sample(&mut rng, len, count).into_vec();
    picks.sort_unstable();
    let entries = picks
        .into_iter()
        .map(|i| OutlierEntry {
            row: i / cols,
            col: i % cols,
            value: rng.gen_range(10.0..50.0),
        })
        .collect();
    Ok(QuantizedWeight {
        rows,
        cols,
        bits: cfg.bits,
        packed_levels: pack_levels(&LevelVector::new(levels, cfg.bits)?),
        scales: ChannelScales::new(scales)?,
        outliers: OutlierSet::new(entries, 0.0, 1.0, cfg.sigma_n)?,
        errors: None,
    })
}

/// Times level rescaling and outlier scatter separately for each ratio,
/// taking the median over `reps` runs.
pub fn dequant_bench(
    rows: usize,
    cols: usize,
    ratios: &[f64],
    reps: usize,
    seed: u64,
) -> Result<BenchReport> {
    if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::InvalidConfig(format!("ratio {r} outside [0, 1]")));
    }
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be positive".into()));
    }
    let mut results = Vec::with_capacity(ratios.len());
    for (i, &ratio) in ratios.iter().enumerate() {
        let q = synthetic_weight(rows, cols, ratio, seed.wrapping_add(i as u64))?;
        let mut dequant = Vec::with_capacity(reps);
        let mut scatter = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t = Instant::now();
            let mut w = dequantize_levels(&q)?;
            dequant.push(t.elapsed().as_secs_f64());
            let t = Instant::now();
            scatter_into(&mut w, &q.outliers)?;
            scatter.push(t.elapsed().as_secs_f64());
            std::hint::black_box(&w);
        }
        let dequant_s = median(dequant);
        let scatter_s = median(scatter);
        results.push(BenchRow {
            ratio,
            outliers: q.outliers.len(),
            dequant_s,
            scatter_s,
            overhead_pct: 100.0 * scatter_s / dequant_s,
        });
    }
    let mut order: Vec<&BenchRow> = results.iter().collect();
    order.sort_by(|a, b| a.ratio.total_cmp(&b.ratio));
    let monotone = order.windows(2).all(|w| w[1].scatter_s >= w[0].scatter_s);
    Ok(BenchReport {
        rows,
        cols,
        reps,
        results,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_ratio() {
        assert!(dequant_bench(4, 4, &[1.5], 1, 0).is_err());
        assert!(dequant_bench(4, 4, &[0.5], 0, 0).is_err());
    }

    #[test]
    fn outlier_counts_follow_ratio() {
        let r = dequant_bench(16, 32, &[0.0, 0.25, 1.0], 1, 0).unwrap();
        let counts: Vec<usize> = r.results.iter().map(|r| r.outliers).collect();
        assert_eq!(counts, vec![0, 128, 512]);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
