//! Finite-difference check of the range gradient.

use std::time::{Duration, Instant};

use rand::seq::index;
use rand::Rng;
use serde::Serialize;

use crate::optimizer::range_gradient;
use crate::outlier::normal_view;
use crate::rtn::{channel_error, initial_scale};
use crate::synthetic::{gaussian_vec, rng};
use crate::types::QuantConfig;

pub const CHANNEL_LEN: usize = 256;
pub const REL_TOL: f64 = 1e-3;
/// Points with some `x / s` this close to a rounding breakpoint are redrawn.
pub const BREAKPOINT_MARGIN: f64 = 1e-4;
const STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradTrial {
    pub scale: f64,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub passed: usize,
    pub redrawn: usize,
    pub worst_rel_error: f64,
    #[serde(skip)]
    pub elapsed: Duration,
    #[serde(skip)]
    pub samples: Vec<GradTrial>,
}

impl GradcheckReport {
    pub fn pass_rate(&self) -> f64 {
        self.passed as f64 / self.trials.max(1) as f64
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-30)
}

fn near_breakpoint(x: &[f32], s: f64) -> bool {
    x.iter().any(|&v| {
        let t = v as f64 / s;
        (t - t.floor() - 0.5).abs() < BREAKPOINT_MARGIN
    })
}

/// Compares the analytic gradient against a central difference of the
/// channel error on `trials` random channels with a few masked entries.
pub fn run_gradcheck(trials: usize, seed: u64) -> GradcheckReport {
    let cfg = QuantConfig::default();
    let mut rng = rng(seed);
    let start = Instant::now();
    let mut report = GradcheckReport {
        trials,
        passed: 0,
        redrawn: 0,
        worst_rel_error: 0.0,
        elapsed: Duration::ZERO,
        samples: Vec::with_capacity(trials),
    };
    while report.samples.len() < trials {
        let magnitude = 10f64.powf(rng.gen_range(-3.0..1.0)) as f32;
        let x: Vec<f32> = gaussian_vec(&mut rng, CHANNEL_LEN)
            .into_iter()
            .map(|v| v * magnitude)
            .collect();
        let masked = rng.gen_range(0..5);
        let mut excluded = index::sample(&mut rng, CHANNEL_LEN, masked).into_vec();
        excluded.sort_unstable();
        let normals = normal_view(&x, &excluded).values;
        let s = initial_scale(&normals, &cfg) * rng.gen_range(0.3..1.5);
        if near_breakpoint(&normals, s) {
            report.redrawn += 1;
            continue;
        }

        let analytic = range_gradient(&x, &excluded, s, &cfg).expect("positive scale");
        let h = STEP * s;
        let up = channel_error(&normals, s + h, &cfg).expect("positive scale");
        let down = channel_error(&normals, s - h, &cfg).expect("positive scale");
        let numeric = (up - down) / (2.0 * h);
        let rel = rel_error(analytic, numeric);
        if rel < REL_TOL {
            report.passed += 1;
        }
        report.worst_rel_error = report.worst_rel_error.max(rel);
        report.samples.push(GradTrial {
            scale: s,
            analytic,
            numeric,
            rel_error: rel,
        });
    }
    report.elapsed = start.elapsed();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes() {
        let r = run_gradcheck(50, 3);
        assert_eq!(r.samples.len(), 50);
        assert_eq!(r.passed, 50, "worst {}", r.worst_rel_error);
    }

    #[test]
    fn breakpoint_detection() {
        assert!(near_breakpoint(&[0.5], 1.0));
        assert!(near_breakpoint(&[-2.50001], 1.0));
        assert!(!near_breakpoint(&[0.49], 1.0));
    }
}
