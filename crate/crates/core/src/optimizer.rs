//! Per-channel quantization range optimization.
//!
//! The reconstruction error `r(s) = sum (s * q_i(s) - x_i)^2` is piecewise
//! quadratic in the scale. Between rounding breakpoints the levels `q_i` are
//! constant, so `dr/ds = 2 * sum (s * q_i - x_i) * q_i`. Clipped elements use
//! their clamped level, which is exact there because `Q = s * l_max` (or
//! `l_min`). The scale is driven down this gradient with Adam and the best
//! recorded scale is kept.

use crate::error::{Error, Result};
use crate::outlier::normal_view;
use crate::rtn::{channel_error_unchecked, check_scale, initial_scale, level};
use crate::types::{QuantConfig, SelectPolicy};

/// Scales never drop below this floor.
pub const MIN_SCALE: f64 = 1e-12;

/// Adam moments for one channel scale.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AdamState {
    pub m: f64,
    pub v: f64,
    pub t: u32,
}

/// One bias-corrected Adam update of the scale.
pub fn adam_step(state: AdamState, s: f64, g: f64, cfg: &QuantConfig) -> (AdamState, f64) {
    let t = state.t + 1;
    let m = cfg.adam_beta1 * state.m + (1.0 - cfg.adam_beta1) * g;
    let v = cfg.adam_beta2 * state.v + (1.0 - cfg.adam_beta2) * g * g;
    let m_hat = m / (1.0 - cfg.adam_beta1.powi(t as i32));
    let v_hat = v / (1.0 - cfg.adam_beta2.powi(t as i32));
    let next = s - cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    (AdamState { m, v, t }, next.max(MIN_SCALE))
}

/// Error and its derivative with respect to `s` in a single pass.
fn error_and_gradient(x: &[f32], s: f64, cfg: &QuantConfig) -> (f64, f64) {
    let (lo, hi) = (cfg.l_min() as f64, cfg.l_max() as f64);
    let mut err = 0.0f64;
    let mut grad = 0.0f64;
    for &v in x {
        let q = level(v, s, lo, hi);
        let r = s * q - v as f64;
        err += r * r;
        grad += r * q;
    }
    (err, 2.0 * grad)
}

/// Derivative of the masked reconstruction error with respect to the scale.
pub fn range_gradient(x: &[f32], excluded: &[usize], s: f64, cfg: &QuantConfig) -> Result<f64> {
    check_scale(s)?;
    let normals = normal_view(x, excluded);
    Ok(error_and_gradient(&normals.values, s, cfg).1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub step: usize,
    pub scale: f64,
    pub error: f64,
}

/// Scale and error at every optimizer step. Step 0 is the initial scale.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizeTrace {
    pub points: Vec<TracePoint>,
    /// Earliest step with the minimum recorded error.
    pub best_step: usize,
    pub best_scale: f64,
    pub best_error: f64,
    /// Step whose scale was returned under the configured policy.
    pub selected_step: usize,
}

impl OptimizeTrace {
    pub fn initial(&self) -> Option<&TracePoint> {
        self.points.first()
    }

    pub fn scales(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.scale)
    }

    /// Largest `|s_t - s_(t-1)|` over the final `window` steps.
    pub fn tail_movement(&self, window: usize) -> f64 {
        let n = self.points.len();
        let start = n.saturating_sub(window + 1);
        self.points[start..]
            .windows(2)
            .map(|w| (w[1].scale - w[0].scale).abs())
            .fold(0.0, f64::max)
    }
}

/// Optimizes the scale of one channel over its non-excluded entries.
///
/// Returns the selected scale, whose error never exceeds the error at the
/// initial scale. A channel with no normal entries gets scale 1.0 and an
/// empty trace.
pub fn optimize_channel_range(
    x: &[f32],
    excluded: &[usize],
    cfg: &QuantConfig,
) -> (f64, OptimizeTrace) {
    let normals = normal_view(x, excluded);
    optimize_normals(&normals.values, cfg)
}

pub(crate) fn optimize_normals(x: &[f32], cfg: &QuantConfig) -> (f64, OptimizeTrace) {
    if x.is_empty() {
        return (
            1.0,
            OptimizeTrace {
                best_scale: 1.0,
                ..OptimizeTrace::default()
            },
        );
    }

    let mut s = initial_scale(x, cfg);
    let mut state = AdamState::default();
    let mut points = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let (error, grad) = error_and_gradient(x, s, cfg);
        points.push(TracePoint {
            step,
            scale: s,
            error,
        });
        if step < cfg.steps {
            (state, s) = adam_step(state, s, grad, cfg);
        }
    }

    let best = points
        .iter()
        .fold(points[0], |b, p| if p.error < b.error { *p } else { b });
    let selected = match cfg.select {
        SelectPolicy::BestError => best,
        SelectPolicy::FixedStep(n) => {
            let p = points[n.min(cfg.steps)];
            if p.error <= points[0].error {
                p
            } else {
                points[0]
            }
        }
    };

    let trace = OptimizeTrace {
        best_step: best.step,
        best_scale: best.scale,
        best_error: best.error,
        selected_step: selected.step,
        points,
    };
    (selected.scale, trace)
}

/// Exhaustive search over `grid_points` scales evenly spaced on
/// `[s0 / 8, 1.25 * s0]`, plus `s0` itself. Ties go to the smaller scale.
pub fn brute_force_optimal_scale(
    x: &[f32],
    excluded: &[usize],
    cfg: &QuantConfig,
    grid_points: usize,
) -> Result<f64> {
    if grid_points < 2 {
        return Err(Error::InvalidConfig(format!(
            "grid search needs at least 2 points, got {grid_points}"
        )));
    }
    let normals = normal_view(x, excluded).values;
    if normals.is_empty() {
        return Ok(1.0);
    }
    let s0 = initial_scale(&normals, cfg);
    let (lo, hi) = (s0 / 8.0, s0 * 1.25);
    let step = (hi - lo) / (grid_points - 1) as f64;

    let mut candidates: Vec<f64> = (0..grid_points).map(|i| lo + step * i as f64).collect();
    candidates.push(s0);
    candidates.sort_by(f64::total_cmp);

    let mut best = (candidates[0], f64::INFINITY);
    for s in candidates {
        let e = channel_error_unchecked(&normals, s, cfg);
        if e < best.1 {
            best = (s, e);
        }
    }
    Ok(best.0)
}
