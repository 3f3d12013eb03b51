//! Central-difference verification of analytic gradients.
//!
//! Perturbations are applied in single precision and the effective step is
//! recovered from the perturbed values, so the quotient is computed
//! exactly in double precision. Objectives are accumulated in double
//! precision.

pub mod suite;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{LfaError, Result};
use crate::tensor::Tensor;

pub use suite::{run_suite, suite_names, SuiteOptions};

pub const DEFAULT_EPSILON: f64 = 1e-3;
/// Tensors up to this many elements are checked at every coordinate.
pub const FULL_CHECK_LIMIT: usize = 4096;
/// Coordinates sampled from larger tensors.
pub const MIN_SAMPLES: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub op_name: String,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub checked_count: usize,
    /// Coordinates whose ±ε evaluations crossed a kink and were excluded.
    pub skipped_count: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradReport {
    /// `PASS name  rel=… abs=… n=… skipped=… tol=…`
    pub fn summary(&self) -> String {
        format!(
            "{} {:<34} rel={:.3e} abs={:.3e} n={} skipped={} tol={:.0e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.op_name,
            self.max_rel_error,
            self.max_abs_error,
            self.checked_count,
            self.skipped_count,
            self.tolerance
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, which is the largest
    /// gradient magnitude seen over the checked coordinates.
    pub rel_floor: f64,
    /// Coordinates drawn from tensors above [`FULL_CHECK_LIMIT`]; at least
    /// [`MIN_SAMPLES`].
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: DEFAULT_EPSILON,
            tolerance: 1e-3,
            rel_floor: 1e-6,
            samples: MIN_SAMPLES,
            seed: 0,
        }
    }
}

/// Every index when `len` is small, otherwise a seeded sample.
pub fn select_coords(len: usize, opts: &GradCheckOptions) -> Vec<usize> {
    if len <= FULL_CHECK_LIMIT {
        return (0..len).collect();
    }
    let n = opts.samples.max(MIN_SAMPLES).min(len);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut v = index::sample(&mut rng, len, n).into_vec();
    v.sort_unstable();
    v
}

/// Nudges `value` by ±ε in single precision; returns both points.
fn perturb(value: f32, eps: f64) -> (f32, f32) {
    ((value as f64 + eps) as f32, (value as f64 - eps) as f32)
}

/// An objective value and the kink pattern of the evaluation producing it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Probe {
    pub value: f64,
    pub pattern: u64,
}

/// Compares `analytic[i]` with central differences at `coords`, where
/// `eval(i, v)` evaluates the objective with coordinate `i` set to `v`.
/// Coordinates whose perturbed evaluations leave `base_pattern` are counted
/// as skipped rather than compared.
pub(crate) fn compare_coords(
    op_name: &str,
    coords: &[usize],
    value_at: impl Fn(usize) -> f32,
    analytic: impl Fn(usize) -> f64,
    base_pattern: u64,
    mut eval: impl FnMut(usize, f32) -> Result<Probe>,
    opts: &GradCheckOptions,
) -> Result<GradReport> {
    if !(opts.epsilon > 0.0) {
        return Err(LfaError::config("grad check epsilon must be positive"));
    }
    if coords.is_empty() {
        return Err(LfaError::Evaluation(format!("{op_name}: nothing to check")));
    }
    let (mut max_abs, mut scale) = (0.0f64, 0.0f64);
    let mut skipped = 0;
    for &i in coords {
        let x = value_at(i);
        let (hi, lo) = perturb(x, opts.epsilon);
        let p = eval(i, hi)?;
        let m = eval(i, lo)?;
        let (fp, fm) = (p.value, m.value);
        if !fp.is_finite() || !fm.is_finite() {
            return Err(LfaError::Evaluation(format!(
                "{op_name}: non-finite objective at coordinate {i}"
            )));
        }
        if p.pattern != base_pattern || m.pattern != base_pattern {
            skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (hi as f64 - lo as f64);
        let a = analytic(i);
        max_abs = max_abs.max((a - numeric).abs());
        scale = scale.max(a.abs()).max(numeric.abs());
    }
    // normwise: components near zero carry the same absolute rounding noise
    // from the single-precision forward as large ones
    let max_rel = max_abs / scale.max(opts.rel_floor);
    Ok(GradReport {
        op_name: op_name.to_string(),
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        checked_count: coords.len(),
        skipped_count: skipped,
        tolerance: opts.tolerance,
        passed: skipped < coords.len() && max_rel <= opts.tolerance,
    })
}

/// Checks `analytic` (the gradient of `f` at `x`) against central
/// differences of `f`.
pub fn grad_check(
    op_name: &str,
    x: &Tensor,
    analytic: &Tensor,
    mut f: impl FnMut(&Tensor) -> Result<f64>,
    opts: &GradCheckOptions,
) -> Result<GradReport> {
    if analytic.shape() != x.shape() {
        return Err(LfaError::shape(format!(
            "{op_name}: gradient {:?} for input {:?}",
            analytic.shape(),
            x.shape()
        )));
    }
    let base = f(x)?;
    if !base.is_finite() {
        return Err(LfaError::Evaluation(format!("{op_name}: non-finite objective {base}")));
    }
    let coords = select_coords(x.len(), opts);
    let mut probe = x.clone();
    compare_coords(
        op_name,
        &coords,
        |i| x.data()[i],
        |i| analytic.data()[i] as f64,
        0,
        |i, v| {
            probe.data_mut()[i] = v;
            let r = f(&probe);
            probe.data_mut()[i] = x.data()[i];
            r.map(|value| Probe { value, pattern: 0 })
        },
        opts,
    )
}
