//! Central finite-difference oracle used to certify the reverse passes.
//!
//! Errors are compared elementwise with
//! `rel = |a - b| / max(|a|, |b|, 1e-8)`; a check passes when the worst
//! relative error is within tolerance or the worst absolute error is below
//! [`ABS_FLOOR`].

use std::fmt;

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

pub mod suite;

/// Finite-difference step (64-bit).
pub const STEP: f64 = 1e-5;
/// Relative tolerance for primitive operators.
pub const TOL_PRIMITIVE: f64 = 1e-5;
/// Relative tolerance for composed units (DTC, whole network).
pub const TOL_COMPOSITE: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-9;
/// Minimum distance of sampled coordinates (in continuous-index units) from
/// interpolation kinks.
pub const KINK_MARGIN: f64 = 1e-3;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every element.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor<f64>, h: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    let mut probe = x.clone();
    let mut grad = x.zeros_like();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("finite_diff_grad"));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Central differences of `x -> <r, f(x)>`. The two outputs are subtracted
/// before contracting with `r`, so entries that do not depend on `x_i`
/// cancel exactly.
pub fn finite_diff_vjp<F>(mut f: F, x: &Tensor<f64>, r: &Tensor<f64>, h: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let mut probe = x.clone();
    let mut grad = x.zeros_like();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        let diff = plus.sub(&minus)?;
        if !diff.is_finite() {
            return Err(Error::NonFinite("finite_diff_vjp"));
        }
        grad.data_mut()[i] = r.dot(&diff)? / (2.0 * h);
    }
    Ok(grad)
}

#[inline]
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Analytic and numeric gradients of one randomized instance, flattened in
/// the same order.
#[derive(Clone, Debug, Default)]
pub struct GradSample {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradSample {
    pub fn push(&mut self, analytic: &Tensor<f64>, numeric: &Tensor<f64>) {
        self.analytic.extend_from_slice(analytic.data());
        self.numeric.extend_from_slice(numeric.data());
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Trial and flat gradient index of the worst relative error.
    pub worst_trial: usize,
    pub worst_index: usize,
    pub trials: usize,
    pub passed: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {:.3e} {:.3e}",
            self.op_name,
            if self.passed { "pass" } else { "fail" },
            self.max_rel_error,
            self.max_abs_error
        )
    }
}

/// Worst-case comparison of one sample.
pub fn compare(op_name: &str, sample: &GradSample, tol_rel: f64) -> GradCheckReport {
    let mut report = GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_trial: 0,
        worst_index: 0,
        trials: 1,
        passed: false,
    };
    if sample.analytic.len() != sample.numeric.len() {
        report.max_rel_error = f64::INFINITY;
        report.max_abs_error = f64::INFINITY;
        return report;
    }
    for (i, (&a, &n)) in sample.analytic.iter().zip(&sample.numeric).enumerate() {
        let (rel, abs) = (rel_error(a, n), (a - n).abs());
        if !(rel <= report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
        if !(abs <= report.max_abs_error) {
            report.max_abs_error = abs;
        }
    }
    report.passed = report.max_rel_error <= tol_rel || report.max_abs_error <= ABS_FLOOR;
    report
}

/// Run `trials` randomized instances and reduce to the worst case. A trial
/// that errors counts as an infinite error.
pub fn check_op<F>(op_name: &str, trials: usize, tol_rel: f64, trial: F) -> GradCheckReport
where
    F: Fn(usize) -> Result<GradSample> + Sync + Send,
{
    let per_trial = par::map_range(trials.max(1), |t| match trial(t) {
        Ok(sample) => compare(op_name, &sample, tol_rel),
        Err(_) => GradCheckReport {
            op_name: op_name.to_string(),
            max_rel_error: f64::INFINITY,
            max_abs_error: f64::INFINITY,
            worst_trial: t,
            worst_index: 0,
            trials: 1,
            passed: false,
        },
    });
    let mut total = GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_trial: 0,
        worst_index: 0,
        trials: per_trial.len(),
        passed: true,
    };
    for (t, r) in per_trial.into_iter().enumerate() {
        if !(r.max_rel_error <= total.max_rel_error) {
            total.max_rel_error = r.max_rel_error;
            total.worst_trial = t;
            total.worst_index = r.worst_index;
        }
        if !(r.max_abs_error <= total.max_abs_error) {
            total.max_abs_error = r.max_abs_error;
        }
    }
    total.passed = total.max_rel_error <= tol_rel || total.max_abs_error <= ABS_FLOOR;
    total
}
