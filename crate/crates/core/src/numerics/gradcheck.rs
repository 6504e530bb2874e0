//! Central finite-difference verification of analytic gradients.
//!
//! The caller supplies a loss closure that runs a full forward/backward and
//! leaves analytic gradients in the model's parameters. This module then
//! perturbs parameter elements one at a time and compares the numeric slope
//! against the recorded gradient. All comparisons happen in `f64`.

use std::fmt;

use super::nn::ParamVisitor;
use super::Scalar;
use crate::{Error, Result};

/// Outcome of a finite-difference sweep.
pub struct GradCheckReport {
    /// Largest relative error per parameter, in visit order.
    pub per_param: Vec<(String, f64)>,
    pub worst_name: String,
    pub worst_index: usize,
    pub worst_rel_err: f64,
    pub elements_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.worst_rel_err <= tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<40} {:>14}", "parameter", "max rel err")?;
        for (name, err) in &self.per_param {
            writeln!(f, "{:<40} {:>14.3e}", name, err)?;
        }
        write!(
            f,
            "worst: {} [{}] rel err {:.3e} over {} elements",
            self.worst_name, self.worst_index, self.worst_rel_err, self.elements_checked
        )
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Indices to probe: all elements up to the cap, then an even stride.
fn probe_indices(len: usize, cap: usize) -> Vec<usize> {
    if len <= cap {
        (0..len).collect()
    } else {
        let stride = len.div_ceil(cap);
        (0..len).step_by(stride).collect()
    }
}

/// Compare analytic gradients against central differences.
///
/// `loss_fn` must run the model forward and backward, store gradients in the
/// parameters, and return the loss. `epsilon` is the one-sided step;
/// `max_per_param` caps how many elements of each parameter are probed.
pub fn finite_diff_check<T, M, F>(
    model: &mut M,
    mut loss_fn: F,
    epsilon: f64,
    max_per_param: usize,
) -> Result<GradCheckReport>
where
    T: Scalar,
    M: ParamVisitor<T>,
    F: FnMut(&mut M) -> Result<f64>,
{
    let base_loss = loss_fn(model)?;
    if !base_loss.is_finite() {
        return Err(Error::CheckFailed(format!(
            "loss is not finite at the expansion point: {base_loss}"
        )));
    }
    // Snapshot analytic gradients and parameter extents.
    let mut names: Vec<String> = Vec::new();
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    model.visit_params(&mut |p| {
        names.push(p.name.clone());
        analytic.push(p.grad.iter().map(|&g| Scalar::to_f64(g)).collect());
    });

    let mut per_param = Vec::with_capacity(names.len());
    let mut worst = (String::new(), 0usize, -1.0f64);
    let mut checked = 0usize;

    for (k, name) in names.iter().enumerate() {
        let indices = probe_indices(analytic[k].len(), max_per_param);
        let mut param_worst = 0.0f64;
        for &i in &indices {
            let nudge = |delta: f64, m: &mut M| {
                let mut seen = 0usize;
                m.visit_params_mut(&mut |p| {
                    if seen == k {
                        let old = Scalar::to_f64(p.values[i]);
                        p.values[i] = T::from_f64(old + delta);
                    }
                    seen += 1;
                });
            };
            nudge(epsilon, model);
            let plus = loss_fn(model)?;
            nudge(-2.0 * epsilon, model);
            let minus = loss_fn(model)?;
            nudge(epsilon, model);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::CheckFailed(format!(
                    "perturbed loss is not finite at {name}[{i}]"
                )));
            }
            let fd = (plus - minus) / (2.0 * epsilon);
            let err = rel_err(analytic[k][i], fd);
            checked += 1;
            if err > param_worst {
                param_worst = err;
            }
            if err > worst.2 {
                worst = (name.clone(), i, err);
            }
        }
        per_param.push((name.clone(), param_worst));
    }
    // Restore the analytic gradients the final probe overwrote.
    let _ = loss_fn(model)?;
    Ok(GradCheckReport {
        per_param,
        worst_name: worst.0,
        worst_index: worst.1,
        worst_rel_err: worst.2.max(0.0),
        elements_checked: checked,
    })
}
