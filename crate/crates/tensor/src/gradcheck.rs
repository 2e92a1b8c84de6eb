use crate::{kink, Result, Tensor, TensorError};

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Element with the largest error, if any element was compared.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Elements whose perturbation changed a ReLU mask or pooling argmax.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// Errors are relative to `max(|analytic|, |numeric|, REL_FLOOR)` so that
/// exact zeros compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

/// Compare the analytic gradient of `f()` w.r.t. `param` with central
/// finite differences of step `step`.
///
/// `f` must rebuild the graph from current parameter values on every call
/// and return a one-element tensor. Elements where `x + step` or `x - step`
/// changes the branch taken by any piecewise-linear op are skipped: those
/// points are not differentiable within the stencil.
pub fn grad_check<F>(mut f: F, param: &Tensor<f64>, step: f64) -> Result<GradCheckReport>
where
    F: FnMut() -> Result<Tensor<f64>>,
{
    let (out, base_pattern) = kink::monitored(&mut f);
    let out = out?;
    if out.numel() != 1 {
        return Err(TensorError::NotScalar(out.shape().to_vec()));
    }
    param.clear_grad();
    out.backward()?;
    let analytic = param.grad().unwrap_or_else(|| vec![0.0; param.numel()]);
    drop(out);

    let original = param.to_vec();
    let mut probe = original.clone();
    let mut eval = |probe: &[f64]| -> Result<(f64, u64)> {
        param.set_data(probe);
        let (v, pattern) = kink::monitored(&mut f);
        Ok((v?.item(), pattern))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped: 0,
    };
    for i in 0..original.len() {
        probe[i] = original[i] + step;
        let (plus, p_plus) = eval(&probe)?;
        probe[i] = original[i] - step;
        let (minus, p_minus) = eval(&probe)?;
        probe[i] = original[i];
        if p_plus != base_pattern || p_minus != base_pattern {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    param.set_data(&original);
    Ok(report)
}
