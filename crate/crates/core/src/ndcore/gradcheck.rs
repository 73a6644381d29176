//! Central finite-difference gradients, used as an oracle for the autodiff path.

use super::tensor::Tensor;
use crate::error::Result;

/// Numerical gradient of `f` at `params` by central differences with step `h`.
pub fn central_differences<F>(f: F, params: &[Tensor], h: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let base = params[p].data().to_vec();
        let mut grad = vec![0.0; base.len()];
        for i in 0..base.len() {
            let mut d = base.clone();
            d[i] = base[i] + h;
            work[p] = Tensor::from_parts(params[p].shape().to_vec(), d.clone());
            let up = f(&work)?;
            d[i] = base[i] - h;
            work[p] = Tensor::from_parts(params[p].shape().to_vec(), d);
            let down = f(&work)?;
            grad[i] = (up - down) / (2.0 * h);
        }
        work[p] = params[p].clone();
        out.push(Tensor::from_parts(params[p].shape().to_vec(), grad));
    }
    Ok(out)
}

/// Worst elementwise mismatch between two gradient sets.
///
/// An element passes when its absolute error is below `abs_tol` or its
/// relative error (against the larger magnitude) is below `rel_tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub failures: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

pub fn compare(analytic: &[Tensor], numeric: &[Tensor], rel_tol: f64, abs_tol: f64) -> GradCheck {
    let mut check = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        failures: 0,
    };
    for (a, n) in analytic.iter().zip(numeric) {
        for (&x, &y) in a.data().iter().zip(n.data()) {
            let abs = (x - y).abs();
            let rel = abs / x.abs().max(y.abs()).max(f64::MIN_POSITIVE);
            check.max_abs_error = check.max_abs_error.max(abs);
            if abs >= abs_tol {
                check.max_rel_error = check.max_rel_error.max(rel);
                if rel >= rel_tol {
                    check.failures += 1;
                }
            }
        }
    }
    check
}
