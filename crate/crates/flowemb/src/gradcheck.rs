//! Central finite-difference verification of analytic gradients.

use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_EPS: f64 = 1e-4;

/// Relative error between an analytic and a numeric derivative.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Compare analytic gradients of a scalar function against central
/// differences `(f(x+eps) - f(x-eps)) / (2 eps)` at 64-bit.
///
/// `f` evaluates the scalar output at the given inputs; `analytic` holds
/// d f / d inputs[i] in matching shapes. Returns the maximum relative error
/// over all entries, or an error if any evaluation is non-finite.
pub fn grad_check<F>(
    f: F,
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    eps: f64,
) -> Result<f64, TensorError>
where
    F: Fn(&[Tensor<f64>]) -> f64,
{
    assert_eq!(inputs.len(), analytic.len(), "one gradient per input");
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut max_err: f64 = 0.0;
    for ti in 0..inputs.len() {
        assert_eq!(
            inputs[ti].shape(),
            analytic[ti].shape(),
            "gradient shape mismatch for input {ti}"
        );
        for i in 0..inputs[ti].len() {
            let x0 = inputs[ti].data()[i];
            work[ti].data_mut()[i] = x0 + eps;
            let fp = f(&work);
            work[ti].data_mut()[i] = x0 - eps;
            let fm = f(&work);
            work[ti].data_mut()[i] = x0;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(TensorError::NonFinite(format!(
                    "finite-difference evaluation at input {ti} entry {i}"
                )));
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[ti].data()[i];
            let e = rel_err(a, numeric);
            if e > max_err {
                max_err = e;
            }
        }
    }
    Ok(max_err)
}

/// Like [`grad_check`] but only probes the listed `(input, entry)` pairs,
/// for functions with too many parameters to sweep exhaustively.
pub fn grad_check_sampled<F>(
    f: F,
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    probes: &[(usize, usize)],
    eps: f64,
) -> Result<f64, TensorError>
where
    F: Fn(&[Tensor<f64>]) -> f64,
{
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut max_err: f64 = 0.0;
    for &(ti, i) in probes {
        let x0 = inputs[ti].data()[i];
        work[ti].data_mut()[i] = x0 + eps;
        let fp = f(&work);
        work[ti].data_mut()[i] = x0 - eps;
        let fm = f(&work);
        work[ti].data_mut()[i] = x0;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(TensorError::NonFinite(format!(
                "finite-difference evaluation at input {ti} entry {i}"
            )));
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let e = rel_err(analytic[ti].data()[i], numeric);
        if e > max_err {
            max_err = e;
        }
    }
    Ok(max_err)
}
