//! Central finite-difference verification of analytic gradients.

use crate::autograd::ParamStore;
use crate::tensor::Matrix;

/// Default step for central differences at `f64`.
pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely rather than relatively.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub scalars: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
    pub worst_tensor: String,
}

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic[i]` against `(f(p + h e_i) - f(p - h e_i)) / 2h` for every scalar of every
/// parameter tensor.
pub fn finite_difference_check<F>(
    params: &ParamStore,
    analytic: &[Matrix],
    step: f64,
    f: F,
) -> GradCheckReport
where
    F: Fn(&ParamStore) -> f64,
{
    assert_eq!(analytic.len(), params.len());
    let mut probe = params.clone();
    let mut tensors = Vec::with_capacity(params.len());
    for (t, grad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..grad.len() {
            let orig = probe.values()[t].data()[j];
            probe.values_mut()[t].data_mut()[j] = orig + step;
            let plus = f(&probe);
            probe.values_mut()[t].data_mut()[j] = orig - step;
            let minus = f(&probe);
            probe.values_mut()[t].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
        tensors.push(TensorCheck {
            name: params.names()[t].clone(),
            max_rel_err: worst,
            scalars: grad.len(),
        });
    }
    let (max_rel_err, worst_tensor) = tensors.iter().fold((0.0f64, String::new()), |acc, t| {
        if t.max_rel_err > acc.0 {
            (t.max_rel_err, t.name.clone())
        } else {
            acc
        }
    });
    GradCheckReport {
        tensors,
        max_rel_err,
        worst_tensor,
    }
}
