//! Central finite-difference verification of tape gradients.

use crate::error::Result;

use super::params::{ParamId, ParamSet};
use super::tape::{Tape, Val};

/// Perturbation step for the central differences.
pub const FD_STEP: f64 = 1e-4;

/// Identity funnel that pins a closure to the higher-ranked signature
/// [`grad_check`] expects; plain closures rarely infer it on their own.
pub fn loss_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &ParamSet) -> Result<Val<'t>>,
{
    f
}

/// Compare analytic gradients of a scalar-valued function against central
/// finite differences over every component of the listed parameters.
///
/// Returns the maximum relative error
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-8)`.
pub fn grad_check_ids<F>(f: F, params: &mut ParamSet, ids: &[ParamId]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &ParamSet) -> Result<Val<'t>>,
{
    params.zero_grads();
    {
        let tape = Tape::new();
        let loss = f(&tape, params)?;
        tape.backward(loss, params)?;
    }
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| params.grad(id).data().to_vec())
        .collect();

    let mut max_err = 0.0f64;
    for (k, &id) in ids.iter().enumerate() {
        for i in 0..params.value(id).len() {
            let orig = params.value(id).data()[i];

            let mut probe = |x: f64| -> Result<f64> {
                let mut v = params.value(id).clone();
                v.data_mut()[i] = x;
                params.set_value(id, v)?;
                let tape = Tape::new();
                let loss = f(&tape, params)?;
                Ok(loss.value().item())
            };
            let plus = probe(orig + FD_STEP)?;
            let minus = probe(orig - FD_STEP)?;
            let mut v = params.value(id).clone();
            v.data_mut()[i] = orig;
            params.set_value(id, v)?;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[k][i];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-8);
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}

/// [`grad_check_ids`] over every parameter in the set.
pub fn grad_check<F>(f: F, params: &mut ParamSet) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &ParamSet) -> Result<Val<'t>>,
{
    let ids: Vec<ParamId> = params.ids().collect();
    grad_check_ids(f, params, &ids)
}
