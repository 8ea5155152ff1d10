//! Central-difference verification of the analytic backward pass.

use crate::error::Result;
use crate::linalg::Matrix;
use crate::loss::{loss_and_feature_grad, loss_value, LossKind, Targets};
use crate::mlp::MlpModel;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `(f(x + h) − f(x − h)) / 2h` for every coordinate of `x`.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe)?;
        probe[i] = orig - h;
        let minus = f(&probe)?;
        probe[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Largest relative error between backprop and central differences over
/// every parameter of `model`.
pub fn finite_diff_gradcheck(
    model: &MlpModel,
    x: &Matrix,
    y: &Targets,
    kind: LossKind,
) -> Result<f64> {
    let (z, cache) = model.forward(x)?;
    let (_, g) = loss_and_feature_grad(&z, y, kind)?;
    let analytic = model.backprop(&cache, &g)?.to_flat();

    let mut probe = model.clone();
    let numeric = central_difference(
        |params| {
            probe.set_flat_params(params)?;
            loss_value(&probe.predict(x)?, y, kind)
        },
        &model.flat_params(),
        DEFAULT_STEP,
    )?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}
