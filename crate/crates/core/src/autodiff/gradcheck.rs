//! Central finite-difference verification of analytic gradients.

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default step for [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-4;

/// Compare the analytic gradient of a scalar-valued function against central
/// finite differences, in double precision.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<Builder>(f: Builder, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    Builder: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let eval = |point: &Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(point);
        let out = f(&mut g, v)?;
        if g.value(out).len() != 1 {
            return Err(Error::Contract("grad_check requires a scalar-valued function".into()));
        }
        Ok(g.value(out)[0])
    };

    // Analytic pass.
    let mut tracked = x.clone();
    tracked.set_requires_grad(true);
    let mut g = Graph::new();
    let xv = g.leaf(&tracked);
    let out = f(&mut g, xv)?;
    if g.value(out).len() != 1 {
        return Err(Error::Contract("grad_check requires a scalar-valued function".into()));
    }
    g.backward(out)?;
    let analytic = g
        .grad(xv)
        .map(|v| v.to_vec())
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut max_rel = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
