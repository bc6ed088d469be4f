//! Central finite-difference verification of analytic gradients.

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Default perturbation for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// (param name, max relative error over its entries)
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
    /// Name of the parameter holding the worst entry.
    pub worst_param: String,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Relative error with a unit floor: tiny gradients are compared
/// absolutely, large ones relatively.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compare the gradients currently stored in `store` against central
/// finite differences of `loss` with step `h`. `loss` must be a pure
/// function of the parameter values. Parameter values are restored
/// exactly after probing.
pub fn finite_diff_check<F>(store: &mut ParamStore, h: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    let base = loss(store)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite: {base}")));
    }

    let mut per_param = Vec::with_capacity(store.len());
    let mut max_rel_err = 0.0;
    let mut worst_param = String::new();

    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let name = store.get(id).name.clone();
        let len = store.get(id).value.len();
        let mut param_worst = 0.0f64;
        for i in 0..len {
            let orig = store.get(id).value.at(i);
            store.get_mut(id).value.values_mut()[i] = orig + h;
            let up = loss(store)?;
            store.get_mut(id).value.values_mut()[i] = orig - h;
            let down = loss(store)?;
            store.get_mut(id).value.values_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss not finite while probing {name}[{i}]"
                )));
            }
            let numeric = (up - down) / (2.0 * h);
            let analytic = store.get(id).grad.at(i);
            let e = rel_err(analytic, numeric);
            if e > param_worst {
                param_worst = e;
            }
        }
        if param_worst > max_rel_err {
            max_rel_err = param_worst;
            worst_param = name.clone();
        }
        per_param.push((name, param_worst));
    }

    Ok(GradCheckReport {
        per_param,
        max_rel_err,
        worst_param,
    })
}
