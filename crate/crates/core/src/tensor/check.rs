//! Finite-difference verification of reverse-mode gradients.

use thiserror::Error;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::TensorError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradCheckError {
    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error per parameter, in store order.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub coordinates: usize,
}

/// Compares analytic gradients of `loss_fn` with central differences, step
/// `1e-5·max(1, |x|)`, for every coordinate of every parameter. The relative
/// error is `|a − f| / max(1e-6, |a| + |f|)`; the floor sits above the
/// roundoff of the difference quotient, so gradients that are identically
/// zero (a key bias under softmax) do not read as errors.
pub fn grad_check<F>(store: &ParamStore, loss_fn: F) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&mut Graph<'_>) -> Result<Var, TensorError>,
{
    let eval = |s: &ParamStore| -> Result<f64, GradCheckError> {
        let mut g = Graph::new(s);
        let loss = loss_fn(&mut g)?;
        let v = g.value(loss).item();
        if !v.is_finite() {
            return Err(GradCheckError::NonFiniteLoss(v));
        }
        Ok(v)
    };
    let mut graph = Graph::new(store);
    let loss = loss_fn(&mut graph)?;
    let l0 = graph.value(loss).item();
    if !l0.is_finite() {
        return Err(GradCheckError::NonFiniteLoss(l0));
    }
    let analytic = graph.backward(loss).params;

    let mut work = store.clone();
    let mut per_param = Vec::with_capacity(store.len());
    let mut max_rel_error: f64 = 0.0;
    let mut coordinates = 0;
    for (id, name, t) in store.iter() {
        let mut worst: f64 = 0.0;
        for k in 0..t.len() {
            let x = t.data[k];
            let h = 1e-5 * x.abs().max(1.0);
            work.get_mut(id).data[k] = x + h;
            let up = eval(&work)?;
            work.get_mut(id).data[k] = x - h;
            let down = eval(&work)?;
            work.get_mut(id).data[k] = x;
            let fd = (up - down) / (2.0 * h);
            let a = analytic.get(id).map_or(0.0, |g| g.data[k]);
            let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-6);
            worst = worst.max(rel);
            coordinates += 1;
        }
        max_rel_error = max_rel_error.max(worst);
        per_param.push((name.to_string(), worst));
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        coordinates,
    })
}
