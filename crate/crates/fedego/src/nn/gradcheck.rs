//! Central finite-difference validation of the analytic gradients.

use super::backward::{model_backward, model_loss};
use super::params::{ModelParams, ParamTensors};
use crate::ego::EgoGraph;
use crate::error::Result;
use crate::graph::Graph;

/// Per-tensor comparison of analytic and numeric gradients. The relative
/// error is norm-based: `||analytic - numeric|| / max(||analytic||,
/// ||numeric||, 1e-12)`.
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub step: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compare analytic gradients against `(f(w+h) - f(w-h)) / 2h` per
/// coordinate, reported tensor by tensor. Intended for small models.
pub fn finite_difference_gradcheck(
    model: &ModelParams,
    graph: &Graph,
    egos: &[EgoGraph],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = model_backward(model, graph, egos)?;

    let mut work = model.clone();
    let mut numeric = model.zeros_like();
    let n_tensors = model.tensors().len();
    for t in 0..n_tensors {
        let len = work.tensors()[t].data.len();
        for i in 0..len {
            let original = work.tensors()[t].data[i];
            work.tensors_mut()[t].data[i] = original + step;
            let up = model_loss(&work, graph, egos)?;
            work.tensors_mut()[t].data[i] = original - step;
            let down = model_loss(&work, graph, egos)?;
            work.tensors_mut()[t].data[i] = original;
            numeric.tensors_mut()[t].data[i] = (up - down) / (2.0 * step);
        }
    }

    let mut tensors = Vec::with_capacity(n_tensors);
    let mut max_rel_error = 0.0f64;
    for (a, n) in analytic.tensors().iter().zip(numeric.tensors().iter()) {
        let norm = |d: &[f64]| d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff: f64 = a
            .data
            .iter()
            .zip(n.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let analytic_norm = norm(a.data);
        let numeric_norm = norm(n.data);
        let rel_error = diff / analytic_norm.max(numeric_norm).max(1e-12);
        max_rel_error = max_rel_error.max(rel_error);
        tensors.push(TensorCheck {
            name: a.name.clone(),
            analytic_norm,
            numeric_norm,
            rel_error,
        });
    }

    Ok(GradCheckReport {
        tensors,
        max_rel_error,
        step,
        tolerance,
    })
}
