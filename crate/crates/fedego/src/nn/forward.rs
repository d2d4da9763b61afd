//! Forward passes: reduction MLP, GraphSAGE over the fixed ego-shape, and
//! soft-label cross-entropy.
//!
//! The batched SAGE forward stacks all members of a batch member-major:
//! row `i*alive + p` holds member `i`'s position `p`, where `alive` is the
//! per-member prefix of positions still valid at that depth. Each layer
//! updates `p_v <- act(W * (p_v + mean(children)))`; after layer `l` only
//! positions in layers `0..=k-l` remain valid.

use ndarray::{Array1, Array2, ArrayView2};

use super::params::{PersonalizationParams, ReductionParams};
use crate::ego::EgoShape;
use crate::error::{Error, Result};

const LOG_FLOOR: f64 = 1e-12;

/// Run features through the reduction MLP: `r^(l) = act(W r^(l-1) + b)`.
pub fn reduction_forward(params: &ReductionParams, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    Ok(reduction_forward_cached(params, features)?.output)
}

pub(crate) struct ReductionCache {
    /// Input to each layer; `inputs[0]` is the raw feature matrix.
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pub preacts: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

pub(crate) fn reduction_forward_cached(
    params: &ReductionParams,
    features: ArrayView2<'_, f64>,
) -> Result<ReductionCache> {
    if features.ncols() != params.input_dim() {
        return Err(Error::dim(
            "reduction input",
            params.input_dim(),
            features.ncols(),
        ));
    }
    let mut inputs: Vec<Array2<f64>> = vec![features.to_owned()];
    let mut preacts: Vec<Array2<f64>> = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let x = inputs.last().unwrap();
        let mut pre = x.dot(&layer.weight.t());
        if let Some(b) = &layer.bias {
            pre += b;
        }
        let mut act = pre.clone();
        params.activation.apply_inplace(&mut act);
        preacts.push(pre);
        inputs.push(act);
    }
    let output = inputs.last().unwrap().clone();
    Ok(ReductionCache {
        inputs,
        preacts,
        output,
    })
}

pub(crate) struct SageCache {
    /// Aggregated layer inputs `self + mean(children)`, one per SAGE layer.
    pub layer_inputs: Vec<Array2<f64>>,
    /// Pre-activations, one per SAGE layer.
    pub preacts: Vec<Array2<f64>>,
    /// Activated outputs, one per SAGE layer.
    pub acts: Vec<Array2<f64>>,
    /// `[B x d]` final center embeddings.
    pub center: Array2<f64>,
    /// `[B x C]` classifier outputs at the center.
    pub logits: Array2<f64>,
}

/// Batched SAGE forward over `batch` members stacked member-major in
/// `positions` (`[batch*S x d_r]`).
pub(crate) fn sage_forward_batch(
    params: &PersonalizationParams,
    positions: &Array2<f64>,
    shape: &EgoShape,
    batch: usize,
) -> Result<SageCache> {
    let s = shape.positions();
    let hops = shape.hops();
    if positions.nrows() != batch * s {
        return Err(Error::dim("sage positions", batch * s, positions.nrows()));
    }
    if positions.ncols() != params.input_dim() {
        return Err(Error::dim(
            "sage input dim",
            params.input_dim(),
            positions.ncols(),
        ));
    }
    if params.sage.len() != hops {
        return Err(Error::dim("sage layer count", hops, params.sage.len()));
    }

    let inv_n = 1.0 / shape.fanout() as f64;
    let mut layer_inputs = Vec::with_capacity(hops);
    let mut preacts = Vec::with_capacity(hops);
    let mut acts: Vec<Array2<f64>> = Vec::with_capacity(hops);

    for (l, weight) in params.sage.iter().enumerate() {
        let prev: &Array2<f64> = if l == 0 { positions } else { &acts[l - 1] };
        let alive_prev = shape.prefix_len(hops - l);
        let alive = shape.prefix_len(hops - l - 1);
        let d_in = prev.ncols();
        if weight.ncols() != d_in {
            return Err(Error::dim(
                &format!("sage layer {l} input"),
                weight.ncols(),
                d_in,
            ));
        }

        let child_starts: Vec<usize> = (0..alive)
            .map(|p| shape.children_of(p).expect("not deepest layer").start)
            .collect();
        let mut z = Array2::<f64>::zeros((batch * alive, d_in));
        {
            let prev_s = prev.as_slice().expect("standard layout");
            let z_s = z.as_slice_mut().expect("standard layout");
            for i in 0..batch {
                for p in 0..alive {
                    let out = &mut z_s[(i * alive + p) * d_in..(i * alive + p + 1) * d_in];
                    let self_row = &prev_s[(i * alive_prev + p) * d_in..(i * alive_prev + p + 1) * d_in];
                    out.copy_from_slice(self_row);
                    for c in child_starts[p]..child_starts[p] + shape.fanout() {
                        let child_row =
                            &prev_s[(i * alive_prev + c) * d_in..(i * alive_prev + c + 1) * d_in];
                        for (o, &v) in out.iter_mut().zip(child_row) {
                            *o += v * inv_n;
                        }
                    }
                }
            }
        }

        let pre = z.dot(&weight.t());
        let mut act = pre.clone();
        params.activation.apply_inplace(&mut act);
        layer_inputs.push(z);
        preacts.push(pre);
        acts.push(act);
    }

    let center: Array2<f64> = match acts.last() {
        Some(last) => last.clone(), // alive = 1 after the final layer
        None => {
            // hops == 0: the center is the input itself
            let mut c = Array2::zeros((batch, positions.ncols()));
            for i in 0..batch {
                c.row_mut(i).assign(&positions.row(i * s));
            }
            c
        }
    };
    debug_assert_eq!(center.nrows(), batch);

    let mut logits = center.dot(&params.classifier.weight.t());
    if let Some(b) = &params.classifier.bias {
        logits += b;
    }

    Ok(SageCache {
        layer_inputs,
        preacts,
        acts,
        center,
        logits,
    })
}

/// Forward one ego-graph's position embeddings through the personalization
/// stack; returns the center logits and the center embedding.
pub fn sage_forward_ego(
    params: &PersonalizationParams,
    position_embeddings: ArrayView2<'_, f64>,
    shape: &EgoShape,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let cache = sage_forward_batch(params, &position_embeddings.to_owned(), shape, 1)?;
    Ok((
        cache.logits.row(0).to_owned(),
        cache.center.row(0).to_owned(),
    ))
}

/// Row-wise softmax with max-subtraction for stability.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean over rows of `-Σ_c y_c log softmax(logits)_c`, for one-hot or convex
/// soft targets. Log arguments are clamped below at `1e-12`.
pub fn soft_cross_entropy(logits: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<f64> {
    Ok(softmax_cross_entropy_grad(logits, targets)?.0)
}

/// Loss plus its gradient with respect to the logits,
/// `(softmax - target) / m`.
pub(crate) fn softmax_cross_entropy_grad(
    logits: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != targets.dim() {
        return Err(Error::dim(
            "cross-entropy",
            format!("{:?}", logits.dim()),
            format!("{:?}", targets.dim()),
        ));
    }
    let m = logits.nrows();
    if m == 0 {
        return Err(Error::Invalid("cross-entropy over an empty batch".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "logits".into(),
        });
    }
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    for (prow, trow) in probs.rows().into_iter().zip(targets.rows()) {
        for (&p, &t) in prow.iter().zip(trow) {
            if t != 0.0 {
                loss -= t * p.max(LOG_FLOOR).ln();
            }
        }
    }
    loss /= m as f64;
    let mut grad = probs;
    grad -= &targets;
    grad /= m as f64;
    Ok((loss, grad))
}
