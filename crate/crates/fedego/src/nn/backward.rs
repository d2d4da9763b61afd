//! Analytic reverse-mode differentiation through reduction layers, the SAGE
//! stack, the classifier, and soft-label cross-entropy.
//!
//! The batch pipeline deduplicates nodes before the reduction layers: every
//! distinct node in a batch of ego-graphs is reduced once and its embedding is
//! scattered to the positions that reference it; gradients gather back along
//! the same index.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2, Axis};

use super::forward::{
    reduction_forward_cached, sage_forward_batch, softmax_cross_entropy_grad, ReductionCache,
};
use super::params::{ModelParams, PersonalizationParams, ReductionParams};
use crate::ego::{EgoGraph, EgoShape};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};

pub(crate) struct PreparedBatch {
    pub unique_nodes: Vec<NodeId>,
    /// Maps stacked position row `i*S + p` to a row of `features`.
    pub index: Vec<usize>,
    /// `[U x d]` features of the unique nodes.
    pub features: Array2<f64>,
    /// `[B x C]` one-hot labels of the member centers.
    pub center_targets: Array2<f64>,
}

pub(crate) fn prepare_batch(graph: &Graph, egos: &[EgoGraph]) -> Result<PreparedBatch> {
    if egos.is_empty() {
        return Err(Error::Invalid("empty ego-graph batch".into()));
    }
    let shape = &egos[0].shape;
    if egos.iter().any(|e| &e.shape != shape) {
        return Err(Error::Invalid("batch members disagree on shape".into()));
    }
    let s = shape.positions();
    let mut unique_nodes: Vec<NodeId> = Vec::new();
    let mut map: HashMap<NodeId, usize> = HashMap::new();
    let mut index = Vec::with_capacity(egos.len() * s);
    for ego in egos {
        for &v in &ego.node_at {
            let row = *map.entry(v).or_insert_with(|| {
                unique_nodes.push(v);
                unique_nodes.len() - 1
            });
            index.push(row);
        }
    }
    let d = graph.feature_dim();
    let mut features = Array2::zeros((unique_nodes.len(), d));
    for (row, &v) in unique_nodes.iter().enumerate() {
        features.row_mut(row).assign(&graph.features().row(v));
    }
    let c = graph.num_classes();
    let mut center_targets = Array2::zeros((egos.len(), c));
    for (i, ego) in egos.iter().enumerate() {
        center_targets[[i, ego.center_label]] = 1.0;
    }
    Ok(PreparedBatch {
        unique_nodes,
        index,
        features,
        center_targets,
    })
}

/// Loss attachment for the personalization stack.
pub(crate) enum SageLossHead<'a> {
    /// Targets for the center position only, `[B x C]`.
    Center(ArrayView2<'a, f64>),
    /// Per-position soft labels stacked member-major, `[B*S x C]`; the loss
    /// covers every position that passes at least one SAGE layer.
    AllPositions(&'a Array2<f64>),
}

/// Forward + backward through the SAGE stack and classifier.
///
/// Returns the loss, parameter gradients, and the gradient with respect to
/// the stacked input positions.
pub(crate) fn sage_backward(
    params: &PersonalizationParams,
    positions: &Array2<f64>,
    shape: &EgoShape,
    batch: usize,
    head: SageLossHead<'_>,
) -> Result<(f64, PersonalizationParams, Array2<f64>)> {
    let cache = sage_forward_batch(params, positions, shape, batch)?;
    let hops = shape.hops();
    let s = shape.positions();
    let inv_n = 1.0 / shape.fanout() as f64;
    let mut grads = params.zeros_like();

    // Classifier head: compute the loss, classifier gradients, and the
    // gradient injected into each SAGE layer's activated output.
    let loss;
    // d_inject[l] aligns with acts[l]; entry for l == hops handles hops == 0.
    let mut d_inject: Vec<Option<Array2<f64>>> = (0..=hops).map(|_| None).collect();

    let center_head = |targets: ArrayView2<'_, f64>| -> Result<(f64, Array2<f64>)> {
        let (loss, dlogits) = softmax_cross_entropy_grad(cache.logits.view(), targets)?;
        Ok((loss, dlogits))
    };

    match head {
        SageLossHead::Center(targets) => {
            let (l, dlogits) = center_head(targets)?;
            loss = l;
            grads.classifier.weight = dlogits.t().dot(&cache.center);
            if let Some(b) = &mut grads.classifier.bias {
                *b = dlogits.sum_axis(Axis(0));
            }
            let dcenter = dlogits.dot(&params.classifier.weight);
            let slot = if hops == 0 { 0 } else { hops - 1 };
            d_inject[slot] = Some(dcenter);
        }
        SageLossHead::AllPositions(soft_labels) => {
            if soft_labels.nrows() != batch * s {
                return Err(Error::dim("position soft labels", batch * s, soft_labels.nrows()));
            }
            if hops == 0 {
                let mut targets = Array2::zeros((batch, soft_labels.ncols()));
                for i in 0..batch {
                    targets.row_mut(i).assign(&soft_labels.row(i * s));
                }
                let (l, dlogits) = center_head(targets.view())?;
                loss = l;
                grads.classifier.weight = dlogits.t().dot(&cache.center);
                if let Some(b) = &mut grads.classifier.bias {
                    *b = dlogits.sum_axis(Axis(0));
                }
                d_inject[0] = Some(dlogits.dot(&params.classifier.weight));
            } else {
                // Every position in layers 0..hops contributes through its
                // final embedding, which lives in acts[hops - 1 - layer].
                let total = batch * shape.prefix_len(hops - 1);
                let mut loss_sum = 0.0;
                for li in 0..hops {
                    let layer = hops - li - 1;
                    let alive = shape.prefix_len(hops - li - 1);
                    let range = shape.layer_range(layer);
                    let rows = batch * range.len();
                    let act = &cache.acts[li];
                    let mut x = Array2::zeros((rows, act.ncols()));
                    let mut y = Array2::zeros((rows, soft_labels.ncols()));
                    for i in 0..batch {
                        for (r, p) in range.clone().enumerate() {
                            x.row_mut(i * range.len() + r).assign(&act.row(i * alive + p));
                            y.row_mut(i * range.len() + r).assign(&soft_labels.row(i * s + p));
                        }
                    }
                    let mut logits = x.dot(&params.classifier.weight.t());
                    if let Some(b) = &params.classifier.bias {
                        logits += b;
                    }
                    let (l, mut dlogits) = softmax_cross_entropy_grad(logits.view(), y.view())?;
                    // Rescale from per-slice mean to the global position mean.
                    let scale = rows as f64 / total as f64;
                    loss_sum += l * scale;
                    dlogits *= scale;
                    grads.classifier.weight += &dlogits.t().dot(&x);
                    if let Some(b) = &mut grads.classifier.bias {
                        *b += &dlogits.sum_axis(Axis(0));
                    }
                    let dx = dlogits.dot(&params.classifier.weight);
                    let mut inject = Array2::zeros((batch * alive, act.ncols()));
                    for i in 0..batch {
                        for (r, p) in range.clone().enumerate() {
                            inject
                                .row_mut(i * alive + p)
                                .assign(&dx.row(i * range.len() + r));
                        }
                    }
                    d_inject[li] = Some(inject);
                }
                loss = loss_sum;
            }
        }
    }

    if hops == 0 {
        // The "stack" is just the classifier on the center embedding.
        let dcenter = d_inject[0].take().expect("head set");
        let mut d_positions = Array2::zeros((batch * s, positions.ncols()));
        for i in 0..batch {
            d_positions.row_mut(i * s).assign(&dcenter.row(i));
        }
        return Ok((loss, grads, d_positions));
    }

    // Walk the SAGE layers backwards, accumulating weight gradients and
    // propagating through self + mean(children).
    let mut dact: Array2<f64> = d_inject[hops - 1].take().expect("head set");
    for l in (0..hops).rev() {
        let alive = shape.prefix_len(hops - l - 1);
        let alive_prev = shape.prefix_len(hops - l);
        debug_assert_eq!(dact.nrows(), batch * alive);

        let mut da = dact;
        params.activation.backprop_inplace(&cache.preacts[l], &mut da);
        grads.sage[l] = da.t().dot(&cache.layer_inputs[l]);
        let dz = da.dot(&params.sage[l]);
        let d_in = dz.ncols();

        let mut dprev = Array2::<f64>::zeros((batch * alive_prev, d_in));
        {
            let dz_s = dz.as_slice().expect("standard layout");
            let dprev_s = dprev.as_slice_mut().expect("standard layout");
            for i in 0..batch {
                for p in 0..alive {
                    let src = &dz_s[(i * alive + p) * d_in..(i * alive + p + 1) * d_in];
                    let self_row =
                        &mut dprev_s[(i * alive_prev + p) * d_in..(i * alive_prev + p + 1) * d_in];
                    for (o, &v) in self_row.iter_mut().zip(src) {
                        *o += v;
                    }
                    let children = shape.children_of(p).expect("not deepest layer");
                    for c in children {
                        let child_row = &mut dprev_s
                            [(i * alive_prev + c) * d_in..(i * alive_prev + c + 1) * d_in];
                        for (o, &v) in child_row.iter_mut().zip(src) {
                            *o += v * inv_n;
                        }
                    }
                }
            }
        }
        if l > 0 {
            if let Some(inject) = d_inject[l - 1].take() {
                dprev += &inject;
            }
        }
        dact = dprev;
    }

    Ok((loss, grads, dact))
}

fn reduction_backward(
    params: &ReductionParams,
    cache: &ReductionCache,
    d_output: Array2<f64>,
) -> ReductionParams {
    let mut grads = params.zeros_like();
    let mut d_out = d_output;
    for l in (0..params.layers.len()).rev() {
        let mut dz = d_out;
        params.activation.backprop_inplace(&cache.preacts[l], &mut dz);
        grads.layers[l].weight = dz.t().dot(&cache.inputs[l]);
        if let Some(b) = &mut grads.layers[l].bias {
            *b = dz.sum_axis(Axis(0));
        }
        d_out = dz.dot(&params.layers[l].weight);
    }
    grads
}

/// One full forward/backward pass over a batch of ego-graphs.
pub struct TrainStep {
    pub loss: f64,
    pub grads: ModelParams,
    /// `[B*S x d_r]` reduction embeddings per position, member-major —
    /// exactly what mashing consumes.
    pub position_embeddings: Array2<f64>,
}

/// Forward/backward through the whole client model; the loss is the
/// cross-entropy of the center positions against their one-hot labels.
pub fn train_step(model: &ModelParams, graph: &Graph, egos: &[EgoGraph]) -> Result<TrainStep> {
    let prepared = prepare_batch(graph, egos)?;
    let shape = &egos[0].shape;
    let s = shape.positions();
    let batch = egos.len();

    let red = reduction_forward_cached(&model.reduction, prepared.features.view())?;
    let d_r = red.output.ncols();
    let mut positions = Array2::zeros((batch * s, d_r));
    for (row, &src) in prepared.index.iter().enumerate() {
        positions.row_mut(row).assign(&red.output.row(src));
    }

    let (loss, pgrads, d_positions) = sage_backward(
        &model.personalization,
        &positions,
        shape,
        batch,
        SageLossHead::Center(prepared.center_targets.view()),
    )?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "training loss".into(),
        });
    }

    let mut d_reduction_out = Array2::zeros((prepared.unique_nodes.len(), d_r));
    for (row, &dst) in prepared.index.iter().enumerate() {
        let mut acc = d_reduction_out.row_mut(dst);
        acc += &d_positions.row(row);
    }
    let rgrads = reduction_backward(&model.reduction, &red, d_reduction_out);

    Ok(TrainStep {
        loss,
        grads: ModelParams {
            reduction: rgrads,
            personalization: pgrads,
        },
        position_embeddings: positions,
    })
}

/// Exact gradients of the center-position loss with respect to every model
/// parameter, alongside the forward loss value.
pub fn model_backward(model: &ModelParams, graph: &Graph, egos: &[EgoGraph]) -> Result<(f64, ModelParams)> {
    let step = train_step(model, graph, egos)?;
    Ok((step.loss, step.grads))
}

/// Forward-only loss of the client model on a batch.
pub fn model_loss(model: &ModelParams, graph: &Graph, egos: &[EgoGraph]) -> Result<f64> {
    let prepared = prepare_batch(graph, egos)?;
    let shape = &egos[0].shape;
    let s = shape.positions();
    let batch = egos.len();
    let reduced = reduction_forward_cached(&model.reduction, prepared.features.view())?.output;
    let mut positions = Array2::zeros((batch * s, reduced.ncols()));
    for (row, &src) in prepared.index.iter().enumerate() {
        positions.row_mut(row).assign(&reduced.row(src));
    }
    let cache = sage_forward_batch(&model.personalization, &positions, shape, batch)?;
    let (loss, _) =
        softmax_cross_entropy_grad(cache.logits.view(), prepared.center_targets.view())?;
    Ok(loss)
}

/// Forward/backward through the personalization stack alone, as run by the
/// server over mashed ego-graphs. `soft_labels` stacks each member's
/// `[S x C]` position labels member-major; with `all_positions` the loss
/// averages over every position that passes at least one SAGE layer,
/// otherwise over centers only.
pub fn personalization_backward(
    params: &PersonalizationParams,
    positions: &Array2<f64>,
    shape: &EgoShape,
    soft_labels: &Array2<f64>,
    all_positions: bool,
) -> Result<(f64, PersonalizationParams)> {
    let s = shape.positions();
    if positions.nrows() != soft_labels.nrows() || positions.nrows() % s != 0 {
        return Err(Error::dim(
            "personalization batch",
            format!("multiple of {s} rows"),
            positions.nrows(),
        ));
    }
    let batch = positions.nrows() / s;
    let (loss, grads, _) = if all_positions {
        sage_backward(
            params,
            positions,
            shape,
            batch,
            SageLossHead::AllPositions(soft_labels),
        )?
    } else {
        let mut targets = Array2::zeros((batch, soft_labels.ncols()));
        for i in 0..batch {
            targets.row_mut(i).assign(&soft_labels.row(i * s));
        }
        sage_backward(params, positions, shape, batch, SageLossHead::Center(targets.view()))?
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "server loss".into(),
        });
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_synthetic_graph;
    use crate::nn::params::{ModelDims, ParamTensors};
    use crate::nn::Activation;
    use crate::rng::derive_stream;

    fn setup() -> (Graph, EgoShape, ModelParams) {
        let graph = generate_synthetic_graph(60, 3, 5, 0.3, 0.1, 21).unwrap();
        let shape = EgoShape::new(2, 3).unwrap();
        let dims = ModelDims {
            feature_dim: 5,
            reduction_layers: 1,
            reduction_dim: 4,
            hidden_dim: 4,
            num_classes: 3,
            hops: 2,
        };
        let mut rng = derive_stream(3, "init", 0);
        let model = ModelParams::init(&dims, Activation::Relu, Activation::Relu, &mut rng);
        (graph, shape, model)
    }

    fn sample_batch(graph: &Graph, shape: &EgoShape, count: usize, seed: u64) -> Vec<EgoGraph> {
        let mut rng = derive_stream(seed, "batch", 0);
        (0..count)
            .map(|i| crate::ego::sample_ego_graph(graph, i % graph.num_nodes(), shape, &mut rng).unwrap())
            .collect()
    }

    #[test]
    fn duplicated_batch_leaves_loss_and_grads_unchanged() {
        let (graph, shape, model) = setup();
        let egos = sample_batch(&graph, &shape, 6, 44);
        let (loss_a, grads_a) = model_backward(&model, &graph, &egos).unwrap();
        let mut doubled = egos.clone();
        doubled.extend(egos.iter().cloned());
        let (loss_b, grads_b) = model_backward(&model, &graph, &doubled).unwrap();
        assert!((loss_a - loss_b).abs() < 1e-12);
        for (ta, tb) in grads_a.tensors().iter().zip(grads_b.tensors().iter()) {
            for (a, b) in ta.data.iter().zip(tb.data.iter()) {
                assert!((a - b).abs() < 1e-12, "{}", ta.name);
            }
        }
    }

    #[test]
    fn fitted_logits_give_vanishing_gradients() {
        // Saturate the classifier bias toward the true class of every center:
        // softmax matches the one-hot target, so gradients vanish.
        let (graph, shape, mut model) = setup();
        let center = 4;
        let egos = vec![
            crate::ego::sample_ego_graph(&graph, center, &shape, &mut derive_stream(5, "b", 0)).unwrap(),
        ];
        let label = graph.label(center);
        if let Some(b) = &mut model.personalization.classifier.bias {
            b[label] = 200.0;
        }
        let (loss, grads) = model_backward(&model, &graph, &egos).unwrap();
        assert!(loss < 1e-9);
        for t in grads.tensors() {
            for &g in t.data {
                assert!(g.abs() < 1e-8, "{} has gradient {g}", t.name);
            }
        }
    }

    #[test]
    fn loss_matches_backward_loss() {
        let (graph, shape, model) = setup();
        let egos = sample_batch(&graph, &shape, 5, 45);
        let (loss_b, _) = model_backward(&model, &graph, &egos).unwrap();
        let loss_f = model_loss(&model, &graph, &egos).unwrap();
        assert!((loss_b - loss_f).abs() < 1e-12);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let (graph, shape, model) = setup();
        let other = EgoShape::new(1, 3).unwrap();
        let mut egos = sample_batch(&graph, &shape, 2, 46);
        egos.push(
            crate::ego::sample_ego_graph(&graph, 0, &other, &mut derive_stream(6, "b", 0)).unwrap(),
        );
        assert!(model_backward(&model, &graph, &egos).is_err());
    }
}
