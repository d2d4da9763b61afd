//! Micro/macro F1 metrics and the model evaluation harness.
//!
//! Evaluation samples one ego-graph per node from a dedicated stream. An
//! [`EvalSet`] freezes those samples so that every strategy and every round
//! of an experiment scores the same inputs (paired comparison), and never
//! mutates model state.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ego::{sample_ego_graph, EgoGraph, EgoShape};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{self, ModelParams};

/// Classification quality over one node set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub loss: f64,
    pub samples: usize,
}

/// Micro-averaged F1, which for single-label multiclass prediction equals
/// accuracy.
pub fn micro_f1(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != truths.len() {
        return Err(Error::Invalid(format!(
            "micro_f1 needs matching nonempty inputs, got {} predictions and {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let correct = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p == t)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Macro-averaged F1 over the classes that occur in the truths or the
/// predictions.
pub fn macro_f1(predictions: &[usize], truths: &[usize], num_classes: usize) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != truths.len() {
        return Err(Error::Invalid("macro_f1 needs matching nonempty inputs".into()));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let mut sum = 0.0;
    let mut active = 0usize;
    for c in 0..num_classes {
        let support = tp[c] + fp[c] + fn_[c];
        if support == 0 {
            continue;
        }
        active += 1;
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom > 0 {
            sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    Ok(if active == 0 { 0.0 } else { sum / active as f64 })
}

/// A node set with one frozen ego-graph sample per node.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub nodes: Vec<NodeId>,
    pub egos: Vec<EgoGraph>,
}

pub fn build_eval_set<R: Rng>(
    graph: &Graph,
    nodes: &[NodeId],
    shape: &EgoShape,
    rng: &mut R,
) -> Result<EvalSet> {
    let egos = nodes
        .iter()
        .map(|&v| sample_ego_graph(graph, v, shape, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSet {
        nodes: nodes.to_vec(),
        egos,
    })
}

const EVAL_CHUNK: usize = 256;

/// Score a model on a frozen evaluation set: forward every ego-graph, argmax
/// the center logits, and aggregate micro/macro F1 plus the mean loss.
pub fn evaluate_model(model: &ModelParams, graph: &Graph, eval: &EvalSet) -> Result<Metrics> {
    if eval.egos.is_empty() {
        return Err(Error::Invalid("evaluation over an empty node set".into()));
    }
    let mut predictions = Vec::with_capacity(eval.egos.len());
    let mut truths = Vec::with_capacity(eval.egos.len());
    let mut loss_sum = 0.0;
    for chunk in eval.egos.chunks(EVAL_CHUNK) {
        let (logits, targets) = forward_logits(model, graph, chunk)?;
        let (loss, _) = nn::softmax_cross_entropy_grad(logits.view(), targets.view())?;
        loss_sum += loss * chunk.len() as f64;
        for (i, ego) in chunk.iter().enumerate() {
            let row = logits.row(i);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            predictions.push(best);
            truths.push(ego.center_label);
        }
    }
    Ok(Metrics {
        micro_f1: micro_f1(&predictions, &truths)?,
        macro_f1: macro_f1(&predictions, &truths, graph.num_classes())?,
        loss: loss_sum / eval.egos.len() as f64,
        samples: eval.egos.len(),
    })
}

/// Evaluate on a node set, sampling one ego-graph per node from `eval_rng`.
pub fn evaluate_model_sampling<R: Rng>(
    model: &ModelParams,
    graph: &Graph,
    node_set: &[NodeId],
    shape: &EgoShape,
    eval_rng: &mut R,
) -> Result<Metrics> {
    let eval = build_eval_set(graph, node_set, shape, eval_rng)?;
    evaluate_model(model, graph, &eval)
}

fn forward_logits(
    model: &ModelParams,
    graph: &Graph,
    egos: &[EgoGraph],
) -> Result<(Array2<f64>, Array2<f64>)> {
    let prepared = nn::prepare_batch(graph, egos)?;
    let shape = &egos[0].shape;
    let s = shape.positions();
    let reduced = nn::reduction_forward(&model.reduction, prepared.features.view())?;
    let mut positions = Array2::zeros((egos.len() * s, reduced.ncols()));
    for (row, &src) in prepared.index.iter().enumerate() {
        positions.row_mut(row).assign(&reduced.row(src));
    }
    let cache = nn::sage_forward_batch(&model.personalization, &positions, shape, egos.len())?;
    Ok((cache.logits, prepared.center_targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_synthetic_graph;
    use crate::nn::{Activation, ModelDims};
    use crate::rng::derive_stream;

    #[test]
    fn micro_f1_examples() {
        assert_eq!(micro_f1(&[1, 2, 0], &[1, 2, 0]).unwrap(), 1.0);
        assert_eq!(micro_f1(&[1, 1, 1], &[0, 0, 0]).unwrap(), 0.0);
        assert_eq!(micro_f1(&[1, 0, 2, 2], &[1, 0, 2, 0]).unwrap(), 0.75);
        assert!(micro_f1(&[], &[]).is_err());
        assert!(micro_f1(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn micro_f1_is_permutation_invariant() {
        let preds = vec![0, 1, 2, 2, 1, 0, 1];
        let truths = vec![0, 2, 2, 1, 1, 0, 0];
        let base = micro_f1(&preds, &truths).unwrap();
        let order = [3, 1, 4, 0, 6, 2, 5];
        let p2: Vec<usize> = order.iter().map(|&i| preds[i]).collect();
        let t2: Vec<usize> = order.iter().map(|&i| truths[i]).collect();
        assert_eq!(base, micro_f1(&p2, &t2).unwrap());
    }

    #[test]
    fn macro_f1_handles_absent_classes() {
        // class 2 never appears; macro averages over classes 0 and 1 only
        let preds = vec![0, 0, 1, 1];
        let truths = vec![0, 1, 1, 1];
        let m = macro_f1(&preds, &truths, 3).unwrap();
        let f1_class0 = 2.0 * 1.0 / (2.0 * 1.0 + 1.0); // tp=1 fp=1 fn=0
        let f1_class1 = 2.0 * 2.0 / (2.0 * 2.0 + 1.0); // tp=2 fp=0 fn=1
        assert!((m - (f1_class0 + f1_class1) / 2.0).abs() < 1e-12);
    }

    fn setup() -> (Graph, EgoShape, ModelParams) {
        let graph = generate_synthetic_graph(80, 4, 6, 0.2, 0.05, 31).unwrap();
        let shape = EgoShape::new(2, 3).unwrap();
        let dims = ModelDims {
            feature_dim: 6,
            reduction_layers: 1,
            reduction_dim: 5,
            hidden_dim: 5,
            num_classes: 4,
            hops: 2,
        };
        let mut rng = derive_stream(32, "init", 0);
        let model = ModelParams::init(&dims, Activation::Relu, Activation::Relu, &mut rng);
        (graph, shape, model)
    }

    #[test]
    fn constant_classifier_scores_class_frequency() {
        let (graph, shape, mut model) = setup();
        // Zero everything and drive class 2 through the classifier bias.
        for layer in &mut model.reduction.layers {
            layer.weight.fill(0.0);
        }
        if let Some(b) = &mut model.personalization.classifier.bias {
            b.fill(0.0);
            b[2] = 5.0;
        }
        let nodes: Vec<usize> = (0..40).collect();
        let mut rng = derive_stream(33, "eval", 0);
        let metrics = evaluate_model_sampling(&model, &graph, &nodes, &shape, &mut rng).unwrap();
        let freq = nodes.iter().filter(|&&v| graph.label(v) == 2).count() as f64 / 40.0;
        assert!((metrics.micro_f1 - freq).abs() < 1e-12);
    }

    #[test]
    fn evaluation_is_deterministic_and_pure() {
        let (graph, shape, model) = setup();
        let nodes: Vec<usize> = (10..50).collect();
        let a =
            evaluate_model_sampling(&model, &graph, &nodes, &shape, &mut derive_stream(9, "e", 0))
                .unwrap();
        let b =
            evaluate_model_sampling(&model, &graph, &nodes, &shape, &mut derive_stream(9, "e", 0))
                .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chunked_evaluation_matches_small_batches() {
        let (graph, shape, model) = setup();
        // more nodes than one chunk
        let nodes: Vec<usize> = (0..80).cycle().take(600).collect();
        let mut rng = derive_stream(34, "eval", 0);
        let eval = build_eval_set(&graph, &nodes, &shape, &mut rng).unwrap();
        let whole = evaluate_model(&model, &graph, &eval).unwrap();
        // reference: loop one by one
        let mut correct = 0usize;
        let mut loss_sum = 0.0;
        for ego in &eval.egos {
            let single = EvalSet {
                nodes: vec![ego.center()],
                egos: vec![ego.clone()],
            };
            let m = evaluate_model(&model, &graph, &single).unwrap();
            if m.micro_f1 > 0.5 {
                correct += 1;
            }
            loss_sum += m.loss;
        }
        assert!((whole.micro_f1 - correct as f64 / 600.0).abs() < 1e-12);
        assert!((whole.loss - loss_sum / 600.0).abs() < 1e-9);
    }
}
