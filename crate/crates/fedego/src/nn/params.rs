//! Parameter containers: reduction MLP weights, personalization (GraphSAGE +
//! classifier) weights, initialization, and flat named-tensor access.
//!
//! Gradients reuse the same containers (`zeros_like` + fill), which keeps the
//! optimizer and the parameter arithmetic uniform over everything below.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::activation::Activation;
use crate::error::{Error, Result};

/// One dense layer: `weight` is `[d_out x d_in]`, bias optional.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

impl Dense {
    fn glorot<R: Rng>(d_out: usize, d_in: usize, with_bias: bool, rng: &mut R) -> Dense {
        let limit = (6.0 / (d_in + d_out) as f64).sqrt();
        let data: Vec<f64> = (0..d_out * d_in)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Dense {
            weight: Array2::from_shape_vec((d_out, d_in), data).expect("sized above"),
            bias: with_bias.then(|| Array1::zeros(d_out)),
        }
    }

    fn zeros_like(&self) -> Dense {
        Dense {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: self.bias.as_ref().map(|b| Array1::zeros(b.raw_dim())),
        }
    }
}

/// Client-side MLP mapping raw features to the shared reduction embedding.
/// Every layer carries a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionParams {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl ReductionParams {
    pub fn init<R: Rng>(
        feature_dim: usize,
        reduction_dim: usize,
        num_layers: usize,
        activation: Activation,
        rng: &mut R,
    ) -> ReductionParams {
        assert!(num_layers >= 1, "reduction needs at least one layer");
        let mut layers = Vec::with_capacity(num_layers);
        let mut d_in = feature_dim;
        for _ in 0..num_layers {
            layers.push(Dense::glorot(reduction_dim, d_in, true, rng));
            d_in = reduction_dim;
        }
        ReductionParams { layers, activation }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weight.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn zeros_like(&self) -> ReductionParams {
        ReductionParams {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
            activation: self.activation,
        }
    }
}

/// GraphSAGE stack plus linear classifier. Layers have no biases; the
/// classifier has one.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizationParams {
    /// One `[d_out x d_in]` weight per SAGE layer, applied to
    /// `self + mean(children)`.
    pub sage: Vec<Array2<f64>>,
    pub classifier: Dense,
    pub activation: Activation,
}

impl PersonalizationParams {
    pub fn init<R: Rng>(
        reduction_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        hops: usize,
        activation: Activation,
        rng: &mut R,
    ) -> PersonalizationParams {
        let mut sage = Vec::with_capacity(hops);
        let mut d_in = reduction_dim;
        for _ in 0..hops {
            sage.push(Dense::glorot(hidden_dim, d_in, false, rng).weight);
            d_in = hidden_dim;
        }
        let classifier_in = if hops == 0 { reduction_dim } else { hidden_dim };
        PersonalizationParams {
            sage,
            classifier: Dense::glorot(num_classes, classifier_in, true, rng),
            activation,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.weight.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.sage
            .first()
            .map(|w| w.ncols())
            .unwrap_or_else(|| self.classifier.weight.ncols())
    }

    pub fn zeros_like(&self) -> PersonalizationParams {
        PersonalizationParams {
            sage: self.sage.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            classifier: self.classifier.zeros_like(),
            activation: self.activation,
        }
    }
}

/// Full client model: reduction layers plus personalization layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub reduction: ReductionParams,
    pub personalization: PersonalizationParams,
}

/// Architecture description used for initialization.
#[derive(Debug, Clone, Copy)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub reduction_layers: usize,
    pub reduction_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub hops: usize,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, drawn in canonical tensor order.
    pub fn init<R: Rng>(
        dims: &ModelDims,
        reduction_activation: Activation,
        personalization_activation: Activation,
        rng: &mut R,
    ) -> ModelParams {
        let reduction = ReductionParams::init(
            dims.feature_dim,
            dims.reduction_dim,
            dims.reduction_layers,
            reduction_activation,
            rng,
        );
        let personalization = PersonalizationParams::init(
            dims.reduction_dim,
            dims.hidden_dim,
            dims.num_classes,
            dims.hops,
            personalization_activation,
            rng,
        );
        ModelParams {
            reduction,
            personalization,
        }
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            reduction: self.reduction.zeros_like(),
            personalization: self.personalization.zeros_like(),
        }
    }
}

/// Read view of one named parameter tensor.
pub struct NamedTensor<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [f64],
}

/// Write view of one named parameter tensor.
pub struct NamedTensorMut<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a mut [f64],
}

/// Flat access to a parameter set in a fixed canonical order, shared by the
/// optimizer, parameter arithmetic, checkpoints, and the gradient checker.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<NamedTensor<'_>>;
    fn tensors_mut(&mut self) -> Vec<NamedTensorMut<'_>>;
}

fn dense_tensors<'a>(prefix: &str, d: &'a Dense, out: &mut Vec<NamedTensor<'a>>) {
    out.push(NamedTensor {
        name: format!("{prefix}.weight"),
        dims: d.weight.shape().to_vec(),
        data: d.weight.as_slice().expect("standard layout"),
    });
    if let Some(b) = &d.bias {
        out.push(NamedTensor {
            name: format!("{prefix}.bias"),
            dims: b.shape().to_vec(),
            data: b.as_slice().expect("standard layout"),
        });
    }
}

fn dense_tensors_mut<'a>(prefix: &str, d: &'a mut Dense, out: &mut Vec<NamedTensorMut<'a>>) {
    out.push(NamedTensorMut {
        name: format!("{prefix}.weight"),
        dims: d.weight.shape().to_vec(),
        data: d.weight.as_slice_mut().expect("standard layout"),
    });
    if let Some(b) = &mut d.bias {
        out.push(NamedTensorMut {
            name: format!("{prefix}.bias"),
            dims: b.shape().to_vec(),
            data: b.as_slice_mut().expect("standard layout"),
        });
    }
}

impl ParamTensors for ReductionParams {
    fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = Vec::new();
        for (l, d) in self.layers.iter().enumerate() {
            dense_tensors(&format!("reduction.{l}"), d, &mut out);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<NamedTensorMut<'_>> {
        let mut out = Vec::new();
        for (l, d) in self.layers.iter_mut().enumerate() {
            dense_tensors_mut(&format!("reduction.{l}"), d, &mut out);
        }
        out
    }
}

impl ParamTensors for PersonalizationParams {
    fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = Vec::new();
        for (l, w) in self.sage.iter().enumerate() {
            out.push(NamedTensor {
                name: format!("sage.{l}.weight"),
                dims: w.shape().to_vec(),
                data: w.as_slice().expect("standard layout"),
            });
        }
        dense_tensors("classifier", &self.classifier, &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<NamedTensorMut<'_>> {
        let mut out = Vec::new();
        for (l, w) in self.sage.iter_mut().enumerate() {
            out.push(NamedTensorMut {
                name: format!("sage.{l}.weight"),
                dims: w.shape().to_vec(),
                data: w.as_slice_mut().expect("standard layout"),
            });
        }
        dense_tensors_mut("classifier", &mut self.classifier, &mut out);
        out
    }
}

impl ParamTensors for ModelParams {
    fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = self.reduction.tensors();
        out.extend(self.personalization.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<NamedTensorMut<'_>> {
        let mut out = self.reduction.tensors_mut();
        out.extend(self.personalization.tensors_mut());
        out
    }
}

/// Total scalar parameter count.
pub fn param_count(params: &impl ParamTensors) -> usize {
    params.tensors().iter().map(|t| t.data.len()).sum()
}

/// Congruence check used by the parameter arithmetic.
pub(crate) fn check_congruent(
    context: &str,
    a: &impl ParamTensors,
    b: &impl ParamTensors,
) -> Result<()> {
    let ta = a.tensors();
    let tb = b.tensors();
    if ta.len() != tb.len() {
        return Err(Error::dim(context, ta.len(), tb.len()));
    }
    for (x, y) in ta.iter().zip(&tb) {
        if x.dims != y.dims {
            return Err(Error::dim(
                &format!("{context} ({})", x.name),
                format!("{:?}", x.dims),
                format!("{:?}", y.dims),
            ));
        }
    }
    Ok(())
}
