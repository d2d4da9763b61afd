//! Self-contained dense neural engine: reduction MLP, GraphSAGE stack over
//! the fixed ego-shape, soft-label cross-entropy, analytic backprop, Adam,
//! and the parameter arithmetic used by the federation round.

mod activation;
mod adam;
mod arithmetic;
mod backward;
mod checkpoint;
mod forward;
mod gradcheck;
mod params;

pub use activation::Activation;
pub use adam::AdamState;
pub use arithmetic::{
    average_personalization, average_reduction, mix_personalization, param_distance_linf,
    weight_divergence, DivergenceMode, WeightDivergence,
};
pub use backward::{model_backward, model_loss, personalization_backward, train_step, TrainStep};
pub use checkpoint::{load_checkpoint_into, save_checkpoint};
pub use forward::{
    reduction_forward, sage_forward_ego, soft_cross_entropy, softmax_rows,
};
pub use gradcheck::{finite_difference_gradcheck, GradCheckReport, TensorCheck};
pub use params::{
    param_count, Dense, ModelDims, ModelParams, NamedTensor, NamedTensorMut, ParamTensors,
    PersonalizationParams, ReductionParams,
};

pub(crate) use backward::prepare_batch;
pub(crate) use forward::{sage_forward_batch, softmax_cross_entropy_grad};
