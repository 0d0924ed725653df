//! Layers and the sequential model.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod pool;

pub use activation::{softmax, softmax_backward};
pub use layers::{ActShape, Activation, LayerSpec, Padding};
pub use model::{
    apply_moving_stats, build_lesion_model, model_backward, model_forward, ForwardTrace, Gradients,
    LayerParams, LesionModelOptions, Mode, ModelSpec, OutputGrad, ParamStore, SummaryRow,
    INPUT_SIZE, NUM_CLASSES,
};
