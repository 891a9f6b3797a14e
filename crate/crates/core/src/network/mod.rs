//! The convolutional classifier: layer plans, parameters, forward and
//! backward passes, checkpoints and feature-map rendering.

pub mod checkpoint;
pub mod features;
mod layers;
mod model;
mod spec;

pub use model::{
    argmax, build_backbone, default_class_names, softmax_rows, BatchView, FeatureMaps, FeatureStage, Gradients,
    Mode, Network, Tape, Tensor,
};
pub use spec::{ClassifierLayer, FeatureLayer, NetworkSpec, ParamSlot, Shape};
