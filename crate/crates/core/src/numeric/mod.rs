//! Minimal differentiable-computation substrate.

pub mod layers;
pub mod loss;
pub mod optim;
pub mod tape;

pub use layers::{
    relu_plan, Activation, BnUpdates, GradientSet, LayerBlock, Mlp, Mode, ParameterSet,
    RunningStats,
};
pub use loss::bce_loss;
pub use optim::sgd_step;
pub use tape::{logit, sigmoid, Gradients, Tape, Var};
