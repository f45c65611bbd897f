//! Minimal differentiable numeric core: tensors, a reverse-mode tape,
//! layer compositions, losses, Adam and gradient checking.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{grad_check, relative_error};
pub use graph::{BatchMoments, Gradients, Graph, Var};
pub use layers::{
    conv_block, encoder_layer, multi_head_attention, positional_encoding, AttentionVars, Dropout,
    EncoderVars, RunningStats,
};
pub use optim::{adam_step, AdamConfig, AdamState, LrSchedule};
pub use params::{LayerParams, ParamVars, ParameterSet};
pub use tensor::Tensor;
