//! Small CPU tensor engine: convolutions, activations, a ConvLSTM cell,
//! straight-through rounding, parameter storage and AdamW.

pub mod container;
pub mod conv;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tensor;

pub use container::WeightFile;
pub use conv::{conv2d, conv2d_backward, CausalMask, ConvSpec};
pub use layers::{Conv2d, ConvLstm, DepthConvBlock, LstmState, Padding, ResBlock, ResidualCnn, LEAKY_SLOPE};
pub use ops::{Eval, Gradients, Graph, Ops, Var};
pub use optim::{adamw_step, AdamWConfig, OptimizerState, StepReport};
pub use params::{init_tensor, Grads, Init, ParamId, ParamStore};
pub use tensor::Tensor;
