//! Tensors, kernels, the differentiation tape and gradient checking.

pub mod gradcheck;
pub mod kernels;
pub mod param;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use kernels::{
    cross_entropy, matmul, matmul_backward, rmsnorm, rope_apply, softmax_lastdim, swiglu, topk, AttnDims,
    RMSNORM_EPS,
};
pub use param::{ParamGroup, ParamId, ParamStore, Parameter};
pub use rng::RngState;
pub use tape::{ChapterPlan, Gradients, NodeId, Tape};
pub use tensor::{Float, Precision, Tensor};
