//! Differentiable tensor primitives, parameter storage and gradient checking.

mod gradcheck;
mod gru;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    grad_check, grad_check_params, relative_error, GradCheckReport, TensorCheck, DEFAULT_EPS, DEFAULT_TOL,
    REL_ERR_FLOOR,
};
pub use gru::{gru_cell, init_gru};
pub use params::{Param, ParamStore};
pub use tape::{bce_logit, log_sum_exp, sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;
