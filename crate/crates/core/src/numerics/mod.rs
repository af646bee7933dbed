//! Dense f64 tensors with reverse-mode automatic differentiation, sized for
//! toy transformers. Log-domain tensors use -inf for impossibility and
//! log-sum-exp accumulation.

mod check;
mod graph;
mod params;
mod tensor;

pub use check::finite_difference_check;
pub use graph::{log_softmax_rows, masked_softmax, BoolMat, Graph, ParamVars, Var};
pub use params::Params;
pub use tensor::{layer_norm_rows, log_add_exp, Tensor};
