//! Dense row-major tensors with a tape-based reverse-mode autodiff engine.
//!
//! Parameters live as [`Tensor`] values outside any graph. A forward pass
//! records operations on a fresh [`Graph`]: parameters enter as leaves that
//! share storage with the owning tensor, every op stores its output and whatever
//! its backward rule needs, and [`Graph::backward`] walks the tape once in
//! reverse. Graph ops are two-dimensional; a 1-D tensor of length `n` is viewed
//! as `1 × n`.
//!
//! There is no broadcasting. The only shape-changing conveniences are explicit
//! ops ([`Graph::add_row`], [`Graph::repeat_rows`], scalar scaling).

mod gradcheck;
mod graph;
#[allow(clippy::module_inception)]
mod tensor;

pub use gradcheck::{grad_check, grad_check_selected, GradCheckReport, REL_FLOOR};
pub use graph::{Gradients, Graph, Var, CE_EPSILON};
pub use tensor::Tensor;
