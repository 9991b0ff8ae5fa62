//! Dense matrices, reverse-mode differentiation and spectral utilities.

mod gradcheck;
mod linalg;
mod matrix;
mod spectral;
mod tape;

pub use gradcheck::{analytic_gradients, evaluate, grad_check, GradReport};
pub use linalg::Lu;
pub use matrix::{dot, norm2, DenseMatrix};
pub use spectral::{spectral_norm, top_singular, TopSingular};
pub use tape::{softmax_rows, Gradients, LinearVjp, Tape, Var};
