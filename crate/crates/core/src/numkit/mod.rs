//! Dense linear algebra and ODE primitives.

mod eigen;
mod expm;
mod matrix;
mod ode;

pub use eigen::{eigenvalues, Complex64};
pub use expm::{expm_action, matrix_exponential};
pub use matrix::{Lu, Matrix};
pub use ode::{integrate_backward, integrate_backward_bounded, rk4_backward_step, TimeGrid};
