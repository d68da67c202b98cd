//! Dense linear algebra, nonlinearities and reverse-mode differentiation.

mod activations;
mod check;
mod dropout;
mod matrix;
mod params;
mod tape;

pub use activations::{exp_vec, log_sum_exp, sigm, sigm_vec, softmax, tanh_vec};
pub use check::{finite_difference, finite_difference_params, max_relative_error, relative_error, DEFAULT_STEP};
pub use dropout::{dropout, Mode};
pub use matrix::{affine, Matrix};
pub use params::{Gradients, ParamId, ParamSet};
pub use tape::{grad, Activation, Tape, Var};
