// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod grid;
pub mod metrics;
pub mod plot;
pub mod problem;
pub mod qoi;
pub mod solver;
pub mod stochastic;
pub mod transport;
