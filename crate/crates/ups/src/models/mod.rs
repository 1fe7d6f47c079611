//! Target models and coupled MCMC kernels: logistic regression (PGG),
//! linear regression (two-block Gibbs), and random-walk MH for arbitrary
//! path densities, plus dataset loaders.

pub mod data;
pub mod linear;
pub mod logistic;
pub mod rwmh;
