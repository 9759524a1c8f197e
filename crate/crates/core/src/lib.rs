//! Likelihood-free Bayesian inference via ABC sequential Monte Carlo.
//!
//! The engine propagates a weighted particle population through a sequence of
//! distance thresholds, perturbing resampled particles with an adaptive kernel
//! that is re-fitted to the previous population at every generation. Several
//! kernel families are provided, from component-wise uniform/normal jitter to
//! locally adapted multivariate normals (nearest-neighbour, optimal local
//! covariance, Fisher-information scaled).

pub mod cli;
pub mod core;
pub mod engine;
pub mod kernels;
pub mod mathkit;
pub mod models;
