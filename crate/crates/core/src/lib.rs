//! A laboratory for planar first-passage percolation.
//!
//! The crate samples IID edge weights on boxes of Z² through a Gaussian
//! latent field, perturbs them along the monotone quantile coupling
//! `g_τ(s) = h(h⁻¹(s) + τ)` with a multi-scale annulus schedule, computes
//! restricted passage times with Dijkstra, and estimates how concentrated
//! the passage time is in windows of fixed width.

pub mod coupling;
pub mod distributions;
pub mod estimators;
pub mod experiment;
pub mod fpp;
pub mod lattice;
pub mod rng;
pub mod report;
pub mod stats;
