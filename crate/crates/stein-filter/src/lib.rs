//! Nonlinear Bayesian filtering with Stein variational gradient descent.
//!
//! The crate provides three filtering backends over a shared step interface —
//! a sequential importance resampling (SIR) particle filter, a sequential
//! Stein filter that replaces importance weighting with an SVGD run against
//! the one-step posterior, and a sliding-window Stein filter that moves whole
//! state trajectories — together with exact reference posteriors
//! (Kalman-Bucy, Benes) for validation and a CLI harness that reproduces the
//! mean-square-error benchmarks as plot-ready CSV.
//!
//! With the default `parallel` feature the SVGD update and the Monte Carlo
//! runs of the harness are data-parallel via rayon; disabling it falls back
//! to sequential execution with bit-identical results.

pub mod filter;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod reference;
pub mod rng;
pub mod svgd;
