//! Distributed rolling-window target tracking.
//!
//! A network of sensors jointly estimates a target trajectory over a trailing
//! time window by running consensus ADMM iterations in which neighbors exchange
//! only their current window estimates. The crate provides:
//!
//! - [`models`] — linear-Gaussian dynamics and sensor models plus ground-truth
//!   simulation,
//! - [`central`] — the centralized rolling-window MAP estimator (the oracle all
//!   distributed methods are measured against), Kalman filter and RTS smoother,
//! - [`netgraph`] — dynamic communication graphs, Metropolis weights, and a
//!   per-bit message ledger,
//! - [`ckf`] — a consensus Kalman filter baseline that diffuses measurement
//!   information matrices,
//! - [`drwt`] — the distributed rolling-window tracker itself: ADMM dual and
//!   primal updates, a block-tridiagonal fast primal update, and the hand-off
//!   protocol for sensors that stop observing a target,
//! - [`harness`] — scenario generation, Monte Carlo benchmarking, convergence
//!   sweeps, and CSV output for the benchmark CLI.

pub mod central;
pub mod ckf;
pub mod drwt;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod netgraph;

pub use error::{Error, Result};
