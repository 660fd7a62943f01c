//! Greedy sensor placement for linear Gaussian Bayesian inverse problems.
//!
//! The objective is the expected information gain of a sensor subset `S`,
//! `phi(S) = log det(I + H~(S))`, where `H~(S)` is the prior-preconditioned
//! data-misfit Hessian restricted to the rows of the forward map in `S`. The
//! parameter space carries the weighted inner product `<u, v>_M = u^T M v`
//! (for finite-element discretizations `M` is the mass matrix).
//!
//! - [`wspace`]: weighted inner products, adjoints, rank-one determinant and
//!   inverse updates.
//! - [`model`]: the inverse problem, its posterior, the per-sensor vectors.
//! - [`objective`]: `phi`, marginal gains, the incremental design state.
//! - [`select`]: greedy, lazy greedy, exhaustive and random selection.
//! - [`verify`]: Monte Carlo and dense oracles, property campaigns.
//! - [`problems`]: deterministic test-problem generators.
//! - [`io`] and [`cli`]: problem/report files and the command-line front end.

// `!(x <= tol)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod io;
pub mod model;
pub mod objective;
pub mod problems;
pub mod select;
pub mod verify;
pub mod wspace;

pub use error::{Error, Result};
pub use model::{InverseProblem, Posterior};
pub use objective::{eig_nats, phi_eig, Design, DesignState};
pub use select::{certify_bound, exhaustive, greedy, lazy_greedy, random_baseline, Method, SelectionReport};
pub use wspace::{Operator, WeightedSpace};
