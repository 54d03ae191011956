//! Numerical laboratory for symmetric rank-one matrix estimation.
//!
//! The crate studies the model `Y = theta theta^T / sqrt(n) + Z` with `Z` a
//! symmetric Gaussian noise matrix and `theta` drawn i.i.d. from a discrete
//! prior. It provides:
//!
//! * scalar theory: the replica potential, its minimizers, and the scalar
//!   state-evolution recursion ([`scalar_theory`]);
//! * Bayes-AMP and polynomial-AMP iterations with vector state evolution
//!   ([`amp`]), parameterized by pluggable nonlinearities ([`nonlin`]);
//! * rooted-tree combinatorics and tree-structured polynomial estimators
//!   ([`trees`]) together with the message-passing scheme that evaluates
//!   them ([`mp`]);
//! * low-degree Gram-matrix estimation over rooted multigraphs and Hermite
//!   polynomial bases ([`lowdeg`]);
//! * reproducible experiment drivers and file emission ([`experiments`]).
//!
//! All randomness is counter-based: samples are addressed by `(seed, domain,
//! index)` so results are independent of thread count and iteration order.

pub mod amp;
pub mod error;
pub mod experiments;
pub mod lowdeg;
pub mod model;
pub mod mp;
pub mod nonlin;
pub mod prior;
pub mod rng;
pub mod scalar_theory;
pub mod trees;

pub use error::{Error, Result};
pub use prior::{DiscretePrior, Quadrature};
