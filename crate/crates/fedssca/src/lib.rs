//! Federated optimization via mini-batch stochastic successive convex
//! approximation (SSCA).
//!
//! The library simulates a central server coordinating `I` clients that hold
//! disjoint shards of a labeled dataset. Each round the server broadcasts the
//! current model, clients reply with mini-batch statistics (never raw
//! samples), and the server refines a recursively averaged convex surrogate
//! whose minimizer has a closed form. Two training modes are provided:
//!
//! * unconstrained: cross-entropy plus an l2 penalty, solved per round by
//!   first-order optimality;
//! * constrained: minimize the parameter norm subject to a cost ceiling,
//!   handled with an exact penalty / slack reformulation whose per-round
//!   problem is a single-constraint QCQP solved in closed form from the KKT
//!   conditions.
//!
//! FedAvg-style local-SGD baselines, deterministic seeded data handling, and
//! a CSV/JSON experiment harness round out the crate.

pub mod baselines;
pub mod error;
pub mod federation;
pub mod harness;
pub mod model;
pub mod schedules;
pub mod solvers;
pub mod surrogate;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
