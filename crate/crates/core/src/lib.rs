//! Optimal transport with traffic congestion on discretized planar domains.
//!
//! Path flows with prescribed endpoint marginals are routed to minimize the
//! congestion functional `∫ H(i_Q)`. Minimizers are characterized by two
//! conditions under the induced metric `ξ = H'(i_Q)`: every used path is a
//! geodesic, and the endpoint plan solves the Monge-Kantorovich problem for
//! the congested cost. [`solver::fw_solve`] computes minimizers and
//! [`solver::wardrop_check`] verifies both conditions for any flow.
// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod congestion;
pub mod domain;
pub mod error;
pub mod flow;
pub mod formats;
pub mod geodesics;
pub mod measures;
pub mod oracle;
pub mod solver;
pub mod svg;
pub mod transport;

pub use congestion::{CongestionModel, Mode};
pub use domain::{CongestionSupport, Domain, Edge, Point, Rect};
pub use error::{Error, Result};
pub use flow::{FlowEntry, GridPath, IntensityField, PathFlow};
pub use measures::{DiscreteMeasure, PlanEntry, TransportPlan};
pub use solver::{fw_solve, wardrop_check, Problem, SolverConfig, SolverReport};
