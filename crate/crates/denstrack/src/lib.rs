// `!(x > 0.0)` style guards are deliberate: they reject NaN along with the
// out-of-range values. Indexed loops walk several arrays in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

//! Grid-based probability density tracking for SDEs.
//!
//! The library evolves probability density functions of SDE solutions by
//! iterating the one-step Euler-Maruyama Gaussian transition operator on a
//! uniform grid, checks the method's L1 stability/consistency/convergence
//! behaviour numerically, and carries the full Ornstein-Uhlenbeck analytic
//! tool set (exact transition law, closed-form iterated chain) as reference
//! oracles. A CLI (`denstrack`) drives experiments from JSON configs.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod grid_density;
pub mod kernel;
pub mod model;
pub mod propagator;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
