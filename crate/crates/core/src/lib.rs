//! Equilibrium engine for Markovian diffusion exchange economies.
//!
//! The pipeline has four stages, each usable on its own:
//!
//! 1. [`economy`] — load and validate an economy description (diffusion
//!    coefficients, agents, assets) given as symbolic expressions.
//! 2. [`planner`] — solve the social planner / transfer-weight problem for
//!    the equilibrium allocation and state-price density.
//! 3. [`pricing`] — compute present-value asset prices on a space-time grid
//!    by solving the pricing PDE backward from the terminal payoff, with a
//!    Monte Carlo cross-check.
//! 4. [`completeness`] and [`radner`] — test whether the priced assets span
//!    the uncertainty (volatility-matrix nondegeneracy) and, if they do,
//!    construct the replicating trading strategies that implement the
//!    allocation through markets.
//!
//! Supporting modules: [`expr`] (symbolic expressions with exact
//! differentiation), [`markov`] (grids, interpolation, path simulation),
//! [`linalg`] (dense kernels for the small per-point systems), [`sampling`]
//! (low-discrepancy point sets), [`config`]/[`io`] (run configuration and
//! report persistence).

pub mod completeness;
pub mod config;
pub mod economy;
pub mod error;
pub mod expr;
pub mod io;
pub mod linalg;
pub mod markov;
pub mod planner;
pub mod pricing;
pub mod radner;
pub mod sampling;

pub use config::{EconomyConfig, RunConfig};
pub use economy::Economy;
pub use error::Error;
pub use expr::Expr;
