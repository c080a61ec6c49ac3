//! Optimal stopping and one-sided singular control of linear diffusions
//! through the fundamental ratios g/ψ, g/φ, g/ψ′ and −g/φ′.

pub mod catalog;
pub mod connection;
pub mod control;
pub mod diffusion;
pub mod error;
pub mod exec;
pub mod expr;
pub mod fundamental;
pub mod grid;
pub mod montecarlo;
pub mod ode;
pub mod optimize;
pub mod payoff;
pub mod problem;
pub mod quadrature;
pub mod report;
pub mod reproduce;
pub mod ratio;
pub mod resolvent;
pub mod stopping;
pub mod verify;

pub use error::{Error, Result};
