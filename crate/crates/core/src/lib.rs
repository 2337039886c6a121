//! Pseudo-spectral laboratory for the Kahler-Ricci potential flow
//! `d phi/dt = log(omega_phi^n / omega_t^n) - h_t` on the flat complex torus
//! `C^n / (Z^n + i Z^n)`, `n` in `{1, 2}`, started from rough potentials.

pub mod cli;
pub mod config;
pub mod error;
pub mod fields;
pub mod flow;
pub mod geometry;
pub mod initial_data;
pub mod monitors;

pub use error::{KrfError, Result};
