//! Ground states of the sign-indefinite semilinear problem
//!
//! ```text
//! −Δu + V_n(x) u = Q_n(x) |u|^{p−2} u   in Ω,   u = 0 on ∂Ω,
//! ```
//!
//! computed by constrained minimization of the Rayleigh quotient
//! `s_n = ‖v‖_n² / J_n(v)^{2/p}` on uniform finite-difference grids, together
//! with the diagnostics that track how the ground states concentrate as the
//! self-focusing region `{Q_n > 0}` shrinks.

pub mod analysis;
pub mod cli;
pub mod dump;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod oracle;
pub mod problem;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
