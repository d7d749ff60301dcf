//! Numerical laboratory for small-amplitude discrete modes of the 1-D
//! nonlinear Klein–Gordon equation
//!
//! ```text
//! u_tt − u_xx + V(x)u + m²u + β′(u) = 0
//! ```
//!
//! with a trapping potential V. The crate discretizes −Δ+V, builds the
//! Birkhoff normal form of the Hamiltonian at jet level, computes Fermi
//! golden rule coefficients at the edge of the continuous spectrum, and
//! integrates both the full equation and the reduced dissipative mode
//! system.

pub mod dynamics;
pub mod error;
pub mod grid;
pub mod io;
pub mod jets;
pub mod linalg;
pub mod normalform;
pub mod resonance;
pub mod scattering;
pub mod spectral;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
