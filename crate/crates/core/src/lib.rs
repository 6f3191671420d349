//! Numerical laboratory for the Faddeev–Skyrme energy on the 3-sphere.
//!
//! The crate discretizes S³ in Hopf coordinates, represents differential
//! forms by their coefficients in an adapted orthonormal frame, builds the
//! eigenspaces of `d*` on closed 2-forms from polynomial forms on ℝ⁴, and
//! evaluates the Hopf invariant, the Faddeev–Skyrme energy and its relaxed
//! counterpart together with a gradient flow on nodal maps.

pub mod cli;
pub mod collocation;
pub mod dual;
pub mod energetics;
pub mod error;
pub mod flow;
pub mod forms;
pub mod geometry;
pub mod maps;
pub mod spectral;

pub use error::{Error, Result};
