//! Numerical toolkit for diffeomorphisms of tori with a dominated splitting.
//!
//! The crate covers the whole pipeline: defining systems ([`system`]),
//! iterating orbits and derivative cocycles ([`cocycle`]), estimating and
//! certifying invariant bundles ([`splitting`]), exponents ([`spectra`]),
//! entropy estimates and Pesin-type bounds ([`entropy`]), and empirical
//! measures and recurrence ([`measures`]).

pub mod cocycle;
pub mod entropy;
pub mod error;
pub mod expr;
pub mod grid;
pub mod manifold;
pub mod measures;
pub mod spectra;
pub mod splitting;
pub mod system;

pub use error::{Error, ErrorCategory, Result};
pub use manifold::{SquareMatrix, Subspace, TorusPoint};
pub use system::{SystemKind, SystemSpec};
