//! Learning distance-dependent weights for nonlocal (fractional-order)
//! regularization of a one-dimensional linear inverse problem.
//!
//! The pipeline is layered bottom-up:
//!
//! - [`fem`]: equidistant P1 finite elements on `(0, 1)` and the Neumann
//!   Helmholtz forward map `S = (ρK + M)⁻¹ M`.
//! - [`nonlocal`]: per-distance-band seminorm matrices `A_k`, so that the
//!   weighted nonlocal operator is `L(σ) = Σ_k σ_k A_k`, plus an independent
//!   quadrature oracle for the singular integrals.
//! - [`lower`]: the Tikhonov-type lower-level problem solved via its normal
//!   equations.
//! - [`reduced`]: the reduced upper-level cost and its adjoint gradient.
//! - [`optimizer`]: box projection, the stationarity residual and a
//!   primal-dual active-set method with a quasi-Newton inner solver.
//! - [`datagen`]: seeded synthetic training and validation data.
//! - [`experiment`]: training, validation and the full table pipeline.
//! - [`checks`]: numerical self-checks used by the `check` command.
//!
//! Data-parallel loops go through [`par`]; with the `parallel` feature
//! (default) they run on rayon, otherwise sequentially. Results do not depend
//! on scheduling because every reduction is performed in a fixed order.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod lower;
pub mod nonlocal;
pub mod optimizer;
pub mod par;
pub mod quadrature;
pub mod reduced;

pub use error::{Error, Result};

/// Nodal coefficient vector of a P1 finite element function.
pub type NodalVector = nalgebra::DVector<f64>;
