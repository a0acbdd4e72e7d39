//! Anisotropic nonlocal operators of the form
//! `L_K u(x) = P.V. ∫ (u(x) - u(y)) a((x-y)/|x-y|) |x-y|^{-n-2s} dy`
//! on bounded convex domains in one and two dimensions: kernel and Fourier
//! multiplier, dense P1 Galerkin assembly, pointwise evaluation, the
//! eigenvalue problem, variational solvers and property diagnostics.

pub mod assembly;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod operator;
pub mod quadrature;
pub mod spectral;
pub mod variational;

pub use error::{Error, Result};
