//! Learned boundary-to-boundary operators for elliptic problems.
//!
//! Training data are exact Dirichlet/Neumann trace pairs built from
//! fundamental solutions centered outside the domain. A bias-free linear map
//! learns the trace-to-trace operator, and interior values are recovered
//! from the boundary integral representation, plus a Newton potential when
//! a source term is present.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod kernels;
pub mod operator;
pub mod quadrature;
pub mod solvers;
pub mod synthesis;
