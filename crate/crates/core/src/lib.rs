//! Lin's functions of positive densities on `(0, ∞)`.
//!
//! * [`quadrature`]: adaptive integration and finite differences.
//! * [`density`]: analytic density families with closed-form Lin functions,
//!   selected by name through a registry.
//! * [`lin`]: numerical Lin functions, grid checks of Lin's condition, and the
//!   ratio `f(ax)/f(bx)`.
//! * [`product`]: densities of products of independent variables and the Lin
//!   function of the product.
//! * [`counterexample`]: a dependent pair with prescribed marginals whose
//!   product density has an oscillating Lin function.
//! * [`cli`]: the command-line front end.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod counterexample;
pub mod density;
pub mod error;
pub mod lin;
pub mod product;
pub mod quadrature;

pub use density::{Density, DensityFamily, DensityModel, FamilyRegistry};
pub use error::{Error, Result};
pub use lin::{check_lin_condition, lin_function, LinConditionReport};
pub use quadrature::{QuadratureResult, QuadratureSpec};

/// Fixed CSV number format: 17 significant digits in scientific notation.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}
