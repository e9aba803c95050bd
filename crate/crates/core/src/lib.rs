//! Numerical toolkit for the variable-exponent p(x)-Laplacian.

// `!(x > 0.0)` is the NaN-rejecting form of a precondition.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Stencil code indexes several arrays by the same axis or node.
#![allow(clippy::needless_range_loop)]

pub mod discrete;
pub mod error;
pub mod exponent;
pub mod grid;
pub mod harness;
pub mod inf_convolution;
pub mod lebesgue;
pub mod operator;
pub mod pgm;
pub mod profiles;
pub mod report;
pub mod restoration;
pub mod solver;
pub mod source;

pub use discrete::{ClrFlux, FluxModel, PowerFlux, VariationalScheme};
pub use error::{Error, Result};
pub use exponent::{ExponentField, ExponentPreset};
pub use grid::{Domain, Grid, GridFunction, Point};
pub use operator::{OperatorProbe, SymMat};
pub use profiles::Profile;
pub use report::{CheckItem, CheckReport};
pub use source::SourceSpec;
