use crate::grid::Point;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid exponent {value} at node {node} {point:?}: p(x) must exceed 1")]
    InvalidExponent {
        node: usize,
        point: Point,
        value: f64,
    },

    #[error("invalid exponent: {0}")]
    InvalidExponentValue(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate gradient at {0:?}")]
    DegenerateGradient(Point),

    #[error("node {node} is outside the interior stencil region")]
    Boundary { node: usize },

    #[error("norm bisection did not converge after {iterations} iterations, bracket [{lo}, {hi}]")]
    IterationLimit { iterations: usize, lo: f64, hi: f64 },

    #[error("invalid test function: {0}")]
    InvalidTestFunction(String),

    #[error(
        "descent stalled after {iterations} iterations: energy {energy}, residual {residual}, \
         step {step}"
    )]
    DescentStall {
        iterations: usize,
        energy: f64,
        residual: f64,
        step: f64,
    },

    #[error("fixed point stalled after {} outer iterations, last update {:?}", .history.len(), .history.last())]
    FixedPointStall { history: Vec<f64> },

    #[error("non-finite value at flow step {step}")]
    BlowUp { step: usize },

    #[error("pgm: {0}")]
    Pgm(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
