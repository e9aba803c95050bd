//! Benchmark workloads, shared so the bench targets and their smoke test
//! build the same inputs.

use pxlap::restoration::{step_edge, ImageGrid};
use pxlap::{Domain, ExponentField, Grid, GridFunction};

/// 1D grid on [0, 1] with `n` nodes.
pub fn line(n: usize) -> Grid {
    Grid::with_nodes(Domain::interval(0.0, 1.0), n, 1).expect("valid grid")
}

/// 2D grid on [0, 1]² with `n` nodes per axis.
pub fn square(n: usize) -> Grid {
    Grid::with_nodes(Domain::rect(0.0, 1.0, 0.0, 1.0), n, n).expect("valid grid")
}

/// Smooth exponent 1.6 … 2.4 varying along x.
pub fn varying_exponent(grid: &Grid) -> ExponentField {
    ExponentField::build(grid, |x| 1.6 + 0.8 * x[0]).expect("exponent above 1")
}

pub fn cone(grid: &Grid) -> GridFunction {
    GridFunction::from_fn(grid, |x| {
        let (dx, dy) = (x[0] - 0.5, if grid.dim() == 2 { x[1] - 0.5 } else { 0.0 });
        (dx * dx + dy * dy).sqrt()
    })
    .expect("finite values")
}

/// The noisy 64×64 step edge also shipped as a fixture.
pub fn noisy_edge() -> ImageGrid {
    step_edge(64, 64, 0.25, 0.75, 0.1, 7).expect("valid image")
}
