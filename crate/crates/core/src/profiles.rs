//! Closed-form scalar profiles with exact derivatives, used as probe
//! functions, boundary traces and test inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{norm, Grid, GridFunction, Point};
use crate::operator::{OperatorProbe, SymMat};

use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq)]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// offset + slope·x
    Affine {
        slope: Point,
        offset: f64,
    },
    /// offset + coeff·|x − center|²
    Quadratic {
        center: Point,
        coeff: f64,
        offset: f64,
    },
    /// offset + coeff·|x − center|^power
    Radial {
        center: Point,
        coeff: f64,
        power: f64,
        offset: f64,
    },
    /// offset + amplitude·sin(πkx) (times sin(πky) in 2D)
    Sine {
        amplitude: f64,
        frequency: f64,
        offset: f64,
    },
    /// offset + coeff·|x − center|
    Abs {
        center: Point,
        coeff: f64,
        offset: f64,
    },
}

impl Profile {
    pub fn value(&self, x: Point, dim: usize) -> f64 {
        let r = |c: &Point| radius(x, *c, dim);
        match self {
            Profile::Constant { value } => *value,
            Profile::Affine { slope, offset } => {
                offset + slope[0] * x[0] + if dim == 2 { slope[1] * x[1] } else { 0.0 }
            }
            Profile::Quadratic {
                center,
                coeff,
                offset,
            } => offset + coeff * r(center).powi(2),
            Profile::Radial {
                center,
                coeff,
                power,
                offset,
            } => offset + coeff * r(center).powf(*power),
            Profile::Sine {
                amplitude,
                frequency,
                offset,
            } => {
                let k = PI * frequency;
                let s = (k * x[0]).sin() * if dim == 2 { (k * x[1]).sin() } else { 1.0 };
                offset + amplitude * s
            }
            Profile::Abs {
                center,
                coeff,
                offset,
            } => offset + coeff * r(center),
        }
    }

    /// Exact gradient; 0 at the singular point of `Abs` and `Radial`.
    pub fn gradient(&self, x: Point, dim: usize) -> Point {
        let g = match self {
            Profile::Constant { .. } => [0.0, 0.0],
            Profile::Affine { slope, .. } => *slope,
            Profile::Quadratic { center, coeff, .. } => [
                2.0 * coeff * (x[0] - center[0]),
                2.0 * coeff * (x[1] - center[1]),
            ],
            Profile::Radial {
                center,
                coeff,
                power,
                ..
            } => {
                let r = radius(x, *center, dim);
                if r == 0.0 {
                    [0.0, 0.0]
                } else {
                    let s = coeff * power * r.powf(power - 2.0);
                    [s * (x[0] - center[0]), s * (x[1] - center[1])]
                }
            }
            Profile::Sine {
                amplitude,
                frequency,
                ..
            } => {
                let k = PI * frequency;
                if dim == 1 {
                    [amplitude * k * (k * x[0]).cos(), 0.0]
                } else {
                    [
                        amplitude * k * (k * x[0]).cos() * (k * x[1]).sin(),
                        amplitude * k * (k * x[0]).sin() * (k * x[1]).cos(),
                    ]
                }
            }
            Profile::Abs { center, coeff, .. } => {
                let r = radius(x, *center, dim);
                if r == 0.0 {
                    [0.0, 0.0]
                } else {
                    [
                        coeff * (x[0] - center[0]) / r,
                        coeff * (x[1] - center[1]) / r,
                    ]
                }
            }
        };
        if dim == 1 {
            [g[0], 0.0]
        } else {
            g
        }
    }

    /// Exact Hessian; not defined at the singular point of `Abs`/`Radial`
    /// (returns zero there).
    pub fn hessian(&self, x: Point, dim: usize) -> SymMat {
        let m = match self {
            Profile::Constant { .. } | Profile::Affine { .. } => SymMat::default(),
            Profile::Quadratic { coeff, .. } => SymMat::diag(2.0 * coeff, 2.0 * coeff),
            Profile::Radial {
                center,
                coeff,
                power,
                ..
            } => {
                let r = radius(x, *center, dim);
                if r == 0.0 {
                    SymMat::default()
                } else {
                    let d = [
                        x[0] - center[0],
                        if dim == 2 { x[1] - center[1] } else { 0.0 },
                    ];
                    let s = coeff * power * r.powf(power - 2.0);
                    let t = coeff * power * (power - 2.0) * r.powf(power - 4.0);
                    SymMat::new(s + t * d[0] * d[0], t * d[0] * d[1], s + t * d[1] * d[1])
                }
            }
            Profile::Sine {
                amplitude,
                frequency,
                ..
            } => {
                let k = PI * frequency;
                if dim == 1 {
                    SymMat::diag(-amplitude * k * k * (k * x[0]).sin(), 0.0)
                } else {
                    let (sx, cx, sy, cy) = (
                        (k * x[0]).sin(),
                        (k * x[0]).cos(),
                        (k * x[1]).sin(),
                        (k * x[1]).cos(),
                    );
                    let a = amplitude * k * k;
                    SymMat::new(-a * sx * sy, a * cx * cy, -a * sx * sy)
                }
            }
            Profile::Abs { center, coeff, .. } => {
                let r = radius(x, *center, dim);
                if r == 0.0 || dim == 1 {
                    SymMat::default()
                } else {
                    let d = [x[0] - center[0], x[1] - center[1]];
                    let s = coeff / r;
                    let t = -coeff / (r * r * r);
                    SymMat::new(s + t * d[0] * d[0], t * d[0] * d[1], s + t * d[1] * d[1])
                }
            }
        };
        m.truncate(dim)
    }

    pub fn probe(&self, x: Point, dim: usize) -> OperatorProbe {
        OperatorProbe::new(x, self.gradient(x, dim), self.hessian(x, dim))
    }

    pub fn sample(&self, grid: &Grid) -> Result<GridFunction> {
        GridFunction::from_fn(grid, |x| self.value(x, grid.dim()))
    }
}

fn radius(x: Point, c: Point, dim: usize) -> f64 {
    if dim == 1 {
        (x[0] - c[0]).abs()
    } else {
        norm([x[0] - c[0], x[1] - c[1]])
    }
}

/// A seeded function with Lipschitz constant at most `lipschitz`.
///
/// 1D: a random walk with slopes drawn from [−L, L]. 2D: the lower envelope
/// of eight random cones of slope L.
pub fn random_lipschitz(grid: &Grid, lipschitz: f64, seed: u64) -> Result<GridFunction> {
    if !(lipschitz >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lipschitz must be >= 0, got {lipschitz}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = grid.h();
    if grid.dim() == 1 {
        let mut values = Vec::with_capacity(grid.len());
        let mut v = 0.0;
        values.push(v);
        for _ in 1..grid.len() {
            v += h * rng.gen_range(-lipschitz..=lipschitz);
            values.push(v);
        }
        GridFunction::new(grid.clone(), values)
    } else {
        let d = *grid.domain();
        let cones: Vec<(Point, f64)> = (0..8)
            .map(|_| {
                let c = [
                    rng.gen_range(d.lo[0]..=d.hi[0]),
                    rng.gen_range(d.lo[1]..=d.hi[1]),
                ];
                (c, rng.gen_range(0.0..=lipschitz * 0.5))
            })
            .collect();
        GridFunction::from_fn(grid, |x| {
            cones
                .iter()
                .map(|(c, a)| a + lipschitz * norm([x[0] - c[0], x[1] - c[1]]))
                .fold(f64::INFINITY, f64::min)
        })
    }
}
