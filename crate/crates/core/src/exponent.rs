//! The variable exponent p(x) on a grid, its diagnostics, and the choice of
//! the convolution power q.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{Grid, Point};

/// Smallest admissible distance of p from 1 for conjugate exponents.
pub const CONJUGATE_FLOOR: f64 = 1.0 + 1e-6;

/// Sampled exponent p(x) > 1 with its stored gradient and extrema.
#[derive(Clone, Debug)]
pub struct ExponentField {
    grid: Grid,
    values: Vec<f64>,
    gradient: Vec<Point>,
    p_minus: f64,
    p_plus: f64,
}

impl ExponentField {
    /// Samples `expression` at every node of the closed box and differentiates
    /// it numerically (central inside, second-order one-sided at the boundary).
    pub fn build(grid: &Grid, expression: impl Fn(Point) -> f64) -> Result<Self> {
        let values = grid.nodes().map(|k| expression(grid.point(k))).collect();
        Self::from_values(grid, values)
    }

    pub fn constant(grid: &Grid, p: f64) -> Result<Self> {
        Self::build(grid, |_| p)
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "exponent has {} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        for (k, &v) in values.iter().enumerate() {
            if !(v > 1.0) || !v.is_finite() {
                return Err(Error::InvalidExponent {
                    node: k,
                    point: grid.point(k),
                    value: v,
                });
            }
        }
        let gradient = grid
            .nodes()
            .map(|k| fd_gradient(grid, &values, k))
            .collect();
        let p_minus = values.iter().copied().fold(f64::INFINITY, f64::min);
        let p_plus = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(ExponentField {
            grid: grid.clone(),
            values,
            gradient,
            p_minus,
            p_plus,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// The field on the sub-grid of nodes inside `sub`; the gradient is
    /// recomputed there.
    pub fn restrict(&self, sub: &crate::grid::Domain) -> Result<ExponentField> {
        let (grid, map) = self.grid.restrict(sub)?;
        let values = map.iter().map(|&k| self.values[k]).collect();
        Self::from_values(&grid, values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn gradient(&self, idx: usize) -> Point {
        self.gradient[idx]
    }

    pub fn p_minus(&self) -> f64 {
        self.p_minus
    }

    pub fn p_plus(&self) -> f64 {
        self.p_plus
    }

    pub fn is_constant(&self) -> bool {
        self.p_minus == self.p_plus
    }

    /// p at an arbitrary point by multilinear interpolation (exact at nodes).
    pub fn value_at(&self, x: Point) -> f64 {
        self.interpolate(x, |k| self.values[k])
    }

    /// Dp at an arbitrary point by multilinear interpolation of the stored
    /// nodal gradient.
    pub fn gradient_at(&self, x: Point) -> Point {
        [
            self.interpolate(x, |k| self.gradient[k][0]),
            self.interpolate(x, |k| self.gradient[k][1]),
        ]
    }

    fn interpolate(&self, x: Point, at: impl Fn(usize) -> f64) -> f64 {
        let g = &self.grid;
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for a in 0..g.dim() {
            let n = g.shape()[a];
            let s = ((x[a] - g.domain().lo[a]) / g.h()).clamp(0.0, (n - 1) as f64);
            let i = (s.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = s - i as f64;
        }
        if g.dim() == 1 {
            let k = g.index(base[0], 0);
            let (v0, v1) = (at(k), at(k + 1));
            if frac[0] == 0.0 {
                v0
            } else {
                v0 + frac[0] * (v1 - v0)
            }
        } else {
            let k00 = g.index(base[0], base[1]);
            let k10 = g.index(base[0] + 1, base[1]);
            let k01 = g.index(base[0], base[1] + 1);
            let k11 = g.index(base[0] + 1, base[1] + 1);
            let (fx, fy) = (frac[0], frac[1]);
            if fx == 0.0 && fy == 0.0 {
                return at(k00);
            }
            (1.0 - fx) * (1.0 - fy) * at(k00)
                + fx * (1.0 - fy) * at(k10)
                + (1.0 - fx) * fy * at(k01)
                + fx * fy * at(k11)
        }
    }

    /// Pointwise conjugate exponent p' = p / (p − 1).
    pub fn conjugate(&self) -> Result<ExponentField> {
        if self.p_minus < CONJUGATE_FLOOR {
            return Err(Error::InvalidExponentValue(format!(
                "p⁻ = {} is below {CONJUGATE_FLOOR}; the conjugate exponent overflows",
                self.p_minus
            )));
        }
        Self::from_values(
            &self.grid,
            self.values.iter().map(|p| p / (p - 1.0)).collect(),
        )
    }

    /// Pointwise product p(x)·q(x).
    pub fn product(&self, other: &ExponentField) -> Result<ExponentField> {
        self.grid.check_same(&other.grid, "exponent product")?;
        Self::from_values(
            &self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        )
    }

    /// CSV with columns `x[,y],p,dp_dx[,dp_dy]`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let two = self.grid.dim() == 2;
        if two {
            w.write_record(["x", "y", "p", "dp_dx", "dp_dy"])?;
        } else {
            w.write_record(["x", "p", "dp_dx"])?;
        }
        for k in self.grid.nodes() {
            let x = self.grid.point(k);
            let g = self.gradient[k];
            if two {
                w.write_record([x[0], x[1], self.values[k], g[0], g[1]].map(|v| v.to_string()))?;
            } else {
                w.write_record([x[0], self.values[k], g[0]].map(|v| v.to_string()))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn fd_gradient(grid: &Grid, values: &[f64], k: usize) -> Point {
    let h = grid.h();
    let mut g = [0.0; 2];
    for (axis, slot) in g.iter_mut().enumerate().take(grid.dim()) {
        let f1 = grid.neighbor(k, axis, 1);
        let b1 = grid.neighbor(k, axis, -1);
        *slot = match (b1, f1) {
            (Some(b), Some(f)) => (values[f] - values[b]) / (2.0 * h),
            (None, Some(f)) => match grid.neighbor(k, axis, 2) {
                Some(f2) => (-3.0 * values[k] + 4.0 * values[f] - values[f2]) / (2.0 * h),
                None => (values[f] - values[k]) / h,
            },
            (Some(b), None) => match grid.neighbor(k, axis, -2) {
                Some(b2) => (3.0 * values[k] - 4.0 * values[b] + values[b2]) / (2.0 * h),
                None => (values[k] - values[b]) / h,
            },
            (None, None) => 0.0,
        };
    }
    g
}

/// Largest |p(x) − p(y)|·|log|x − y|| over node pairs closer than 1/2.
///
/// Pairs at distance ≥ 1/2 are skipped. The result is a diagnostic; nothing
/// else in the crate is gated on it.
pub fn log_holder_constant(field: &ExponentField) -> f64 {
    let g = field.grid();
    let n = g.len();
    let mut best = 0.0f64;
    for a in 0..n {
        let xa = g.point(a);
        for b in (a + 1)..n {
            let xb = g.point(b);
            let d = (xa[0] - xb[0]).hypot(xa[1] - xb[1]);
            if d >= 0.5 || d == 0.0 {
                continue;
            }
            let c = (field.values[a] - field.values[b]).abs() * d.ln().abs();
            best = best.max(c);
        }
    }
    best
}

/// Smallest q ≥ 2 with p⁻ − 2 + (q − 2)/(q − 1) ≥ 0.
pub fn choose_q(p_minus: f64) -> Result<f64> {
    if !(p_minus > 1.0) || !p_minus.is_finite() {
        return Err(Error::InvalidExponentValue(format!(
            "p⁻ must exceed 1, got {p_minus}"
        )));
    }
    Ok(2.0f64.max(p_minus / (p_minus - 1.0)))
}

/// Closed-form exponent presets selectable from configuration files.
#[derive(Clone, Debug, PartialEq)]
pub enum ExponentPreset {
    /// p ≡ value.
    Constant { value: f64 },
    /// p = base + slope·x.
    Affine { base: f64, slope: Point },
    /// p = base + amplitude·sin(πx) (times sin(πy) in 2D).
    SineBump { base: f64, amplitude: f64 },
}

impl ExponentPreset {
    pub fn eval(&self, x: Point, dim: usize) -> f64 {
        match *self {
            ExponentPreset::Constant { value } => value,
            ExponentPreset::Affine { base, slope } => base + slope[0] * x[0] + slope[1] * x[1],
            ExponentPreset::SineBump { base, amplitude } => {
                let s = (std::f64::consts::PI * x[0]).sin();
                let s = if dim == 2 {
                    s * (std::f64::consts::PI * x[1]).sin()
                } else {
                    s
                };
                base + amplitude * s
            }
        }
    }

    pub fn build(&self, grid: &Grid) -> Result<ExponentField> {
        let dim = grid.dim();
        ExponentField::build(grid, |x| self.eval(x, dim))
    }
}
