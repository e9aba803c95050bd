//! Uniform axis-aligned grids in one or two dimensions and the scalar fields
//! that live on them.
//!
//! Nodes are stored x-fastest: node `(i, j)` has index `i + nx * j`. One
//! dimensional grids use `ny = 1` and points carry a zero second coordinate.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A point or vector in the plane; the second entry is zero in 1D.
pub type Point = [f64; 2];

/// Relative tolerance used when matching spacings and coordinates.
const SPACING_RTOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub lo: Point,
    pub hi: Point,
    pub dim: usize,
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Self {
        Domain {
            lo: [a, 0.0],
            hi: [b, 0.0],
            dim: 1,
        }
    }

    pub fn rect(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Domain {
            lo: [x0, y0],
            hi: [x1, y1],
            dim: 2,
        }
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    /// Lebesgue measure |Ω| (length in 1D, area in 2D).
    pub fn measure(&self) -> f64 {
        (0..self.dim).map(|a| self.side(a)).product()
    }

    pub fn center(&self) -> Point {
        [
            0.5 * (self.lo[0] + self.hi[0]),
            0.5 * (self.lo[1] + self.hi[1]),
        ]
    }

    /// The box with the same center scaled by `factor` along every axis.
    pub fn scaled(&self, factor: f64) -> Domain {
        let c = self.center();
        let mut lo = self.lo;
        let mut hi = self.hi;
        for a in 0..self.dim {
            let half = 0.5 * factor * self.side(a);
            lo[a] = c[a] - half;
            hi[a] = c[a] + half;
        }
        Domain {
            lo,
            hi,
            dim: self.dim,
        }
    }

    pub fn contains(&self, x: Point, slack: f64) -> bool {
        (0..self.dim).all(|a| x[a] >= self.lo[a] - slack && x[a] <= self.hi[a] + slack)
    }

    /// Euclidean distance from an interior point to the boundary of the box.
    pub fn boundary_distance(&self, x: Point) -> f64 {
        (0..self.dim)
            .map(|a| (x[a] - self.lo[a]).min(self.hi[a] - x[a]))
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    }

    fn validate(&self) -> Result<()> {
        if self.dim != 1 && self.dim != 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension {} not supported",
                self.dim
            )));
        }
        for a in 0..self.dim {
            if !(self.side(a) > 0.0) || !self.lo[a].is_finite() || !self.hi[a].is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "empty or non-finite side on axis {a}: [{}, {}]",
                    self.lo[a], self.hi[a]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Grid {
    domain: Domain,
    n: [usize; 2],
    h: f64,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        let tol = SPACING_RTOL * self.h.max(other.h);
        self.n == other.n
            && self.domain.dim == other.domain.dim
            && (self.h - other.h).abs() <= tol
            && (0..self.domain.dim).all(|a| {
                (self.domain.lo[a] - other.domain.lo[a]).abs() <= tol
                    && (self.domain.hi[a] - other.domain.hi[a]).abs() <= tol
            })
    }
}

impl Grid {
    /// Nodes on the closed box with spacing `h`; every side must be an integer
    /// multiple of `h`.
    pub fn new(domain: Domain, h: f64) -> Result<Self> {
        domain.validate()?;
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidGrid(format!("spacing must be > 0, got {h}")));
        }
        let mut n = [1usize, 1usize];
        for a in 0..domain.dim {
            let cells = domain.side(a) / h;
            let rounded = cells.round();
            if rounded < 1.0 || (cells - rounded).abs() > SPACING_RTOL * cells.max(1.0) {
                return Err(Error::InvalidGrid(format!(
                    "side {} on axis {a} is not a multiple of h = {h}",
                    domain.side(a)
                )));
            }
            n[a] = rounded as usize + 1;
        }
        Ok(Grid { domain, n, h })
    }

    /// Grid with `nx` (and `ny` in 2D) nodes per axis; spacings must agree.
    pub fn with_nodes(domain: Domain, nx: usize, ny: usize) -> Result<Self> {
        domain.validate()?;
        if nx < 2 || (domain.dim == 2 && ny < 2) {
            return Err(Error::InvalidGrid(
                "need at least two nodes per axis".into(),
            ));
        }
        let h = domain.side(0) / (nx - 1) as f64;
        if domain.dim == 2 {
            let hy = domain.side(1) / (ny - 1) as f64;
            if (h - hy).abs() > SPACING_RTOL * h {
                return Err(Error::InvalidGrid(format!(
                    "spacing must be uniform across axes: hx = {h}, hy = {hy}"
                )));
            }
        }
        let n = if domain.dim == 2 { [nx, ny] } else { [nx, 1] };
        Ok(Grid { domain, n, h })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn shape(&self) -> [usize; 2] {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.n[0] * j
    }

    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.n[0], idx / self.n[0])
    }

    pub fn point(&self, idx: usize) -> Point {
        let (i, j) = self.ij(idx);
        let x = self.domain.lo[0] + i as f64 * self.h;
        let y = if self.dim() == 2 {
            self.domain.lo[1] + j as f64 * self.h
        } else {
            0.0
        };
        [x, y]
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let (i, j) = self.ij(idx);
        let on_x = i == 0 || i + 1 == self.n[0];
        if self.dim() == 1 {
            on_x
        } else {
            on_x || j == 0 || j + 1 == self.n[1]
        }
    }

    /// Number of nodes between `idx` and the nearest boundary node.
    pub fn depth(&self, idx: usize) -> usize {
        let (i, j) = self.ij(idx);
        let dx = i.min(self.n[0] - 1 - i);
        if self.dim() == 1 {
            dx
        } else {
            dx.min(j.min(self.n[1] - 1 - j))
        }
    }

    pub fn boundary_distance(&self, idx: usize) -> f64 {
        self.depth(idx) as f64 * self.h
    }

    /// Neighbor `offset` steps along `axis`, if it exists.
    pub fn neighbor(&self, idx: usize, axis: usize, offset: isize) -> Option<usize> {
        let (i, j) = self.ij(idx);
        let (c, len) = if axis == 0 {
            (i, self.n[0])
        } else {
            (j, self.n[1])
        };
        if axis >= self.dim() {
            return None;
        }
        let target = c as isize + offset;
        if target < 0 || target >= len as isize {
            return None;
        }
        Some(if axis == 0 {
            self.index(target as usize, j)
        } else {
            self.index(i, target as usize)
        })
    }

    /// Node reached by an offset vector in index space.
    pub fn offset(&self, idx: usize, di: isize, dj: isize) -> Option<usize> {
        let (i, j) = self.ij(idx);
        let ti = i as isize + di;
        let tj = j as isize + dj;
        if ti < 0 || tj < 0 || ti >= self.n[0] as isize || tj >= self.n[1] as isize {
            return None;
        }
        Some(self.index(ti as usize, tj as usize))
    }

    /// Trapezoid weight: h^d with a factor 1/2 per axis on which the node is
    /// a boundary node.
    pub fn weight(&self, idx: usize) -> f64 {
        let (i, j) = self.ij(idx);
        let mut w = self.h;
        if i == 0 || i + 1 == self.n[0] {
            w *= 0.5;
        }
        if self.dim() == 2 {
            w *= self.h;
            if j == 0 || j + 1 == self.n[1] {
                w *= 0.5;
            }
        }
        w
    }

    pub fn cell_measure(&self) -> f64 {
        self.h.powi(self.dim() as i32)
    }

    pub fn nodes(&self) -> std::ops::Range<usize> {
        0..self.len()
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes().filter(move |&k| !self.is_boundary(k))
    }

    /// Sub-grid of the nodes lying in `sub` (snapped inward to grid lines),
    /// together with the parent index of every sub-grid node.
    pub fn restrict(&self, sub: &Domain) -> Result<(Grid, Vec<usize>)> {
        if sub.dim != self.dim() {
            return Err(Error::DimensionMismatch(
                "sub-box dimension differs from grid".into(),
            ));
        }
        let slack = SPACING_RTOL * self.h;
        let mut lo_idx = [0usize; 2];
        let mut hi_idx = [0usize; 2];
        for a in 0..self.dim() {
            let lo = ((sub.lo[a] - self.domain.lo[a]) / self.h - slack)
                .ceil()
                .max(0.0) as usize;
            let hi = (((sub.hi[a] - self.domain.lo[a]) / self.h + slack).floor() as usize)
                .min(self.n[a] - 1);
            if hi <= lo {
                return Err(Error::InvalidGrid(format!(
                    "sub-box {sub:?} holds fewer than two nodes per axis"
                )));
            }
            lo_idx[a] = lo;
            hi_idx[a] = hi;
        }
        let lo_pt = self.point(self.index(lo_idx[0], lo_idx[1]));
        let hi_pt = self.point(self.index(hi_idx[0], hi_idx[1]));
        let domain = Domain {
            lo: lo_pt,
            hi: hi_pt,
            dim: self.dim(),
        };
        let nx = hi_idx[0] - lo_idx[0] + 1;
        let ny = hi_idx[1] - lo_idx[1] + 1;
        let grid = Grid {
            domain,
            n: if self.dim() == 2 { [nx, ny] } else { [nx, 1] },
            h: self.h,
        };
        let mut map = Vec::with_capacity(grid.len());
        for j in lo_idx[1]..=hi_idx[1] {
            for i in lo_idx[0]..=hi_idx[0] {
                map.push(self.index(i, j));
            }
        }
        Ok((grid, map))
    }

    /// Trapezoid quadrature of nodal values with compensated summation.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        let mut sum = NeumaierSum::default();
        for (k, v) in values.iter().enumerate() {
            sum.add(self.weight(k) * v);
        }
        sum.total()
    }

    pub(crate) fn check_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::DimensionMismatch(format!("{what}: grids differ")));
        }
        Ok(())
    }
}

/// Neumaier compensated sum; keeps reductions accurate and order-fixed.
#[derive(Default, Clone, Copy, Debug)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Scalar field sampled at the nodes of a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite value at node {k} {:?}",
                grid.point(k)
            )));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(Point) -> f64) -> Result<Self> {
        let values = grid.nodes().map(|k| f(grid.point(k))).collect();
        Self::new(grid.clone(), values)
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        GridFunction {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.check_same(&other.grid, "zip_with")?;
        Self::new(
            self.grid.clone(),
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn boundary_values(&self) -> Vec<(usize, f64)> {
        self.grid
            .nodes()
            .filter(|&k| self.grid.is_boundary(k))
            .map(|k| (k, self.values[k]))
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// osc(u) = max u − min u.
    pub fn oscillation(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    /// Nodal gradient: central differences inside, one-sided at the boundary.
    pub fn nodal_gradient(&self, idx: usize) -> Point {
        let mut g = [0.0; 2];
        for (axis, slot) in g.iter_mut().enumerate().take(self.grid.dim()) {
            let fwd = self.grid.neighbor(idx, axis, 1);
            let bwd = self.grid.neighbor(idx, axis, -1);
            *slot = match (bwd, fwd) {
                (Some(b), Some(f)) => (self.values[f] - self.values[b]) / (2.0 * self.grid.h()),
                (None, Some(f)) => (self.values[f] - self.values[idx]) / self.grid.h(),
                (Some(b), None) => (self.values[idx] - self.values[b]) / self.grid.h(),
                (None, None) => 0.0,
            };
        }
        g
    }

    pub fn gradient_norms(&self) -> Result<GridFunction> {
        let values = self
            .grid
            .nodes()
            .map(|k| norm(self.nodal_gradient(k)))
            .collect();
        GridFunction::new(self.grid.clone(), values)
    }

    /// Values on a sub-box, as a function on the restricted grid.
    pub fn restrict(&self, sub: &Domain) -> Result<GridFunction> {
        let (grid, map) = self.grid.restrict(sub)?;
        let values = map.iter().map(|&k| self.values[k]).collect();
        GridFunction::new(grid, values)
    }

    /// CSV with header `x,value` (1D) or `x,y,value` (2D).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.grid.dim() == 1 {
            w.write_record(["x", "value"])?;
        } else {
            w.write_record(["x", "y", "value"])?;
        }
        for k in self.grid.nodes() {
            let p = self.grid.point(k);
            if self.grid.dim() == 1 {
                w.write_record([p[0].to_string(), self.values[k].to_string()])?;
            } else {
                w.write_record([
                    p[0].to_string(),
                    p[1].to_string(),
                    self.values[k].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads the CSV layout written by [`GridFunction::write_csv`]. Rows may be
    /// in any order but must cover a uniform grid exactly once.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        let dim = match headers.len() {
            2 => 1,
            3 => 2,
            n => {
                return Err(Error::InvalidGrid(format!(
                    "expected 2 or 3 columns, found {n}"
                )))
            }
        };
        let mut rows: Vec<(Point, f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidGrid(format!("bad number {s:?}: {e}")))
            };
            let x = parse(&rec[0])?;
            let (y, v) = if dim == 2 {
                (parse(&rec[1])?, parse(&rec[2])?)
            } else {
                (0.0, parse(&rec[1])?)
            };
            rows.push(([x, y], v));
        }
        let axis_values = |a: usize| -> Vec<f64> {
            let mut c: Vec<f64> = rows.iter().map(|r| r.0[a]).collect();
            c.sort_by(f64::total_cmp);
            c.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
            c
        };
        let xs = axis_values(0);
        let ys = if dim == 2 { axis_values(1) } else { vec![0.0] };
        if xs.len() < 2 || (dim == 2 && ys.len() < 2) {
            return Err(Error::InvalidGrid(
                "CSV holds fewer than two nodes per axis".into(),
            ));
        }
        let domain = if dim == 1 {
            Domain::interval(xs[0], xs[xs.len() - 1])
        } else {
            Domain::rect(xs[0], xs[xs.len() - 1], ys[0], ys[ys.len() - 1])
        };
        let grid = Grid::with_nodes(domain, xs.len(), ys.len())?;
        if rows.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "{} rows do not form a {}x{} grid",
                rows.len(),
                xs.len(),
                ys.len()
            )));
        }
        let mut values = vec![f64::NAN; grid.len()];
        for (p, v) in rows {
            let i = ((p[0] - grid.domain().lo[0]) / grid.h()).round() as usize;
            let j = if dim == 2 {
                ((p[1] - grid.domain().lo[1]) / grid.h()).round() as usize
            } else {
                0
            };
            let k = grid.index(i.min(grid.shape()[0] - 1), j.min(grid.shape()[1] - 1));
            let expected = grid.point(k);
            if (0..dim).any(|a| (expected[a] - p[a]).abs() > 1e-6 * grid.h()) {
                return Err(Error::InvalidGrid(format!(
                    "coordinate {p:?} is not on a uniform grid"
                )));
            }
            values[k] = v;
        }
        GridFunction::new(grid, values)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

pub fn norm(v: Point) -> f64 {
    v[0].hypot(v[1])
}

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_must_divide_the_box() {
        assert!(Grid::new(Domain::interval(0.0, 1.0), 0.3).is_err());
        let g = Grid::new(Domain::interval(0.0, 1.0), 0.25).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g.point(4), [1.0, 0.0]);
    }

    #[test]
    fn trapezoid_weights_sum_to_measure() {
        let g = Grid::new(Domain::rect(0.0, 2.0, -1.0, 0.5), 0.25).unwrap();
        let total: f64 = g.nodes().map(|k| g.weight(k)).sum();
        assert!((total - 3.0).abs() < 1e-12);
        let corner = g.index(0, 0);
        assert!((g.weight(corner) - 0.25 * 0.25 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_is_exact_for_bilinear() {
        let g = Grid::new(Domain::rect(0.0, 1.0, 0.0, 1.0), 0.1).unwrap();
        let u = GridFunction::from_fn(&g, |p| 1.0 + 2.0 * p[0] + 3.0 * p[0] * p[1]).unwrap();
        assert!((u.integral() - (1.0 + 1.0 + 0.75)).abs() < 1e-12);
    }

    #[test]
    fn restriction_snaps_inward() {
        let g = Grid::new(Domain::interval(-1.0, 1.0), 0.25).unwrap();
        let (sub, map) = g.restrict(&Domain::interval(-0.6, 0.55)).unwrap();
        assert_eq!(sub.len(), 5);
        assert_eq!(g.point(map[0])[0], -0.5);
        assert_eq!(sub.domain().hi[0], 0.5);
    }

    #[test]
    fn csv_round_trip_2d() {
        let g = Grid::new(Domain::rect(0.0, 1.0, 0.0, 0.5), 0.25).unwrap();
        let u = GridFunction::from_fn(&g, |p| p[0] * p[0] - p[1]).unwrap();
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let back = GridFunction::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn non_finite_values_rejected() {
        let g = Grid::new(Domain::interval(0.0, 1.0), 0.5).unwrap();
        assert!(GridFunction::new(g, vec![0.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn neumaier_recovers_cancellation() {
        let mut s = NeumaierSum::default();
        for x in [1e16, 1.0, -1e16, 1.0] {
            s.add(x);
        }
        assert_eq!(s.total(), 2.0);
    }
}
