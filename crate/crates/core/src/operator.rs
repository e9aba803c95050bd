//! Pointwise p(x)-Laplacian: diffusion matrix, log drift, strong form and the
//! infinity Laplacian, plus a conservative finite-difference flux divergence
//! used as an independent grid oracle.

use crate::error::{Error, Result};
use crate::exponent::ExponentField;
use crate::grid::{dot, norm, GridFunction, Point};

/// Symmetric 2×2 matrix `[[a, b], [b, c]]`; 1D problems use only `a`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SymMat {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl SymMat {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        SymMat { a, b, c }
    }

    pub fn identity() -> Self {
        SymMat {
            a: 1.0,
            b: 0.0,
            c: 1.0,
        }
    }

    pub fn diag(a: f64, c: f64) -> Self {
        SymMat { a, b: 0.0, c }
    }

    /// Builds from a full matrix; rejects asymmetry beyond 1e-12 (relative).
    pub fn from_rows(m: [[f64; 2]; 2]) -> Result<Self> {
        let scale = 1.0f64.max(m[0][1].abs()).max(m[1][0].abs());
        if (m[0][1] - m[1][0]).abs() > 1e-12 * scale {
            return Err(Error::InvalidParameter(format!(
                "matrix not symmetric: {m:?}"
            )));
        }
        Ok(SymMat {
            a: m[0][0],
            b: 0.5 * (m[0][1] + m[1][0]),
            c: m[1][1],
        })
    }

    pub fn rows(&self) -> [[f64; 2]; 2] {
        [[self.a, self.b], [self.b, self.c]]
    }

    pub fn apply(&self, v: Point) -> Point {
        [self.a * v[0] + self.b * v[1], self.b * v[0] + self.c * v[1]]
    }

    pub fn quad(&self, v: Point) -> f64 {
        dot(self.apply(v), v)
    }

    /// tr(self · other) for symmetric arguments.
    pub fn trace_product(&self, other: &SymMat) -> f64 {
        self.a * other.a + 2.0 * self.b * other.b + self.c * other.c
    }

    pub fn scale(&self, s: f64) -> Self {
        SymMat {
            a: s * self.a,
            b: s * self.b,
            c: s * self.c,
        }
    }

    /// Eigenvalues in ascending order (the 2×2 block).
    pub fn eigenvalues(&self) -> [f64; 2] {
        let mean = 0.5 * (self.a + self.c);
        let rad = (0.25 * (self.a - self.c).powi(2) + self.b * self.b).sqrt();
        [mean - rad, mean + rad]
    }

    /// Zeroes the entries that do not exist in `dim` dimensions.
    pub fn truncate(&self, dim: usize) -> Self {
        if dim == 1 {
            SymMat {
                a: self.a,
                b: 0.0,
                c: 0.0,
            }
        } else {
            *self
        }
    }
}

/// A second-order jet (η, X) attached to a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatorProbe {
    pub x: Point,
    pub gradient: Point,
    pub hessian: SymMat,
}

impl OperatorProbe {
    pub fn new(x: Point, gradient: Point, hessian: SymMat) -> Self {
        OperatorProbe {
            x,
            gradient,
            hessian,
        }
    }
}

fn nonzero(x: Point, xi: Point) -> Result<f64> {
    let r = norm(xi);
    if r == 0.0 {
        Err(Error::DegenerateGradient(x))
    } else {
        Ok(r)
    }
}

/// A(x, ξ) = |ξ|^{p−2}(I + (p−2) ξ̂⊗ξ̂) for an exponent value `p`.
pub fn diffusion_matrix_at(x: Point, xi: Point, p: f64, dim: usize) -> Result<SymMat> {
    let r = nonzero(x, xi)?;
    let s = r.powf(p - 2.0);
    let (e0, e1) = (xi[0] / r, xi[1] / r);
    let k = p - 2.0;
    Ok(SymMat::new(
        s * (1.0 + k * e0 * e0),
        s * k * e0 * e1,
        s * (1.0 + k * e1 * e1),
    )
    .truncate(dim))
}

pub fn diffusion_matrix(x: Point, xi: Point, p: &ExponentField) -> Result<SymMat> {
    diffusion_matrix_at(x, xi, p.value_at(x), p.grid().dim())
}

/// B(x, ξ) = |ξ|^{p−2} log|ξ| ξ·Dp.
pub fn log_drift_at(x: Point, xi: Point, p: f64, dp: Point) -> Result<f64> {
    let r = nonzero(x, xi)?;
    Ok(r.powf(p - 2.0) * r.ln() * dot(xi, dp))
}

pub fn log_drift(x: Point, xi: Point, p: &ExponentField) -> Result<f64> {
    log_drift_at(x, xi, p.value_at(x), p.gradient_at(x))
}

/// −tr(A(x, η) X) − B(x, η) with explicit exponent value and gradient.
pub fn strong_operator_at(probe: &OperatorProbe, p: f64, dp: Point, dim: usize) -> Result<f64> {
    let a = diffusion_matrix_at(probe.x, probe.gradient, p, dim)?;
    let b = log_drift_at(probe.x, probe.gradient, p, dp)?;
    Ok(-a.trace_product(&probe.hessian.truncate(dim)) - b)
}

/// −Δ_{p(x)} of a smooth probe, with p and Dp interpolated from the field.
pub fn strong_operator(probe: &OperatorProbe, p: &ExponentField) -> Result<f64> {
    strong_operator_at(
        probe,
        p.value_at(probe.x),
        p.gradient_at(probe.x),
        p.grid().dim(),
    )
}

/// Δ_∞: X η · η.
pub fn infinity_laplacian(probe: &OperatorProbe) -> f64 {
    probe.hessian.quad(probe.gradient)
}

/// |ξ|^{p−2}ξ extended by 0 at ξ = 0.
pub fn power_flux(xi: Point, p: f64) -> Point {
    let r = norm(xi);
    if r == 0.0 {
        return [0.0, 0.0];
    }
    let s = r.powf(p - 2.0);
    [s * xi[0], s * xi[1]]
}

/// Conservative staggered divergence −div(|Du|^{p−2}Du) at an interior node.
///
/// Normal differences sit on the half-node; the tangential component is the
/// average of the two adjacent central differences; p is the mean of the two
/// endpoint values.
pub fn divergence_flux_fd(u: &GridFunction, p: &ExponentField, node: usize) -> Result<f64> {
    divergence_flux_fd_strided(u, p, node, 1)
}

/// [`divergence_flux_fd`] on the coarser lattice of spacing `stride·h`
/// through `node`.
pub fn divergence_flux_fd_strided(
    u: &GridFunction,
    p: &ExponentField,
    node: usize,
    stride: usize,
) -> Result<f64> {
    let g = u.grid();
    g.check_same(p.grid(), "divergence_flux_fd")?;
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be >= 1".into()));
    }
    let m = stride as isize;
    let dim = g.dim();
    let reach_ok = node < g.len()
        && (0..dim).all(|axis| {
            g.neighbor(node, axis, m).is_some() && g.neighbor(node, axis, -m).is_some()
        });
    if !reach_ok {
        return Err(Error::Boundary { node });
    }
    let h = g.h() * stride as f64;
    let v = u.values();
    let pv = p.values();

    let mut div = 0.0;
    for axis in 0..dim {
        let other = 1 - axis;
        for side in [1isize, -1] {
            let nb = g.neighbor(node, axis, side * m).expect("checked above");
            let (lo, hi) = if side > 0 { (node, nb) } else { (nb, node) };
            let mut grad = [0.0; 2];
            grad[axis] = (v[hi] - v[lo]) / h;
            if dim == 2 {
                let shift =
                    |k: usize, s: isize| v[g.neighbor(k, other, s * m).expect("interior stencil")];
                grad[other] =
                    (shift(lo, 1) - shift(lo, -1) + shift(hi, 1) - shift(hi, -1)) / (4.0 * h);
            }
            let ph = 0.5 * (pv[lo] + pv[hi]);
            div += side as f64 * power_flux(grad, ph)[axis] / h;
        }
    }
    Ok(-div)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Domain, Grid};
    use rand::{Rng, SeedableRng};

    fn square(n: usize) -> Grid {
        Grid::with_nodes(Domain::rect(0.0, 1.0, 0.0, 1.0), n, n).unwrap()
    }

    #[test]
    fn diffusion_matrix_examples() {
        let g = square(5);
        let p2 = ExponentField::constant(&g, 2.0).unwrap();
        assert_eq!(
            diffusion_matrix([0.5, 0.5], [0.3, -2.0], &p2).unwrap(),
            SymMat::identity()
        );
        let p3 = ExponentField::constant(&g, 3.0).unwrap();
        let a = diffusion_matrix([0.5, 0.5], [1.0, 0.0], &p3).unwrap();
        assert_eq!(a, SymMat::diag(2.0, 1.0));
        assert!(matches!(
            diffusion_matrix([0.1, 0.2], [0.0, 0.0], &p3),
            Err(Error::DegenerateGradient(_))
        ));
    }

    #[test]
    fn log_drift_examples() {
        let g = square(9);
        let pc = ExponentField::constant(&g, 3.0).unwrap();
        assert_eq!(log_drift([0.2, 0.3], [2.0, 1.0], &pc).unwrap(), 0.0);
        let pa = ExponentField::build(&g, |x| 2.0 + x[0]).unwrap();
        assert_eq!(log_drift([0.2, 0.3], [0.6, 0.8], &pa).unwrap(), 0.0);
        let e = std::f64::consts::E;
        for x in [[0.25, 0.5], [0.5, 0.125], [0.875, 0.75]] {
            let b = log_drift(x, [e, 0.0], &pa).unwrap();
            let expected = (x[0] + 1.0).exp();
            assert!((b - expected).abs() < 1e-12 * expected, "{b} vs {expected}");
        }
        assert!(log_drift([0.0; 2], [0.0; 2], &pa).is_err());
    }

    #[test]
    fn strong_operator_examples() {
        let g = square(5);
        let p2 = ExponentField::constant(&g, 2.0).unwrap();
        let probe = OperatorProbe::new([0.3, 0.4], [0.3, 0.4], SymMat::identity());
        assert!((strong_operator(&probe, &p2).unwrap() + 2.0).abs() < 1e-14);
        let p4 = ExponentField::constant(&g, 4.0).unwrap();
        let affine = OperatorProbe::new([0.3, 0.4], [1.0, -2.0], SymMat::default());
        assert_eq!(strong_operator(&affine, &p4).unwrap(), 0.0);
        let flat = OperatorProbe::new([0.3, 0.4], [0.0, 0.0], SymMat::identity());
        assert!(strong_operator(&flat, &p4).is_err());
    }

    #[test]
    fn strong_operator_matches_expanded_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let eta = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let x = SymMat::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let p = rng.gen_range(1.1..5.0);
            let dp = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let probe = OperatorProbe::new([0.0; 2], eta, x);
            let r = norm(eta);
            let lap = x.a + x.c;
            let inf = infinity_laplacian(&probe);
            let expanded = -r.powf(p - 2.0) * (lap + (p - 2.0) * inf / (r * r))
                - r.powf(p - 2.0) * dot(dp, eta) * r.ln();
            let direct = strong_operator_at(&probe, p, dp, 2).unwrap();
            assert!((direct - expanded).abs() <= 1e-10 * (1.0 + expanded.abs()));
        }
    }

    #[test]
    fn diffusion_matrix_eigenvalues_match_dense_solver() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let xi = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let a = diffusion_matrix_at([0.0; 2], xi, 2.5, 2).unwrap();
            let m = nalgebra::Matrix2::new(a.a, a.b, a.b, a.c);
            let mut eig: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            let s = norm(xi).powf(0.5);
            assert!((eig[0] - s).abs() < 1e-10 * s.max(1.0));
            assert!((eig[1] - 1.5 * s).abs() < 1e-10 * s.max(1.0));
            assert!(eig[0] > 0.0);
        }
    }

    #[test]
    fn diffusion_matrix_minimum_eigenvalue() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let xi = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let p = rng.gen_range(1.05..6.0);
            let a = diffusion_matrix_at([0.0; 2], xi, p, 2).unwrap();
            let lam = a.eigenvalues()[0];
            let expected = 1.0f64.min(p - 1.0) * norm(xi).powf(p - 2.0);
            assert!((lam - expected).abs() < 1e-9 * expected.max(1.0));
        }
    }

    #[test]
    fn infinity_laplacian_examples() {
        let z = OperatorProbe::new([0.0; 2], [0.0; 2], SymMat::new(1.0, 2.0, 3.0));
        assert_eq!(infinity_laplacian(&z), 0.0);
        let e = OperatorProbe::new([0.0; 2], [1.0, 0.0], SymMat::identity());
        assert_eq!(infinity_laplacian(&e), 1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let m = SymMat::new(rng.gen(), rng.gen(), rng.gen());
            let eta = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let rows = m.rows();
            let mut naive = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    naive += rows[i][j] * eta[i] * eta[j];
                }
            }
            let got = infinity_laplacian(&OperatorProbe::new([0.0; 2], eta, m));
            assert!((got - naive).abs() < 1e-14);
        }
    }

    #[test]
    fn from_rows_rejects_asymmetry() {
        assert!(SymMat::from_rows([[1.0, 2.0], [2.0 + 1e-6, 1.0]]).is_err());
        assert!(SymMat::from_rows([[1.0, 2.0], [2.0, 1.0]]).is_ok());
    }

    #[test]
    fn flux_divergence_affine_and_laplace() {
        let g = square(17);
        let p = ExponentField::constant(&g, 3.5).unwrap();
        let u = GridFunction::from_fn(&g, |x| 2.0 * x[0] - x[1] + 1.0).unwrap();
        for k in g.interior_nodes() {
            assert!(divergence_flux_fd(&u, &p, k).unwrap().abs() < 1e-10);
        }
        let p2 = ExponentField::constant(&g, 2.0).unwrap();
        let w = GridFunction::from_fn(&g, |x| (x[0] * 2.0).sin() * x[1].cos()).unwrap();
        let h = g.h();
        for k in g.interior_nodes() {
            let v = w.values();
            let five = -(v[k + 1] + v[k - 1] + v[k + 17] + v[k - 17] - 4.0 * v[k]) / (h * h);
            assert!((divergence_flux_fd(&w, &p2, k).unwrap() - five).abs() < 1e-9);
        }
        assert!(matches!(
            divergence_flux_fd(&w, &p2, 0),
            Err(Error::Boundary { node: 0 })
        ));
    }

    #[test]
    fn flux_divergence_converges_to_strong_operator() {
        // u = x² + y with p = 2 + x at (0.5, 0.5)
        let x0 = [0.5, 0.5];
        let probe = OperatorProbe::new(x0, [1.0, 1.0], SymMat::diag(2.0, 0.0));
        let exact = strong_operator_at(&probe, 2.5, [1.0, 0.0], 2).unwrap();
        let errs: Vec<f64> = [17usize, 33, 65]
            .iter()
            .map(|&n| {
                let g = square(n);
                let p = ExponentField::build(&g, |x| 2.0 + x[0]).unwrap();
                let u = GridFunction::from_fn(&g, |x| x[0] * x[0] + x[1]).unwrap();
                let k = g.index(n / 2, n / 2);
                (divergence_flux_fd(&u, &p, k).unwrap() - exact).abs()
            })
            .collect();
        let order = ((errs[0] / errs[1]).log2() + (errs[1] / errs[2]).log2()) / 2.0;
        assert!(order >= 1.8, "{errs:?}");
    }

    #[test]
    fn flux_monotonicity_constant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut c_min = f64::INFINITY;
        for _ in 0..2000 {
            let p = rng.gen_range(1.3..4.0);
            let a = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let b = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let (fa, fb) = (power_flux(a, p), power_flux(b, p));
            let d = [a[0] - b[0], a[1] - b[1]];
            let lhs = dot([fa[0] - fb[0], fa[1] - fb[1]], d);
            let rhs = (norm(a) + norm(b)).powf(p - 2.0) * dot(d, d);
            if rhs > 1e-12 {
                c_min = c_min.min(lhs / rhs);
            }
        }
        assert!(c_min > 0.0, "{c_min}");
    }
}
