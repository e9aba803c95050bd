//! Variational discretization of the p(x)-Dirichlet energy and the weak form.
//!
//! In 1D each interval carries one quadrature point with weight h and the
//! mean exponent of its endpoints. In 2D each cell is split into four corner
//! triangles of weight h²/4; the triangle at a corner pairs the x-edge and the
//! y-edge meeting there, and uses the mean exponent of the cell's corners.
//!
//! The discrete operator is (−Δ_p^h u)_i = (1/w_i) ∂J/∂u_i with w_i the
//! trapezoid weight. Summation by parts is then exact:
//! Σ_q w_q F(G_q u)·G_q φ = Σ_i w_i (−Δ_p^h u)_i φ_i.

use crate::error::{Error, Result};
use crate::exponent::ExponentField;
use crate::grid::{dot, Grid, GridFunction, NeumaierSum, Point};
use crate::source::SourceSpec;

/// Energy density Φ(|ξ|, p) whose gradient in ξ is `scale(|ξ|, p)·ξ`.
pub trait FluxModel: Sync {
    fn density(&self, s: f64, p: f64) -> f64;
    fn scale(&self, s: f64, p: f64) -> f64;
    /// Largest eigenvalue of the flux Jacobian at |ξ| = s > 0.
    fn slope(&self, s: f64, p: f64) -> f64;
}

/// (1/p)(δ² + |ξ|²)^{p/2}; δ = 0 gives the p(x)-Dirichlet energy, with the
/// flux extended by 0 at ξ = 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PowerFlux {
    pub delta: f64,
}

impl FluxModel for PowerFlux {
    fn density(&self, s: f64, p: f64) -> f64 {
        (self.delta * self.delta + s * s).powf(0.5 * p) / p
    }

    fn scale(&self, s: f64, p: f64) -> f64 {
        let r2 = self.delta * self.delta + s * s;
        if r2 == 0.0 {
            0.0
        } else {
            r2.powf(0.5 * (p - 2.0))
        }
    }

    fn slope(&self, s: f64, p: f64) -> f64 {
        let r2 = self.delta * self.delta + s * s;
        if r2 == 0.0 {
            return if p >= 2.0 { 0.0 } else { f64::INFINITY };
        }
        self.scale(s, p) * 1.0f64.max(1.0 + (p - 2.0) * s * s / r2)
    }
}

/// Piecewise density: |ξ|^p/p up to β, then |ξ| − (β − β^p/p).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClrFlux {
    pub beta: f64,
}

impl ClrFlux {
    /// C(β, p) = β − β^p/p, the value making the density continuous at β.
    pub fn continuity_constant(beta: f64, p: f64) -> f64 {
        beta - beta.powf(p) / p
    }
}

impl FluxModel for ClrFlux {
    fn density(&self, s: f64, p: f64) -> f64 {
        if s <= self.beta {
            s.powf(p) / p
        } else {
            s - Self::continuity_constant(self.beta, p)
        }
    }

    fn scale(&self, s: f64, p: f64) -> f64 {
        if s == 0.0 {
            0.0
        } else if s <= self.beta {
            s.powf(p - 2.0)
        } else {
            1.0 / s
        }
    }

    fn slope(&self, s: f64, p: f64) -> f64 {
        if s == 0.0 {
            return if p >= 2.0 { 0.0 } else { f64::INFINITY };
        }
        if s <= self.beta {
            1.0f64.max(p - 1.0) * s.powf(p - 2.0)
        } else {
            1.0 / s
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct QuadPoint {
    weight: f64,
    p: f64,
    x_edge: (usize, usize),
    y_edge: Option<(usize, usize)>,
}

/// Quadrature layout of the discrete energy on one grid and exponent.
#[derive(Clone, Debug)]
pub struct VariationalScheme {
    grid: Grid,
    quad: Vec<QuadPoint>,
    node_weight: Vec<f64>,
}

impl VariationalScheme {
    pub fn new(p: &ExponentField) -> Self {
        Self::from_values(p.grid(), p.values())
    }

    /// `p` holds one exponent per node; values are trusted to exceed 1.
    pub fn from_values(grid: &Grid, p: &[f64]) -> Self {
        let h = grid.h();
        let [nx, ny] = grid.shape();
        let mut quad = Vec::new();
        if grid.dim() == 1 {
            for i in 0..nx - 1 {
                quad.push(QuadPoint {
                    weight: h,
                    p: 0.5 * (p[i] + p[i + 1]),
                    x_edge: (i, i + 1),
                    y_edge: None,
                });
            }
        } else {
            let w = 0.25 * h * h;
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let a = grid.index(i, j);
                    let b = a + 1;
                    let c = a + nx;
                    let d = c + 1;
                    let pc = 0.25 * (p[a] + p[b] + p[c] + p[d]);
                    for (xe, ye) in [
                        ((a, b), (a, c)),
                        ((a, b), (b, d)),
                        ((c, d), (a, c)),
                        ((c, d), (b, d)),
                    ] {
                        quad.push(QuadPoint {
                            weight: w,
                            p: pc,
                            x_edge: xe,
                            y_edge: Some(ye),
                        });
                    }
                }
            }
        }
        let node_weight = grid.nodes().map(|k| grid.weight(k)).collect();
        VariationalScheme {
            grid: grid.clone(),
            quad,
            node_weight,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn node_weights(&self) -> &[f64] {
        &self.node_weight
    }

    fn gradient_at(&self, q: &QuadPoint, u: &[f64]) -> Point {
        let h = self.grid.h();
        let gx = (u[q.x_edge.1] - u[q.x_edge.0]) / h;
        let gy = q.y_edge.map_or(0.0, |(a, b)| (u[b] - u[a]) / h);
        [gx, gy]
    }

    /// J(u) = Σ_q w_q Φ(|G_q u|, p_q).
    pub fn energy(&self, model: &impl FluxModel, u: &[f64]) -> f64 {
        let mut sum = NeumaierSum::default();
        for q in &self.quad {
            let g = self.gradient_at(q, u);
            sum.add(q.weight * model.density(dot(g, g).sqrt(), q.p));
        }
        sum.total()
    }

    /// ∂J/∂u at every node.
    pub fn energy_gradient(&self, model: &impl FluxModel, u: &[f64]) -> Vec<f64> {
        let h = self.grid.h();
        let mut out = vec![0.0; u.len()];
        for q in &self.quad {
            let g = self.gradient_at(q, u);
            let s = model.scale(dot(g, g).sqrt(), q.p) * q.weight / h;
            let (a, b) = q.x_edge;
            out[b] += s * g[0];
            out[a] -= s * g[0];
            if let Some((a, b)) = q.y_edge {
                out[b] += s * g[1];
                out[a] -= s * g[1];
            }
        }
        out
    }

    /// Σ_q w_q F(G_q u)·G_q φ.
    pub fn pairing(&self, model: &impl FluxModel, u: &[f64], phi: &[f64]) -> f64 {
        let mut sum = NeumaierSum::default();
        for q in &self.quad {
            let g = self.gradient_at(q, u);
            let s = model.scale(dot(g, g).sqrt(), q.p);
            sum.add(q.weight * s * dot(g, self.gradient_at(q, phi)));
        }
        sum.total()
    }

    /// (1/w_i) ∂J/∂u_i at every node; at boundary nodes this is the natural
    /// (Neumann) residual.
    pub fn apply(&self, model: &impl FluxModel, u: &[f64]) -> Vec<f64> {
        self.energy_gradient(model, u)
            .iter()
            .zip(&self.node_weight)
            .map(|(g, w)| g / w)
            .collect()
    }

    /// J(u + αd) − J(u) for the power energy, evaluated per quadrature point
    /// as A^{p/2}·expm1((p/2)·ln1p((B − A)/A))/p so that tiny steps do not
    /// cancel.
    pub fn power_energy_change(&self, model: &PowerFlux, u: &[f64], d: &[f64], alpha: f64) -> f64 {
        let d2 = model.delta * model.delta;
        let mut sum = NeumaierSum::default();
        for q in &self.quad {
            let g = self.gradient_at(q, u);
            let e = self.gradient_at(q, d);
            let a = d2 + dot(g, g);
            let diff = alpha * (2.0 * dot(g, e) + alpha * dot(e, e));
            let change = if a == 0.0 {
                diff.max(0.0).powf(0.5 * q.p) / q.p
            } else {
                a.powf(0.5 * q.p) * (0.5 * q.p * (diff / a).ln_1p()).exp_m1() / q.p
            };
            sum.add(q.weight * change);
        }
        sum.total()
    }

    /// Calls `visit(a, b, w_q·c_q/h²)` for each edge (a, b) of every
    /// quadrature point, where c_q = scale(max(|G_q u|, floor), p_q) is the
    /// diffusivity frozen at u. Summing `visit` contributions as
    /// (e_a − e_b)(e_a − e_b)ᵀ gives the Hessian of Σ_q w_q c_q |G_q v|²/2.
    pub fn lagged_edges(
        &self,
        model: &impl FluxModel,
        u: &[f64],
        floor: f64,
        mut visit: impl FnMut(usize, usize, f64),
    ) {
        let h2 = self.grid.h() * self.grid.h();
        for q in &self.quad {
            let g = self.gradient_at(q, u);
            let c = model.scale(dot(g, g).sqrt().max(floor), q.p);
            let wt = q.weight * c / h2;
            visit(q.x_edge.0, q.x_edge.1, wt);
            if let Some((a, b)) = q.y_edge {
                visit(a, b, wt);
            }
        }
    }

    /// Largest flux slope over quadrature points with nonzero gradient.
    pub fn max_slope(&self, model: &impl FluxModel, u: &[f64]) -> f64 {
        self.quad
            .iter()
            .filter_map(|q| {
                let g = self.gradient_at(q, u);
                let s = dot(g, g).sqrt();
                (s > 0.0).then(|| model.slope(s, q.p))
            })
            .fold(0.0, f64::max)
    }
}

/// −Δ_{p(x)}^h u at every node for the unregularized energy.
pub fn discrete_operator(u: &GridFunction, p: &ExponentField) -> Result<GridFunction> {
    u.grid().check_same(p.grid(), "discrete_operator")?;
    let scheme = VariationalScheme::new(p);
    GridFunction::new(
        u.grid().clone(),
        scheme.apply(&PowerFlux::default(), u.values()),
    )
}

/// Rejects test functions that are negative somewhere or nonzero on ∂Ω.
pub fn validate_test_function(phi: &GridFunction) -> Result<()> {
    let g = phi.grid();
    for k in g.nodes() {
        let v = phi.get(k);
        if v < 0.0 {
            return Err(Error::InvalidTestFunction(format!(
                "negative value {v} at node {k} {:?}",
                g.point(k)
            )));
        }
        if g.is_boundary(k) && v.abs() > 1e-14 {
            return Err(Error::InvalidTestFunction(format!(
                "nonzero boundary value {v} at node {k} {:?}",
                g.point(k)
            )));
        }
    }
    Ok(())
}

/// Σ_i w_i f(x_i, u_i, Du_i) φ_i with nodal central-difference gradients.
pub fn source_pairing(u: &GridFunction, phi: &GridFunction, f: &SourceSpec) -> Result<f64> {
    u.grid().check_same(phi.grid(), "source pairing")?;
    let g = u.grid();
    let mut sum = NeumaierSum::default();
    for k in g.nodes() {
        let ph = phi.get(k);
        if ph != 0.0 {
            sum.add(g.weight(k) * f.eval(g.point(k), u.get(k), u.nodal_gradient(k)) * ph);
        }
    }
    Ok(sum.total())
}

/// R = Σ_q w F(Du)·Dφ − Σ_i w_i f(x_i, u_i, Du_i) φ_i.
///
/// R ≥ −tol certifies the supersolution inequality against φ; the subsolution
/// inequality is R ≤ tol.
pub fn weak_residual(
    u: &GridFunction,
    phi: &GridFunction,
    p: &ExponentField,
    f: &SourceSpec,
) -> Result<f64> {
    Ok(weak_residuals(u, std::slice::from_ref(phi), p, f)?[0])
}

/// [`weak_residual`] for a battery, sharing one gradient evaluation.
pub fn weak_residuals(
    u: &GridFunction,
    battery: &[GridFunction],
    p: &ExponentField,
    f: &SourceSpec,
) -> Result<Vec<f64>> {
    u.grid().check_same(p.grid(), "weak residual")?;
    let scheme = VariationalScheme::new(p);
    let grad = scheme.energy_gradient(&PowerFlux::default(), u.values());
    battery
        .iter()
        .map(|phi| {
            u.grid().check_same(phi.grid(), "weak residual")?;
            validate_test_function(phi)?;
            let mut flux = NeumaierSum::default();
            for (g, v) in grad.iter().zip(phi.values()) {
                flux.add(g * v);
            }
            Ok(flux.total() - source_pairing(u, phi, f)?)
        })
        .collect()
}

/// ‖φ‖_{C¹} = max|φ| + max|Dφ| with nodal gradients.
pub fn c1_norm(phi: &GridFunction) -> f64 {
    let g = phi.grid();
    let dmax = g
        .nodes()
        .map(|k| crate::grid::norm(phi.nodal_gradient(k)))
        .fold(0.0, f64::max);
    phi.max_abs() + dmax
}

/// 10·(1 + ‖φ‖_{C¹})·h.
pub fn default_weak_tolerance(phi: &GridFunction) -> f64 {
    10.0 * (1.0 + c1_norm(phi)) * phi.grid().h()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Domain;
    use crate::operator::{divergence_flux_fd, strong_operator_at};
    use crate::profiles::Profile;
    use rand::{Rng, SeedableRng};

    type ExponentCase = (Profile, fn(Point) -> f64, fn(Point) -> Point);

    fn line(n: usize) -> Grid {
        Grid::with_nodes(Domain::interval(0.0, 1.0), n, 1).unwrap()
    }

    fn square(n: usize) -> Grid {
        Grid::with_nodes(Domain::rect(0.0, 1.0, 0.0, 1.0), n, n).unwrap()
    }

    #[test]
    fn laplacian_reduces_to_five_point_stencil() {
        let g = square(9);
        let p = ExponentField::constant(&g, 2.0).unwrap();
        let u = GridFunction::from_fn(&g, |x| (3.0 * x[0]).sin() + x[1] * x[1] * x[0]).unwrap();
        let l = discrete_operator(&u, &p).unwrap();
        let h2 = g.h() * g.h();
        let v = u.values();
        for k in g.interior_nodes() {
            let five = -(v[k + 1] + v[k - 1] + v[k + 9] + v[k - 9] - 4.0 * v[k]) / h2;
            assert!((l.get(k) - five).abs() < 1e-9 * (1.0 + five.abs()));
        }
    }

    #[test]
    fn one_dimensional_operator_matches_flux_divergence() {
        let g = line(33);
        let p = ExponentField::build(&g, |x| 2.0 + x[0]).unwrap();
        let u = GridFunction::from_fn(&g, |x| x[0] * x[0] + 0.3 * x[0]).unwrap();
        let l = discrete_operator(&u, &p).unwrap();
        for k in g.interior_nodes() {
            assert!((l.get(k) - divergence_flux_fd(&u, &p, k).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn energy_gradient_matches_finite_differences() {
        let g = square(7);
        let p = ExponentField::build(&g, |x| 1.6 + x[0] + 0.5 * x[1]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let u: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scheme = VariationalScheme::new(&p);
        for model in [PowerFlux { delta: 0.0 }, PowerFlux { delta: 0.1 }] {
            let grad = scheme.energy_gradient(&model, &u);
            for k in [8usize, 17, 24, 40] {
                let e = 1e-6;
                let mut up = u.clone();
                let mut um = u.clone();
                up[k] += e;
                um[k] -= e;
                let fd = (scheme.energy(&model, &up) - scheme.energy(&model, &um)) / (2.0 * e);
                assert!(
                    (fd - grad[k]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "{fd} vs {}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn energy_change_matches_direct_difference() {
        let g = square(9);
        let p = ExponentField::build(&g, |x| 1.5 + 2.0 * x[0]).unwrap();
        let scheme = VariationalScheme::new(&p);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let u: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for model in [PowerFlux { delta: 0.0 }, PowerFlux { delta: 0.3 }] {
            let moved: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + 0.3 * b).collect();
            let direct = scheme.energy(&model, &moved) - scheme.energy(&model, &u);
            let change = scheme.power_energy_change(&model, &u, &d, 0.3);
            assert!((direct - change).abs() < 1e-12 * (1.0 + direct.abs()));
            // first-order behaviour for tiny steps, where the direct difference is noise
            let grad = scheme.energy_gradient(&model, &u);
            let slope: f64 = grad.iter().zip(&d).map(|(a, b)| a * b).sum();
            let tiny = scheme.power_energy_change(&model, &u, &d, 1e-12);
            assert!((tiny / 1e-12 - slope).abs() < 1e-6 * (1.0 + slope.abs()));
        }
    }

    #[test]
    fn summation_by_parts_is_exact() {
        let g = square(11);
        let p = ExponentField::build(&g, |x| 2.5 + 0.5 * (3.0 * x[1]).sin()).unwrap();
        let scheme = VariationalScheme::new(&p);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let u: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let phi: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = PowerFlux::default();
        let lhs = scheme.pairing(&m, &u, &phi);
        let lu = scheme.apply(&m, &u);
        let rhs: f64 = (0..g.len())
            .map(|k| scheme.node_weights()[k] * lu[k] * phi[k])
            .sum();
        assert!((lhs - rhs).abs() < 1e-11 * (1.0 + lhs.abs()));
    }

    #[test]
    fn discrete_operator_is_monotone() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for dim in [1, 2] {
            let g = if dim == 1 { line(40) } else { square(12) };
            for _ in 0..50 {
                let base = rng.gen_range(1.2..3.5);
                let p =
                    ExponentField::build(&g, |x| base + 0.5 * x[0] * x[1] + 0.3 * x[0]).unwrap();
                let scheme = VariationalScheme::new(&p);
                let u: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let v: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let m = PowerFlux::default();
                let (gu, gv) = (
                    scheme.energy_gradient(&m, &u),
                    scheme.energy_gradient(&m, &v),
                );
                let pair: f64 = (0..g.len()).map(|k| (gu[k] - gv[k]) * (u[k] - v[k])).sum();
                assert!(pair >= 0.0, "{pair}");
            }
        }
    }

    fn operator_error(
        n: usize,
        u: &Profile,
        pexpr: fn(Point) -> f64,
        dpexpr: fn(Point) -> Point,
        x0: Point,
    ) -> f64 {
        let g = square(n);
        let p = ExponentField::build(&g, pexpr).unwrap();
        let uf = u.sample(&g).unwrap();
        let l = discrete_operator(&uf, &p).unwrap();
        let k = g
            .nodes()
            .find(|&k| crate::grid::norm(crate::grid::sub(g.point(k), x0)) < 1e-12)
            .unwrap();
        let exact = strong_operator_at(&u.probe(x0, 2), pexpr(x0), dpexpr(x0), 2).unwrap();
        (l.get(k) - exact).abs()
    }

    #[test]
    fn two_dimensional_operator_is_second_order() {
        let cases: [ExponentCase; 3] = [
            (
                Profile::Quadratic {
                    center: [-0.5, -0.3],
                    coeff: 1.0,
                    offset: 0.0,
                },
                |x| 2.0 + x[0],
                |_| [1.0, 0.0],
            ),
            (
                Profile::Sine {
                    amplitude: 1.0,
                    frequency: 0.4,
                    offset: 0.0,
                },
                |x| 3.0 + 0.5 * x[0] * x[1],
                |x| [0.5 * x[1], 0.5 * x[0]],
            ),
            (
                Profile::Radial {
                    center: [-0.2, -0.4],
                    coeff: 0.5,
                    power: 3.0,
                    offset: 0.0,
                },
                |x| 1.6 + 0.3 * (x[0] + 2.0 * x[1]),
                |_| [0.3, 0.6],
            ),
        ];
        for (u, pf, dpf) in &cases {
            let errs: Vec<f64> = [17, 33, 65]
                .iter()
                .map(|&n| operator_error(n, u, *pf, *dpf, [0.5, 0.5]))
                .collect();
            let order = (errs[0] / errs[2]).log2() / 2.0;
            assert!(order >= 1.8, "{u:?}: {errs:?}");
        }
    }

    #[test]
    fn weak_residual_examples() {
        let g = line(65);
        let p = ExponentField::constant(&g, 2.0).unwrap();
        let phi =
            GridFunction::from_fn(&g, |x| (std::f64::consts::PI * x[0]).sin().max(0.0)).unwrap();
        let phi = GridFunction::new(g.clone(), {
            let mut v = phi.into_values();
            let n = v.len();
            v[0] = 0.0;
            v[n - 1] = 0.0;
            v
        })
        .unwrap();
        let zero = GridFunction::constant(&g, 0.0);
        assert_eq!(
            weak_residual(&zero, &phi, &p, &SourceSpec::zero()).unwrap(),
            0.0
        );

        let gg = Grid::with_nodes(Domain::interval(-1.0, 1.0), 65, 1).unwrap();
        let pp = ExponentField::constant(&gg, 2.0).unwrap();
        let u = GridFunction::from_fn(&gg, |x| 1.0 - x[0] * x[0]).unwrap();
        let bump = GridFunction::from_fn(&gg, |x| (1.0 - x[0] * x[0]).powi(2)).unwrap();
        let r = weak_residual(&u, &bump, &pp, &SourceSpec::zero()).unwrap();
        // −u″ = 2 so R = 2∫φ
        assert!((r - 2.0 * bump.integral()).abs() < 1e-10);

        let neg = phi.map(|v| -v).unwrap();
        assert!(matches!(
            weak_residual(&zero, &neg, &p, &SourceSpec::zero()),
            Err(Error::InvalidTestFunction(_))
        ));
        let lifted = phi.map(|v| v + 1.0).unwrap();
        assert!(matches!(
            weak_residual(&zero, &lifted, &p, &SourceSpec::zero()),
            Err(Error::InvalidTestFunction(_))
        ));
    }

    #[test]
    fn clr_density_is_continuous_at_threshold() {
        for beta in [0.5, 1.0, 2.0] {
            for p in [1.001, 1.5, 2.0] {
                let m = ClrFlux { beta };
                let below = m.density(beta, p);
                let above = m.density(beta * (1.0 + 1e-12), p);
                assert!((below - above).abs() < 1e-9);
            }
        }
        assert_eq!(ClrFlux::continuity_constant(3.0, 1.0), 0.0);
        assert!((ClrFlux::continuity_constant(1.0, 1.6) - (1.0 - 1.0 / 1.6)).abs() < 1e-15);
        assert_eq!(ClrFlux::continuity_constant(2.0, 2.0), 0.0);
    }
}
