//! Inf- and sup-convolutions u_ε(x) = min_y [u(y) + |x − y|^q / (q ε^{q−1})]
//! over the grid nodes, with argmin tracking and the lemma checks that the
//! regularization relies on.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{norm, sub, Grid, GridFunction, Point};
use crate::operator::{OperatorProbe, SymMat};
use crate::report::CheckReport;
use crate::source::SourceSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvolutionResult {
    pub u: GridFunction,
    pub u_eps: GridFunction,
    /// Node index of the minimizer (maximizer for sup-convolutions).
    pub argmin: Vec<usize>,
    pub epsilon: f64,
    pub q: f64,
    pub r_eps: f64,
    pub oscillation: f64,
    /// `true` for the inf-convolution, `false` for the sup-convolution.
    pub lower: bool,
}

/// Penalty |z|^q / (q ε^{q−1}).
pub fn kernel(z: Point, epsilon: f64, q: f64) -> f64 {
    let r = norm(z);
    if q == 2.0 {
        r * r / (2.0 * epsilon)
    } else {
        r.powf(q) / (q * epsilon.powf(q - 1.0))
    }
}

/// r_ε = (q ε^{q−1} osc u)^{1/q}; no minimizer lies farther than r_ε from x.
pub fn effective_radius(epsilon: f64, q: f64, oscillation: f64) -> f64 {
    (q * epsilon.powf(q - 1.0) * oscillation).powf(1.0 / q)
}

fn check_params(epsilon: f64, q: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    if !(q >= 2.0) || !q.is_finite() {
        return Err(Error::InvalidParameter(format!("q must be >= 2, got {q}")));
    }
    Ok(())
}

/// Exact discrete inf-convolution.
///
/// Only nodes within r_ε of x are scanned; all others are strictly worse than
/// y = x, so the result equals the full brute-force minimum. Ties go to the
/// lexicographically smallest coordinate.
pub fn inf_convolve(u: &GridFunction, epsilon: f64, q: f64) -> Result<ConvolutionResult> {
    check_params(epsilon, q)?;
    let grid = u.grid();
    let osc = u.oscillation();
    let r = effective_radius(epsilon, q, osc);
    let h = grid.h();
    let [nx, ny] = grid.shape();
    let reach = (r / h + 1e-9).floor() as usize;
    let vals = u.values();

    let pairs: Vec<(f64, usize)> = grid
        .nodes()
        .into_par_iter()
        .map(|k| {
            let (i, j) = grid.ij(k);
            let x = grid.point(k);
            let (i0, i1) = (i.saturating_sub(reach), (i + reach).min(nx - 1));
            let (j0, j1) = (j.saturating_sub(reach), (j + reach).min(ny - 1));
            let mut best = (f64::INFINITY, k);
            for a in i0..=i1 {
                for b in j0..=j1 {
                    let y = grid.index(a, b);
                    let v = vals[y] + kernel(sub(x, grid.point(y)), epsilon, q);
                    if v < best.0 {
                        best = (v, y);
                    }
                }
            }
            best
        })
        .collect();

    let (values, argmin): (Vec<f64>, Vec<usize>) = pairs.into_iter().unzip();
    Ok(ConvolutionResult {
        u: u.clone(),
        u_eps: GridFunction::new(grid.clone(), values)?,
        argmin,
        epsilon,
        q,
        r_eps: r,
        oscillation: osc,
        lower: true,
    })
}

/// u^ε = −(−u)_ε.
pub fn sup_convolve(u: &GridFunction, epsilon: f64, q: f64) -> Result<ConvolutionResult> {
    let neg = u.map(|v| -v)?;
    let inner = inf_convolve(&neg, epsilon, q)?;
    Ok(ConvolutionResult {
        u: u.clone(),
        u_eps: inner.u_eps.map(|v| -v)?,
        lower: false,
        ..inner
    })
}

impl ConvolutionResult {
    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    fn sign(&self) -> f64 {
        if self.lower {
            1.0
        } else {
            -1.0
        }
    }

    /// Nodes of Ω_{r(ε)}: distance to the boundary strictly above r_ε.
    pub fn shrunken_nodes(&self) -> Vec<usize> {
        let g = self.grid();
        g.nodes()
            .filter(|&k| g.boundary_distance(k) > self.r_eps)
            .collect()
    }

    pub fn in_shrunken(&self, node: usize) -> bool {
        self.grid().boundary_distance(node) > self.r_eps
    }

    /// x − x_ε.
    pub fn displacement(&self, node: usize) -> Point {
        let g = self.grid();
        sub(g.point(node), g.point(self.argmin[node]))
    }

    /// CSV: `x[,y],u,u_eps,argmin_x[,argmin_y],dist`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let g = self.grid();
        let mut w = csv::Writer::from_writer(out);
        if g.dim() == 1 {
            w.write_record(["x", "u", "u_eps", "argmin_x", "dist"])?;
        } else {
            w.write_record(["x", "y", "u", "u_eps", "argmin_x", "argmin_y", "dist"])?;
        }
        for k in g.nodes() {
            let x = g.point(k);
            let y = g.point(self.argmin[k]);
            let mut rec = vec![x[0].to_string()];
            if g.dim() == 2 {
                rec.push(x[1].to_string());
            }
            rec.push(self.u.get(k).to_string());
            rec.push(self.u_eps.get(k).to_string());
            rec.push(y[0].to_string());
            if g.dim() == 2 {
                rec.push(y[1].to_string());
            }
            rec.push(norm(sub(x, y)).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// u_ε ≤ u (u^ε ≥ u for sup-convolutions) at every node, exactly.
pub fn dominance_check(res: &ConvolutionResult) -> CheckReport {
    let mut report = CheckReport::new(format!("dominance eps={}", res.epsilon), 0.0);
    let s = res.sign();
    let worst = res
        .grid()
        .nodes()
        .map(|k| (s * (res.u.get(k) - res.u_eps.get(k)), k))
        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
    let k = worst.1;
    report.push_margin(
        format!("u_eps vs u, worst node {k}"),
        res.u_eps.get(k),
        res.u.get(k),
        worst.0,
    );
    report
}

/// u_{ε₁} ≤ u_{ε₂} ≤ … ≤ u for ε₁ > ε₂ > …, with max|u_{ε_k} − u|
/// non-increasing in k.
pub fn monotone_family_check(u: &GridFunction, epsilons: &[f64], q: f64) -> Result<CheckReport> {
    if epsilons.is_empty() || epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter(format!(
            "epsilons must be strictly decreasing, got {epsilons:?}"
        )));
    }
    let family = epsilons
        .iter()
        .map(|&e| inf_convolve(u, e, q))
        .collect::<Result<Vec<_>>>()?;
    Ok(monotone_family_report(u, &family))
}

fn monotone_family_report(u: &GridFunction, family: &[ConvolutionResult]) -> CheckReport {
    let mut report = CheckReport::new("monotone family", 0.0);
    let min_gap = |a: &GridFunction, b: &GridFunction| {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| y - x)
            .fold(f64::INFINITY, f64::min)
    };
    for pair in family.windows(2) {
        let gap = min_gap(&pair[0].u_eps, &pair[1].u_eps);
        report.push_margin(
            format!("u_eps({}) <= u_eps({})", pair[0].epsilon, pair[1].epsilon),
            0.0,
            0.0,
            gap,
        );
    }
    if let Some(last) = family.last() {
        let gap = min_gap(&last.u_eps, u);
        report.push_margin(format!("u_eps({}) <= u", last.epsilon), 0.0, 0.0, gap);
    }
    let dev: Vec<f64> = family
        .iter()
        .map(|r| {
            r.u_eps
                .values()
                .iter()
                .zip(u.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    for (k, w) in dev.windows(2).enumerate() {
        report.push_at_most(
            format!(
                "max|u_eps - u| at eps={} vs {}",
                family[k + 1].epsilon,
                family[k].epsilon
            ),
            w[1],
            w[0],
        );
    }
    report
}

/// Axis and diagonal step offsets in grid units.
fn stencil_directions(dim: usize) -> Vec<(isize, isize)> {
    if dim == 1 {
        vec![(1, 0)]
    } else {
        vec![(1, 0), (0, 1), (1, 1), (1, -1)]
    }
}

fn second_difference(f: &GridFunction, node: usize, d: (isize, isize)) -> Option<f64> {
    let g = f.grid();
    let a = g.offset(node, d.0, d.1)?;
    let b = g.offset(node, -d.0, -d.1)?;
    let len2 = (d.0 * d.0 + d.1 * d.1) as f64 * g.h() * g.h();
    Some((f.get(a) + f.get(b) - 2.0 * f.get(node)) / len2)
}

/// The semiconcavity constant C: second differences of u_ε are at most 2C.
///
/// For q = 2 this is 1/(2ε). For q > 2 the paraboloid curvature is evaluated
/// at radius max(2r_ε, r_ε + √2 h), which covers every diagonal stencil.
pub fn semiconcavity_constant(epsilon: f64, q: f64, r_eps: f64, h: f64) -> f64 {
    if q == 2.0 {
        1.0 / (2.0 * epsilon)
    } else {
        let reach = (2.0 * r_eps).max(r_eps + std::f64::consts::SQRT_2 * h);
        (q - 1.0) / (2.0 * epsilon) * (reach / epsilon).powf(q - 2.0)
    }
}

/// Every axis and diagonal second difference of u_ε is ≤ 2C (≥ −2C for
/// sup-convolutions), tolerance 10h.
pub fn semiconcavity_check(res: &ConvolutionResult) -> CheckReport {
    let g = res.grid();
    let c = semiconcavity_constant(res.epsilon, res.q, res.r_eps, g.h());
    let mut report = CheckReport::new(format!("semiconcavity eps={}", res.epsilon), 10.0 * g.h());
    report.note(format!("C = {c}"));
    let s = res.sign();
    let mut worst: Option<(f64, usize)> = None;
    for k in g.nodes() {
        for d in stencil_directions(g.dim()) {
            if let Some(sd) = second_difference(&res.u_eps, k, d) {
                let v = s * sd;
                if worst.is_none_or(|(w, _)| v > w) {
                    worst = Some((v, k));
                }
            }
        }
    }
    match worst {
        Some((v, k)) => report.push_at_most(format!("max second difference, node {k}"), v, 2.0 * c),
        None => report.note("grid too small for second differences"),
    }
    report
}

/// Discrete Lipschitz constant over node pairs (axis and diagonal steps)
/// whose base node satisfies `keep`.
fn lipschitz_constant(f: &GridFunction, keep: impl Fn(usize) -> bool) -> f64 {
    let g = f.grid();
    let mut lip: f64 = 0.0;
    for k in g.nodes().filter(|&k| keep(k)) {
        for d in stencil_directions(g.dim()) {
            for d in [d, (-d.0, -d.1)] {
                if let Some(n) = g.offset(k, d.0, d.1) {
                    let len = ((d.0 * d.0 + d.1 * d.1) as f64).sqrt() * g.h();
                    lip = lip.max((f.get(n) - f.get(k)).abs() / len);
                }
            }
        }
    }
    lip
}

/// Lip(u_ε on Ω_r) ≤ Lip(u) + r_ε^{q−1}/ε^{q−1}, tolerance 10h.
pub fn lipschitz_check(res: &ConvolutionResult) -> CheckReport {
    let g = res.grid();
    let lip_u = lipschitz_constant(&res.u, |_| true);
    let lip_e = lipschitz_constant(&res.u_eps, |k| res.in_shrunken(k));
    let extra = (res.r_eps / res.epsilon).powf(res.q - 1.0);
    let mut report = CheckReport::new(format!("lipschitz eps={}", res.epsilon), 10.0 * g.h());
    report.push_at_most("Lip(u_eps) <= Lip(u) + (r/eps)^(q-1)", lip_e, lip_u + extra);
    report
}

/// A jet (η, X) at a node of Ω_r, with X the central second differences of
/// u_ε and `bound` the matrix bound (q−1)/ε·|η|^{(q−2)/(q−1)}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub probe: OperatorProbe,
    pub bound: f64,
}

/// η = (x − x_ε)|x − x_ε|^{q−2}/ε^{q−1} (negated for sup-convolutions).
///
/// `Ok(None)` when the argmin is x itself: the gradient is zero and no probe is
/// produced.
pub fn jet_from_argmin(res: &ConvolutionResult, node: usize) -> Result<Option<Jet>> {
    let g = res.grid();
    if node >= g.len() || !res.in_shrunken(node) {
        return Err(Error::Boundary { node });
    }
    if res.argmin[node] == node {
        return Ok(None);
    }
    let z = res.displacement(node);
    let r = norm(z);
    let scale = res.sign() * r.powf(res.q - 2.0) / res.epsilon.powf(res.q - 1.0);
    let eta = [scale * z[0], scale * z[1]];
    let bound = (res.q - 1.0) / res.epsilon * norm(eta).powf((res.q - 2.0) / (res.q - 1.0));
    Ok(Some(Jet {
        probe: OperatorProbe::new(g.point(node), eta, hessian_fd(&res.u_eps, node)),
        bound,
    }))
}

/// Central second differences, mixed term over 4h²; zero where the stencil
/// leaves the grid.
pub fn hessian_fd(f: &GridFunction, node: usize) -> SymMat {
    let g = f.grid();
    let h2 = g.h() * g.h();
    let a = second_difference(f, node, (1, 0)).unwrap_or(0.0);
    if g.dim() == 1 {
        return SymMat::new(a, 0.0, 0.0);
    }
    let c = second_difference(f, node, (0, 1)).unwrap_or(0.0);
    let at = |di, dj| g.offset(node, di, dj).map(|k| f.get(k));
    let b = match (at(1, 1), at(-1, -1), at(1, -1), at(-1, 1)) {
        (Some(pp), Some(mm), Some(pm), Some(mp)) => (pp + mm - pm - mp) / (4.0 * h2),
        _ => 0.0,
    };
    SymMat::new(a, b, c)
}

/// Formula checks at every node of Ω_r with an interior stencil:
/// u_ε(x) = u(x_ε) + k(x − x_ε) and the one-sided difference bracket
/// D⁺u_ε ≤ η + hM/2, D⁻u_ε ≥ η − hM/2 with M = (q−1)(|z|+h)^{q−2}/ε^{q−1}.
/// All are exact discrete inequalities; tolerance 1e-12 (relative).
pub fn jet_formula_check(res: &ConvolutionResult) -> CheckReport {
    let g = res.grid();
    let h = g.h();
    let s = res.sign();
    let mut report = CheckReport::new(format!("jet formula eps={}", res.epsilon), 1e-12);
    let mut identity = (f64::INFINITY, 0usize, 0.0, 0.0);
    let mut bracket = (f64::INFINITY, 0usize, 0.0, 0.0);
    let mut count = 0usize;
    for k in res.shrunken_nodes() {
        if g.is_boundary(k) {
            continue;
        }
        count += 1;
        let z = res.displacement(k);
        let lhs = res.u_eps.get(k);
        let rhs = res.u.get(res.argmin[k]) + s * kernel(z, res.epsilon, res.q);
        let m = -(lhs - rhs).abs() / 1.0f64.max(lhs.abs()).max(rhs.abs());
        if m < identity.0 {
            identity = (m, k, lhs, rhs);
        }
        let r = norm(z);
        let eta_scale = s * r.powf(res.q - 2.0) / res.epsilon.powf(res.q - 1.0);
        let curv = (res.q - 1.0) * (r + h).powf(res.q - 2.0) / res.epsilon.powf(res.q - 1.0);
        for axis in 0..g.dim() {
            let eta = eta_scale * z[axis];
            let (fw, bw) = (
                g.neighbor(k, axis, 1).unwrap(),
                g.neighbor(k, axis, -1).unwrap(),
            );
            let dplus = (res.u_eps.get(fw) - res.u_eps.get(k)) / h;
            let dminus = (res.u_eps.get(k) - res.u_eps.get(bw)) / h;
            // sup-convolutions reverse the bracket
            let (hi_lhs, hi_rhs, lo_lhs, lo_rhs) = if res.lower {
                (dplus, eta + 0.5 * h * curv, eta - 0.5 * h * curv, dminus)
            } else {
                (dminus, eta + 0.5 * h * curv, eta - 0.5 * h * curv, dplus)
            };
            for (a, b) in [(hi_lhs, hi_rhs), (lo_lhs, lo_rhs)] {
                let m = (b - a) / 1.0f64.max(a.abs()).max(b.abs());
                if m < bracket.0 {
                    bracket = (m, k, a, b);
                }
            }
        }
    }
    report.note(format!("{count} nodes in the shrunken domain"));
    if count == 0 {
        report.skipped = g.len();
        return report;
    }
    report.push_margin(
        format!("u_eps = u(x_eps) + k(x - x_eps), worst node {}", identity.1),
        identity.2,
        identity.3,
        identity.0,
    );
    report.push_margin(
        format!(
            "one-sided differences bracket eta, worst node {}",
            bracket.1
        ),
        bracket.2,
        bracket.3,
        bracket.0,
    );
    report
}

/// Second differences along every axis and diagonal at nodes of Ω_r are at
/// most (q−1)(|z|+√2h)^{q−2}/ε^{q−1} (the jet matrix bound with grid slack),
/// tolerance 10h.
pub fn jet_bound_check(res: &ConvolutionResult) -> CheckReport {
    let g = res.grid();
    let h = g.h();
    let s = res.sign();
    let mut report = CheckReport::new(format!("jet bound eps={}", res.epsilon), 10.0 * h);
    let mut worst: Option<(f64, usize, f64, f64)> = None;
    for k in res.shrunken_nodes() {
        let r = norm(res.displacement(k));
        let bound = (res.q - 1.0) * (r + std::f64::consts::SQRT_2 * h).powf(res.q - 2.0)
            / res.epsilon.powf(res.q - 1.0);
        for d in stencil_directions(g.dim()) {
            if let Some(sd) = second_difference(&res.u_eps, k, d) {
                let m = bound - s * sd;
                if worst.is_none_or(|w| m < w.0) {
                    worst = Some((m, k, s * sd, bound));
                }
            }
        }
    }
    if let Some((m, k, lhs, rhs)) = worst {
        report.push_margin(
            format!("second difference <= matrix bound, worst node {k}"),
            lhs,
            rhs,
            m,
        );
    } else {
        report.skipped = g.len();
    }
    report
}

/// Runs dominance, monotonicity, Lipschitz, semiconcavity and both jet checks
/// over an ε sweep.
pub fn convolution_suite(u: &GridFunction, epsilons: &[f64], q: f64) -> Result<Vec<CheckReport>> {
    if epsilons.is_empty() || epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter(format!(
            "epsilons must be strictly decreasing, got {epsilons:?}"
        )));
    }
    let family = epsilons
        .iter()
        .map(|&e| inf_convolve(u, e, q))
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![monotone_family_report(u, &family)];
    for res in &family {
        out.push(dominance_check(res));
        out.push(lipschitz_check(res));
        out.push(semiconcavity_check(res));
        out.push(jet_formula_check(res));
        out.push(jet_bound_check(res));
    }
    Ok(out)
}

/// f_ε(x, s, η) = min of f(y, s, η) over x and the grid nodes y with
/// |y − x| ≤ r_ε.
pub fn f_lower_envelope(
    f: &SourceSpec,
    grid: &Grid,
    r_eps: f64,
    x: Point,
    s: f64,
    eta: Point,
) -> f64 {
    let mut best = f.eval(x, s, eta);
    if r_eps <= 0.0 {
        return best;
    }
    let h = grid.h();
    let [nx, ny] = grid.shape();
    let lo = grid.domain().lo;
    let span = |axis: usize, n: usize| {
        let c = (x[axis] - lo[axis]) / h;
        let a = ((c - r_eps / h).floor().max(0.0)) as usize;
        let b = ((c + r_eps / h).ceil().max(0.0) as usize).min(n - 1);
        (a, b)
    };
    let (i0, i1) = span(0, nx);
    let (j0, j1) = if grid.dim() == 2 { span(1, ny) } else { (0, 0) };
    for j in j0..=j1 {
        for i in i0..=i1 {
            let y = grid.point(grid.index(i, j));
            if norm(sub(y, x)) <= r_eps {
                best = best.min(f.eval(y, s, eta));
            }
        }
    }
    best
}
