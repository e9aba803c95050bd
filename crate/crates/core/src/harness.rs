//! Discrete certificates for the solution notions: weak and viscosity
//! checks with their subsolution mirrors, the inf-convolution pipeline from
//! viscosity to weak supersolutions, and the small-box comparison experiment.

use rayon::prelude::*;

use crate::discrete::{weak_residuals, PowerFlux, VariationalScheme};
use crate::error::{Error, Result};
use crate::exponent::{choose_q, ExponentField};
use crate::grid::{norm, Domain, Grid, GridFunction, NeumaierSum, Point};
use crate::inf_convolution::{f_lower_envelope, hessian_fd, inf_convolve};
use crate::lebesgue::{sobolev_norm, DEFAULT_NORM_TOL};
use crate::operator::{divergence_flux_fd_strided, strong_operator_at, OperatorProbe, SymMat};
use crate::report::CheckReport;
use crate::source::SourceSpec;

/// Probes with |η| at or below this count as zero-gradient jets.
pub const ZERO_GRADIENT: f64 = 1e-10;

/// Deflation doublings tried before a node is skipped.
const MAX_ESCALATIONS: usize = 3;

/// 10·h², the weak-residual tolerance for smooth data.
pub fn default_weak_tol(grid: &Grid) -> f64 {
    10.0 * grid.h() * grid.h()
}

/// 10·h, the viscosity-margin tolerance.
pub fn default_viscosity_tol(grid: &Grid) -> f64 {
    10.0 * grid.h()
}

/// Nonnegative C¹ bumps supported in `region`, zero on ∂Ω.
///
/// `k^dim` radial bumps max(0, 1 − |x − c|²/r²)² on a lattice of spacing
/// side/(k+1) with r equal to the spacing, plus one tensor-product bump
/// Π(1 − s_a²)² over the whole region. Bumps that vanish at every node are
/// dropped.
pub fn bump_battery(grid: &Grid, region: &Domain, k: usize) -> Result<Vec<GridFunction>> {
    let dim = grid.dim();
    if region.dim != dim {
        return Err(Error::DimensionMismatch(
            "battery region dimension differs from grid".into(),
        ));
    }
    if k == 0 {
        return Err(Error::InvalidParameter(
            "battery lattice size must be >= 1".into(),
        ));
    }
    let dom = grid.domain();
    let mut lo = region.lo;
    let mut hi = region.hi;
    for a in 0..dim {
        lo[a] = lo[a].max(dom.lo[a]);
        hi[a] = hi[a].min(dom.hi[a]);
        if !(hi[a] > lo[a]) {
            return Err(Error::InvalidParameter(format!(
                "battery region {region:?} misses the grid"
            )));
        }
    }
    let region = Domain { lo, hi, dim };
    let spacing: Vec<f64> = (0..dim).map(|a| region.side(a) / (k + 1) as f64).collect();
    let radius = spacing.iter().copied().fold(f64::INFINITY, f64::min);

    let mut shapes: Vec<Box<dyn Fn(Point) -> f64>> = Vec::new();
    let counts = if dim == 2 { [k, k] } else { [k, 1] };
    for j in 0..counts[1] {
        for i in 0..counts[0] {
            let mut c = region.lo;
            c[0] += (i + 1) as f64 * spacing[0];
            if dim == 2 {
                c[1] += (j + 1) as f64 * spacing[1];
            }
            shapes.push(Box::new(move |x: Point| {
                let d2: f64 = (0..dim).map(|a| (x[a] - c[a]).powi(2)).sum();
                let s = (1.0 - d2 / (radius * radius)).max(0.0);
                s * s
            }));
        }
    }
    let center = region.center();
    shapes.push(Box::new(move |x: Point| {
        (0..dim)
            .map(|a| {
                let s = 2.0 * (x[a] - center[a]) / region.side(a);
                let t = (1.0 - s * s).max(0.0);
                t * t
            })
            .product()
    }));

    let mut battery = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let values: Vec<f64> = grid
            .nodes()
            .map(|n| {
                if grid.is_boundary(n) {
                    0.0
                } else {
                    shape(grid.point(n))
                }
            })
            .collect();
        if values.iter().any(|&v| v > 0.0) {
            battery.push(GridFunction::new(grid.clone(), values)?);
        }
    }
    Ok(battery)
}

/// One item per test function: flux pairing ≥ source pairing, i.e. the weak
/// residual is ≥ −tol.
pub fn check_weak_supersolution(
    u: &GridFunction,
    p: &ExponentField,
    f: &SourceSpec,
    battery: &[GridFunction],
    tol: f64,
) -> Result<CheckReport> {
    weak_report(u, p, f, battery, tol, true)
}

/// The mirror of [`check_weak_supersolution`]: residuals ≤ tol.
pub fn check_weak_subsolution(
    u: &GridFunction,
    p: &ExponentField,
    f: &SourceSpec,
    battery: &[GridFunction],
    tol: f64,
) -> Result<CheckReport> {
    weak_report(u, p, f, battery, tol, false)
}

fn weak_report(
    u: &GridFunction,
    p: &ExponentField,
    f: &SourceSpec,
    battery: &[GridFunction],
    tol: f64,
    upper: bool,
) -> Result<CheckReport> {
    check_tol(tol)?;
    let residuals = weak_residuals(u, battery, p, f)?;
    let kind = if upper {
        "supersolution"
    } else {
        "subsolution"
    };
    let mut report = CheckReport::new(format!("weak {kind} ({})", f.name()), tol);
    for (i, r) in residuals.into_iter().enumerate() {
        let label = format!("phi[{i}] flux - source pairing");
        if upper {
            report.push_at_least(label, r, 0.0);
        } else {
            report.push_at_most(label, r, 0.0);
        }
    }
    if battery.is_empty() {
        report.note("empty battery");
    }
    Ok(report)
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "tol must be > 0, got {tol}"
        )));
    }
    Ok(())
}

/// The source f̃(x, t, η) = −f(x, −t, −η) seen by −u.
pub fn mirror_source(f: &SourceSpec) -> SourceSpec {
    let inner = f.clone();
    let mut out = SourceSpec::new(format!("mirror of {}", f.name()), move |x, t, eta| {
        -inner.eval(x, -t, [-eta[0], -eta[1]])
    });
    out.lipschitz_eta = f.lipschitz_eta;
    out.monotone_t = f.monotone_t;
    out.state_free = f.state_free;
    out
}

/// Worst admitted probe at one node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeOutcome {
    pub node: usize,
    pub gradient: Point,
    /// −tr(A X) − B at the probe.
    pub operator: f64,
    pub source: f64,
    pub margin: f64,
    /// Deflation finally used.
    pub deflation: f64,
    pub admitted: usize,
}

/// Viscosity supersolution check through discrete sub-touching quadratics.
///
/// At every interior node, η runs over the central, forward and backward
/// differences per axis and X = D²_h u − δI with δ = c·h + h², c the local
/// third-difference size (doubled up to three times if nothing is admitted).
/// A probe is admitted iff the quadratic lies below u on the full 3^d − 1
/// neighbour ring. The node margin is the minimum of −tr(A X) − B − f over
/// admitted probes with η ≠ 0; nodes with none are skipped.
pub fn check_viscosity_supersolution(
    u: &GridFunction,
    p: &ExponentField,
    f: &SourceSpec,
    tol: f64,
) -> Result<CheckReport> {
    check_tol(tol)?;
    let outcomes = viscosity_probes(u, p, f)?;
    let mut report = CheckReport::new(format!("viscosity supersolution ({})", f.name()), tol);
    let interior = u.grid().interior_nodes().count();
    let mut skipped = 0;
    for o in &outcomes {
        match o {
            Some(o) => report.push_margin(
                format!(
                    "node {} eta=({:.6e},{:.6e})",
                    o.node, o.gradient[0], o.gradient[1]
                ),
                o.operator,
                o.source,
                o.margin,
            ),
            None => skipped += 1,
        }
    }
    report.skipped = skipped;
    report.note(format!(
        "{interior} interior nodes, {skipped} without an admissible probe with nonzero gradient"
    ));
    Ok(report)
}

/// Subsolution mirror: −u must be a supersolution for [`mirror_source`].
pub fn check_viscosity_subsolution(
    u: &GridFunction,
    p: &ExponentField,
    f: &SourceSpec,
    tol: f64,
) -> Result<CheckReport> {
    let neg = u.map(|v| -v)?;
    let mut report = check_viscosity_supersolution(&neg, p, &mirror_source(f), tol)?;
    report.name = format!("viscosity subsolution ({})", f.name());
    Ok(report)
}

/// Per-node probe outcomes of [`check_viscosity_supersolution`], in node
/// order over interior nodes (`None` marks a skipped node).
pub fn viscosity_probes(
    u: &GridFunction,
    p: &ExponentField,
    f: &SourceSpec,
) -> Result<Vec<Option<ProbeOutcome>>> {
    let g = u.grid();
    g.check_same(p.grid(), "viscosity check")?;
    let hess: Vec<SymMat> = g
        .nodes()
        .into_par_iter()
        .map(|k| hessian_fd(u, k))
        .collect();
    let interior: Vec<usize> = g.interior_nodes().collect();
    Ok(interior
        .par_iter()
        .map(|&k| probe_node(u, p, f, &hess, k))
        .collect())
}

fn ring(g: &Grid, k: usize) -> Vec<(usize, Point)> {
    let h = g.h();
    let dj: &[isize] = if g.dim() == 2 { &[-1, 0, 1] } else { &[0] };
    let mut out = Vec::with_capacity(8);
    for &j in dj {
        for i in [-1isize, 0, 1] {
            if i == 0 && j == 0 {
                continue;
            }
            if let Some(n) = g.offset(k, i, j) {
                out.push((n, [i as f64 * h, j as f64 * h]));
            }
        }
    }
    out
}

fn probe_node(
    u: &GridFunction,
    p: &ExponentField,
    f: &SourceSpec,
    hess: &[SymMat],
    k: usize,
) -> Option<ProbeOutcome> {
    let g = u.grid();
    let h = g.h();
    let dim = g.dim();
    let neighbours = ring(g, k);
    let hk = hess[k];

    let mut third = 0.0f64;
    for &(n, d) in &neighbours {
        if g.is_boundary(n) {
            continue;
        }
        let hn = hess[n];
        let diff = [
            (hn.a - hk.a).abs(),
            (hn.b - hk.b).abs(),
            (hn.c - hk.c).abs(),
        ];
        third = third.max(diff.iter().copied().fold(0.0, f64::max) / norm(d));
    }

    let uk = u.get(k);
    let mut axis_options = [[0.0; 3]; 2];
    for (axis, opts) in axis_options.iter_mut().enumerate().take(dim) {
        let fw = u.get(g.neighbor(k, axis, 1)?);
        let bw = u.get(g.neighbor(k, axis, -1)?);
        *opts = [(fw - bw) / (2.0 * h), (fw - uk) / h, (uk - bw) / h];
    }
    let etas: Vec<Point> = if dim == 2 {
        (0..9)
            .map(|c| [axis_options[0][c % 3], axis_options[1][c / 3]])
            .collect()
    } else {
        (0..3).map(|c| [axis_options[0][c], 0.0]).collect()
    };

    let x = g.point(k);
    let pk = p.value(k);
    let dp = p.gradient(k);
    let mut delta = third * h + h * h;
    for _ in 0..=MAX_ESCALATIONS {
        let x_mat = SymMat::new(hk.a - delta, hk.b, hk.c - delta).truncate(dim);
        let mut best: Option<ProbeOutcome> = None;
        let mut admitted = 0;
        for &eta in &etas {
            if norm(eta) <= ZERO_GRADIENT {
                continue;
            }
            let touches = neighbours.iter().all(|&(n, d)| {
                let phi = uk + eta[0] * d[0] + eta[1] * d[1] + 0.5 * x_mat.quad(d);
                phi <= u.get(n)
            });
            if !touches {
                continue;
            }
            let Ok(op) = strong_operator_at(&OperatorProbe::new(x, eta, x_mat), pk, dp, dim) else {
                continue;
            };
            admitted += 1;
            let src = f.eval(x, uk, eta);
            let margin = op - src;
            if best.is_none_or(|b| margin < b.margin) {
                best = Some(ProbeOutcome {
                    node: k,
                    gradient: eta,
                    operator: op,
                    source: src,
                    margin,
                    deflation: delta,
                    admitted: 0,
                });
            }
        }
        if let Some(mut b) = best {
            b.admitted = admitted;
            return Some(b);
        }
        delta *= 2.0;
    }
    None
}

/// One ε of the pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineStage {
    pub epsilon: f64,
    pub r_eps: f64,
    /// Lattice stride (in grid steps) of the strong-form difference quotient.
    pub stride: usize,
    /// min over Ω_r of −Δ_p u_ε − f_ε; the empirical −E(ε). NaN when Ω_r
    /// holds no evaluable node.
    pub strong_margin: f64,
    pub strong_nodes: usize,
    /// Smallest weak residual over the battery (NaN without a battery).
    pub weak_worst: f64,
    /// |E(ε)|·∫φ + tol for the worst test function.
    pub weak_allowance: f64,
    /// ‖u_ε − u‖ in W^{1,p(·)} of the fixed interior box.
    pub sobolev_distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineReport {
    pub q: f64,
    pub stages: Vec<PipelineStage>,
    /// Violation max(0, −M(ε)) non-increasing and the last M(ε) ≥ −tol.
    pub strong: CheckReport,
    pub weak: CheckReport,
    /// Sobolev distance non-increasing along the sweep.
    pub convergence: CheckReport,
}

impl PipelineReport {
    pub fn passed(&self) -> bool {
        self.strong.passed() && self.weak.passed() && self.convergence.passed()
    }

    pub fn reports(&self) -> [&CheckReport; 3] {
        [&self.strong, &self.weak, &self.convergence]
    }

    /// CSV: one row per ε.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "epsilon",
            "r_eps",
            "stride",
            "strong_margin",
            "strong_nodes",
            "weak_worst",
            "weak_allowance",
            "sobolev_distance",
        ])?;
        for s in &self.stages {
            w.write_record([
                s.epsilon.to_string(),
                s.r_eps.to_string(),
                s.stride.to_string(),
                s.strong_margin.to_string(),
                s.strong_nodes.to_string(),
                s.weak_worst.to_string(),
                s.weak_allowance.to_string(),
                s.sobolev_distance.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Relative slack for the monotonicity of the Sobolev distance.
const SOBOLEV_SLACK: f64 = 1e-8;

/// Inf-convolution pipeline from a viscosity to a weak supersolution.
///
/// For each ε: u_ε and the strong-form margin M(ε) on Ω_r, measured with the
/// staggered flux on a lattice coarse enough that the grid-level roughness of
/// u_ε (second differences up to Λ = (q−1)(r+h)^{q−2}/ε^{q−1}) stays below
/// tol; the weak residual of u_ε against f_ε for bumps supported in
/// Ω′ ∩ Ω_r; and ‖u_ε − u‖ on Ω′, the centered half-size box.
pub fn pipeline_viscosity_to_weak(
    u: &GridFunction,
    p: &ExponentField,
    f: &SourceSpec,
    epsilons: &[f64],
    tol: f64,
) -> Result<PipelineReport> {
    check_tol(tol)?;
    let g = u.grid();
    g.check_same(p.grid(), "pipeline")?;
    if epsilons.is_empty() || epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter(format!(
            "epsilons must be strictly decreasing, got {epsilons:?}"
        )));
    }
    let q = choose_q(p.p_minus())?;
    let dim = g.dim();
    let h = g.h();
    let inner = g.domain().scaled(0.5);
    let u_inner = u.restrict(&inner)?;
    let p_inner = p.restrict(&inner)?;
    let scheme = VariationalScheme::new(p);

    let mut stages = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let res = inf_convolve(u, eps, q)?;
        let r = res.r_eps;
        let lambda = (q - 1.0) * (r + h).powf(q - 2.0) / eps.powf(q - 1.0);
        let stride = ((dim as f64 * (lambda / (2.0 * tol)).sqrt()).ceil() as usize).max(1);

        // f_ε at every node, shared by the strong and weak stages
        let f_eps: Vec<f64> = g
            .nodes()
            .into_par_iter()
            .map(|k| {
                f_lower_envelope(
                    f,
                    g,
                    r,
                    g.point(k),
                    res.u_eps.get(k),
                    res.u_eps.nodal_gradient(k),
                )
            })
            .collect();
        let nodes = res.shrunken_nodes();
        let margins: Vec<Option<f64>> = nodes
            .par_iter()
            .map(|&k| Some(divergence_flux_fd_strided(&res.u_eps, p, k, stride).ok()? - f_eps[k]))
            .collect();
        let evaluated: Vec<f64> = margins.into_iter().flatten().collect();
        let strong_margin = evaluated
            .iter()
            .copied()
            .reduce(f64::min)
            .unwrap_or(f64::NAN);
        let e_abs = if strong_margin.is_nan() {
            0.0
        } else {
            (-strong_margin).max(0.0)
        };

        let mut region = inner;
        for a in 0..dim {
            region.lo[a] = region.lo[a].max(g.domain().lo[a] + r);
            region.hi[a] = region.hi[a].min(g.domain().hi[a] - r);
        }
        let usable = (0..dim).all(|a| region.hi[a] - region.lo[a] > 2.0 * h);
        let battery = if usable {
            bump_battery(g, &region, 3)?
        } else {
            Vec::new()
        };
        let flux = scheme.energy_gradient(&PowerFlux::default(), res.u_eps.values());
        let residuals: Vec<f64> = battery
            .iter()
            .map(|phi| {
                let mut sum = NeumaierSum::default();
                for k in g.nodes() {
                    sum.add((flux[k] - g.weight(k) * f_eps[k]) * phi.get(k));
                }
                sum.total()
            })
            .collect();
        let mut weak_worst = f64::NAN;
        let mut weak_allowance = tol;
        let mut worst_slack = f64::INFINITY;
        for (phi, r_phi) in battery.iter().zip(&residuals) {
            let allowance = e_abs * phi.integral() + tol;
            if r_phi + allowance < worst_slack {
                worst_slack = r_phi + allowance;
                weak_worst = *r_phi;
                weak_allowance = allowance;
            }
        }

        let diff = res
            .u_eps
            .restrict(&inner)?
            .zip_with(&u_inner, |a, b| a - b)?;
        let sobolev_distance = sobolev_norm(&diff, &p_inner, DEFAULT_NORM_TOL)?;

        stages.push(PipelineStage {
            epsilon: eps,
            r_eps: r,
            stride,
            strong_margin,
            strong_nodes: evaluated.len(),
            weak_worst,
            weak_allowance,
            sobolev_distance,
        });
    }

    let mut strong = CheckReport::new("pipeline strong-form margin", tol);
    let mut weak = CheckReport::new("pipeline weak residual", 0.0);
    let mut convergence = CheckReport::new("pipeline Sobolev distance", 0.0);
    strong.note(format!("q = {q}"));
    let measured: Vec<&PipelineStage> = stages
        .iter()
        .filter(|s| !s.strong_margin.is_nan())
        .collect();
    strong.skipped = stages.len() - measured.len();
    for w in measured.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (va, vb) = ((-a.strong_margin).max(0.0), (-b.strong_margin).max(0.0));
        strong.push_margin(
            format!("violation eps={} <= eps={}", b.epsilon, a.epsilon),
            vb,
            va,
            va - vb,
        );
    }
    match measured.last() {
        Some(last) => strong.push_at_least(
            format!("M(eps={}) >= -tol", last.epsilon),
            last.strong_margin,
            -tol,
        ),
        None => strong.note("no evaluable node in any shrunken domain"),
    }
    for s in &stages {
        if s.weak_worst.is_nan() {
            weak.skipped += 1;
            weak.note(format!(
                "eps={}: no test function fits inside the shrunken inner box",
                s.epsilon
            ));
        } else {
            weak.push_at_least(
                format!("worst residual eps={}", s.epsilon),
                s.weak_worst,
                -s.weak_allowance,
            );
        }
    }
    for w in stages.windows(2) {
        let slack = SOBOLEV_SLACK * w[0].sobolev_distance.max(1.0);
        convergence.push_margin(
            format!("distance eps={} <= eps={}", w[1].epsilon, w[0].epsilon),
            w[1].sobolev_distance,
            w[0].sobolev_distance,
            w[0].sobolev_distance - w[1].sobolev_distance + slack,
        );
    }
    Ok(PipelineReport {
        q,
        stages,
        strong,
        weak,
        convergence,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComparisonOptions {
    /// Weak-residual tolerance; `None` means 10·h².
    pub weak_tol: Option<f64>,
    /// Slack for u ≤ v, on ∂B and inside.
    pub order_tol: f64,
    /// |Du| + |Dv| must exceed this where p > 2.
    pub gradient_floor: f64,
    pub battery_size: usize,
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        ComparisonOptions {
            weak_tol: None,
            order_tol: 1e-12,
            gradient_floor: 1e-12,
            battery_size: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonOutcome {
    /// The box actually used (snapped to grid lines).
    pub region: Domain,
    /// Weak sub/super certificates, boundary ordering, gradient hypothesis.
    pub preconditions: Vec<CheckReport>,
    /// u ≤ v inside B; `None` when a precondition failed.
    pub ordering: Option<CheckReport>,
}

impl ComparisonOutcome {
    pub fn ran(&self) -> bool {
        self.ordering.is_some()
    }

    pub fn passed(&self) -> bool {
        self.ordering.as_ref().is_some_and(CheckReport::passed)
    }

    pub fn reports(&self) -> impl Iterator<Item = &CheckReport> {
        self.preconditions.iter().chain(self.ordering.iter())
    }
}

/// Comparison experiment on the sub-box `region`: certifies u as a weak
/// subsolution and v as a weak supersolution on B, u ≤ v on ∂B and
/// |Du| + |Dv| > 0 where p > 2; only then checks u ≤ v inside B.
pub fn comparison_experiment(
    u: &GridFunction,
    v: &GridFunction,
    p: &ExponentField,
    f: &SourceSpec,
    region: &Domain,
    opts: &ComparisonOptions,
) -> Result<ComparisonOutcome> {
    let g = u.grid();
    g.check_same(v.grid(), "comparison")?;
    g.check_same(p.grid(), "comparison")?;
    if !(opts.order_tol >= 0.0) || !(opts.gradient_floor >= 0.0) {
        return Err(Error::InvalidParameter(
            "comparison tolerances must be >= 0".into(),
        ));
    }
    let (sub, map) = g.restrict(region)?;
    let ub = u.restrict(region)?;
    let vb = v.restrict(region)?;
    let pb = p.restrict(region)?;
    let weak_tol = opts.weak_tol.unwrap_or_else(|| default_weak_tol(&sub));
    let battery = bump_battery(&sub, sub.domain(), opts.battery_size)?;

    let mut preconditions = vec![
        check_weak_subsolution(&ub, &pb, f, &battery, weak_tol)?,
        check_weak_supersolution(&vb, &pb, f, &battery, weak_tol)?,
    ];

    let mut boundary = CheckReport::new("boundary ordering u <= v", opts.order_tol);
    if let Some((k, du, dv)) = sub
        .nodes()
        .filter(|&k| sub.is_boundary(k))
        .map(|k| (k, ub.get(k), vb.get(k)))
        .min_by(|a, b| (a.2 - a.1).total_cmp(&(b.2 - b.1)))
    {
        boundary.push_at_most(format!("worst boundary node {:?}", sub.point(k)), du, dv);
    }
    preconditions.push(boundary);

    let mut gradient = CheckReport::new("gradient hypothesis where p > 2", 0.0);
    let mut worst: Option<(usize, f64)> = None;
    for (k, &parent) in map.iter().enumerate() {
        if pb.value(k) > 2.0 {
            let s = norm(u.nodal_gradient(parent)) + norm(v.nodal_gradient(parent));
            if worst.is_none_or(|w| s < w.1) {
                worst = Some((k, s));
            }
        }
    }
    match worst {
        Some((k, s)) => {
            let label = format!("|Du|+|Dv| > floor, worst node {:?}", sub.point(k));
            if s > opts.gradient_floor {
                gradient.push_at_least(label, s, opts.gradient_floor);
            } else {
                gradient.push_margin(label, s, opts.gradient_floor, -1.0);
            }
        }
        None => gradient.note("p <= 2 on the box; hypothesis vacuous"),
    }
    preconditions.push(gradient);

    let ordering = if preconditions.iter().all(CheckReport::passed) {
        let mut r = CheckReport::new("interior ordering u <= v", opts.order_tol);
        if let Some((k, du, dv)) = sub
            .nodes()
            .map(|k| (k, ub.get(k), vb.get(k)))
            .min_by(|a, b| (a.2 - a.1).total_cmp(&(b.2 - b.1)))
        {
            r.push_at_most(format!("worst node {:?}", sub.point(k)), du, dv);
        }
        Some(r)
    } else {
        None
    };
    Ok(ComparisonOutcome {
        region: *sub.domain(),
        preconditions,
        ordering,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonSweep {
    pub outcomes: Vec<ComparisonOutcome>,
    /// Largest |B| at which the experiment ran and the ordering held.
    pub empirical_delta: Option<f64>,
}

/// Runs [`comparison_experiment`] on boxes centered at `center` with the
/// given side lengths (clipped to the domain).
pub fn comparison_sweep(
    u: &GridFunction,
    v: &GridFunction,
    p: &ExponentField,
    f: &SourceSpec,
    center: Point,
    sides: &[f64],
    opts: &ComparisonOptions,
) -> Result<ComparisonSweep> {
    let g = u.grid();
    let dom = g.domain();
    let mut outcomes = Vec::with_capacity(sides.len());
    for &s in sides {
        if !(s > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "box side must be > 0, got {s}"
            )));
        }
        let mut b = Domain {
            lo: center,
            hi: center,
            dim: dom.dim,
        };
        for a in 0..dom.dim {
            b.lo[a] = (center[a] - 0.5 * s).max(dom.lo[a]);
            b.hi[a] = (center[a] + 0.5 * s).min(dom.hi[a]);
        }
        outcomes.push(comparison_experiment(u, v, p, f, &b, opts)?);
    }
    let empirical_delta = outcomes
        .iter()
        .filter(|o| o.passed())
        .map(|o| o.region.measure())
        .reduce(f64::max);
    Ok(ComparisonSweep {
        outcomes,
        empirical_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{solve_variational, SolverOptions};

    fn line(n: usize, a: f64, b: f64) -> Grid {
        Grid::with_nodes(Domain::interval(a, b), n, 1).unwrap()
    }

    fn square(n: usize, a: f64, b: f64) -> Grid {
        Grid::with_nodes(Domain::rect(a, b, a, b), n, n).unwrap()
    }

    #[test]
    fn battery_is_nonnegative_and_vanishes_on_the_boundary() {
        for g in [line(41, 0.0, 1.0), square(21, -1.0, 1.0)] {
            let bat = bump_battery(&g, g.domain(), 3).unwrap();
            let expected = if g.dim() == 1 { 4 } else { 10 };
            assert_eq!(bat.len(), expected);
            for phi in &bat {
                crate::discrete::validate_test_function(phi).unwrap();
                assert!(phi.max() > 0.0);
            }
        }
    }

    #[test]
    fn battery_respects_a_sub_region() {
        let g = square(41, 0.0, 1.0);
        let region = Domain::rect(0.25, 0.75, 0.25, 0.75);
        for phi in bump_battery(&g, &region, 2).unwrap() {
            for k in g.nodes() {
                if !region.contains(g.point(k), 1e-12) {
                    assert_eq!(phi.get(k), 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_function_has_zero_residuals() {
        let g = square(17, 0.0, 1.0);
        let p = ExponentField::constant(&g, 3.0).unwrap();
        let u = GridFunction::constant(&g, 0.0);
        let bat = bump_battery(&g, g.domain(), 3).unwrap();
        let r = check_weak_supersolution(&u, &p, &SourceSpec::zero(), &bat, default_weak_tol(&g))
            .unwrap();
        assert!(r.passed());
        assert!(r.items.iter().all(|i| i.margin == 0.0));
    }

    #[test]
    fn concave_parabola_is_a_strict_weak_supersolution() {
        // −u'' = 2: the residual against φ is 2∫φ (trapezoid), since the
        // 1D flux differences of a quadratic are exact
        let g = line(201, -1.0, 1.0);
        let p = ExponentField::constant(&g, 2.0).unwrap();
        let u = GridFunction::from_fn(&g, |x| 1.0 - x[0] * x[0]).unwrap();
        let bat = bump_battery(&g, g.domain(), 3).unwrap();
        let r = check_weak_supersolution(&u, &p, &SourceSpec::zero(), &bat, default_weak_tol(&g))
            .unwrap();
        assert!(r.passed());
        for (item, phi) in r.items.iter().zip(&bat) {
            assert!(item.margin > 0.0);
            let oracle = 2.0 * phi.integral();
            assert!(
                (item.margin - oracle).abs() < 1e-12,
                "{} vs {oracle}",
                item.margin
            );
        }
        let sub = check_weak_subsolution(&u, &p, &SourceSpec::zero(), &bat, default_weak_tol(&g))
            .unwrap();
        assert!(!sub.passed());
    }

    #[test]
    fn poisson_solution_is_weak_super_and_subsolution() {
        let g = square(33, 0.0, 1.0);
        let p = ExponentField::constant(&g, 2.0).unwrap();
        let zero = GridFunction::constant(&g, 0.0);
        let one = GridFunction::constant(&g, 1.0);
        let out = solve_variational(&p, &zero, &one, &SolverOptions::default()).unwrap();
        let bat = bump_battery(&g, g.domain(), 3).unwrap();
        let f = SourceSpec::constant(1.0);
        let tol = default_weak_tol(&g);
        let sup = check_weak_supersolution(&out.u, &p, &f, &bat, tol).unwrap();
        let sub = check_weak_subsolution(&out.u, &p, &f, &bat, tol).unwrap();
        assert!(sup.passed() && sub.passed());
        assert!(sup.max_abs_margin() < 1e-8);
    }

    #[test]
    fn weak_check_rejects_invalid_test_functions() {
        let g = line(11, 0.0, 1.0);
        let p = ExponentField::constant(&g, 2.0).unwrap();
        let u = GridFunction::constant(&g, 0.0);
        let bad = GridFunction::constant(&g, 1.0);
        let err = check_weak_supersolution(&u, &p, &SourceSpec::zero(), &[bad], 1e-3).unwrap_err();
        assert!(matches!(err, Error::InvalidTestFunction(_)));
    }

    #[test]
    fn mirror_source_negates_all_arguments() {
        let f = SourceSpec::new("f", |x, t, eta| {
            x[0] + 2.0 * t + 3.0 * eta[0] + 5.0 * eta[1]
        });
        let m = mirror_source(&f);
        let (x, t, eta) = ([0.3, 0.1], 0.7, [0.2, -0.4]);
        assert_eq!(m.eval(x, t, eta), -f.eval(x, -t, [-eta[0], -eta[1]]));
    }

    #[test]
    fn viscosity_check_on_poisson_solution() {
        let g = line(129, 0.0, 1.0);
        let p = ExponentField::constant(&g, 2.0).unwrap();
        let u = GridFunction::from_fn(&g, |x| 0.5 * x[0] * (1.0 - x[0])).unwrap();
        let f = SourceSpec::constant(1.0);
        let h = g.h();
        let sup = check_viscosity_supersolution(&u, &p, &f, 10.0 * h).unwrap();
        let sub = check_viscosity_subsolution(&u, &p, &f, 10.0 * h).unwrap();
        assert!(sup.passed() && sub.passed());
        // the centre is the only critical node
        assert_eq!(sup.skipped, 1);
        assert!(sup.worst_margin().unwrap().abs() <= 2.0 * h * h);
    }

    #[test]
    fn convex_paraboloid_fails_and_concave_passes() {
        let g = square(33, -1.0, 1.0);
        let p = ExponentField::constant(&g, 2.0).unwrap();
        let f = SourceSpec::zero();
        let tol = 10.0 * g.h();
        let convex = GridFunction::from_fn(&g, |x| x[0] * x[0] + x[1] * x[1]).unwrap();
        let r = check_viscosity_supersolution(&convex, &p, &f, tol).unwrap();
        assert!(!r.passed());
        // −Δ|x|² = −4 up to the deflation
        let worst = r.worst_margin().unwrap();
        assert!((worst + 4.0).abs() < 0.1, "{worst}");
        let concave = convex.map(|v| -v).unwrap();
        assert!(check_viscosity_supersolution(&concave, &p, &f, tol)
            .unwrap()
            .passed());
        assert!(check_viscosity_subsolution(&convex, &p, &f, tol)
            .unwrap()
            .passed());
    }

    #[test]
    fn cone_passes_as_supersolution() {
        let g = line(65, -1.0, 1.0);
        let p = ExponentField::constant(&g, 2.0).unwrap();
        let u = GridFunction::from_fn(&g, |x| x[0].abs()).unwrap();
        let r = check_viscosity_supersolution(&u, &p, &SourceSpec::zero(), 10.0 * g.h()).unwrap();
        assert!(r.passed());
    }

    #[test]
    fn no_skips_for_nonvanishing_gradient() {
        let g = square(33, 0.0, 1.0);
        let p = ExponentField::build(&g, |x| 1.8 + 0.4 * x[0]).unwrap();
        let u = GridFunction::from_fn(&g, |x| x[0] + 0.3 * x[1] * x[1]).unwrap();
        let r = check_viscosity_supersolution(&u, &p, &SourceSpec::zero(), 10.0 * g.h()).unwrap();
        assert_eq!(r.skipped, 0);
        assert_eq!(r.items.len(), g.interior_nodes().count());
    }

    #[test]
    fn probe_quadratics_touch_from_below() {
        let g = square(17, 0.0, 1.0);
        let p = ExponentField::constant(&g, 3.0).unwrap();
        let u = GridFunction::from_fn(&g, |x| (2.0 * x[0]).sin() + x[1] * x[1] * x[1]).unwrap();
        let outcomes = viscosity_probes(&u, &p, &SourceSpec::zero()).unwrap();
        for o in outcomes.into_iter().flatten() {
            assert!(o.admitted >= 1);
            assert!(o.deflation > 0.0);
        }
    }

    #[test]
    fn viscosity_rejects_bad_tolerance() {
        let g = line(9, 0.0, 1.0);
        let p = ExponentField::constant(&g, 2.0).unwrap();
        let u = GridFunction::constant(&g, 0.0);
        let err = check_viscosity_supersolution(&u, &p, &SourceSpec::zero(), -1.0).unwrap_err();
        assert!(err.to_string().contains("tol must be > 0"));
    }

    #[test]
    fn pipeline_on_concave_paraboloid() {
        let g = square(65, -1.0, 1.0);
        let p = ExponentField::constant(&g, 2.0).unwrap();
        let u = GridFunction::from_fn(&g, |x| 1.0 - x[0] * x[0] - x[1] * x[1]).unwrap();
        let rep = pipeline_viscosity_to_weak(
            &u,
            &p,
            &SourceSpec::zero(),
            &[0.05, 0.02, 0.01],
            10.0 * g.h(),
        )
        .unwrap();
        assert!(
            rep.passed(),
            "{}{}{}",
            rep.strong,
            rep.weak,
            rep.convergence
        );
        assert_eq!(rep.q, 2.0);
        // u_ε = 1 − |x|²/(1 − 2ε) away from the boundary, so −Δu_ε = 4/(1 − 2ε)
        for s in &rep.stages {
            assert!(s.strong_margin > 0.0);
        }
        let d: Vec<f64> = rep.stages.iter().map(|s| s.sobolev_distance).collect();
        assert!(d[0] > d[1]);
    }

    #[test]
    fn pipeline_on_constant_is_exact() {
        let g = square(33, 0.0, 1.0);
        let p = ExponentField::constant(&g, 2.5).unwrap();
        let u = GridFunction::constant(&g, 0.7);
        let rep =
            pipeline_viscosity_to_weak(&u, &p, &SourceSpec::zero(), &[0.2, 0.1], 10.0 * g.h())
                .unwrap();
        assert!(rep.passed());
        for s in &rep.stages {
            assert_eq!(s.sobolev_distance, 0.0);
            assert!(s.strong_margin.is_nan() || s.strong_margin == 0.0);
        }
    }

    #[test]
    fn pipeline_on_concave_cone() {
        let g = line(257, -1.0, 1.0);
        let p = ExponentField::constant(&g, 2.0).unwrap();
        let u = GridFunction::from_fn(&g, |x| -x[0].abs()).unwrap();
        let rep = pipeline_viscosity_to_weak(
            &u,
            &p,
            &SourceSpec::zero(),
            &[0.1, 0.05, 0.02, 0.01],
            10.0 * g.h(),
        )
        .unwrap();
        assert!(rep.weak.passed(), "{}", rep.weak);
        assert!(rep.convergence.passed(), "{}", rep.convergence);
    }

    #[test]
    fn pipeline_requires_decreasing_epsilons() {
        let g = line(33, 0.0, 1.0);
        let p = ExponentField::constant(&g, 2.0).unwrap();
        let u = GridFunction::constant(&g, 0.0);
        assert!(pipeline_viscosity_to_weak(&u, &p, &SourceSpec::zero(), &[0.1, 0.2], 0.1).is_err());
    }

    fn parabolas(n: usize) -> (Grid, ExponentField, GridFunction, GridFunction) {
        let g = line(n, 0.0, 1.0);
        let p = ExponentField::constant(&g, 2.0).unwrap();
        // −u'' = 1/2 ≤ 1 and −v'' = 2 ≥ 1, equal on the boundary
        let u = GridFunction::from_fn(&g, |x| 0.25 * x[0] * (1.0 - x[0])).unwrap();
        let v = GridFunction::from_fn(&g, |x| x[0] * (1.0 - x[0])).unwrap();
        (g, p, u, v)
    }

    #[test]
    fn comparison_of_parabolas_holds_on_every_box() {
        let (g, p, u, v) = parabolas(129);
        let f = SourceSpec::constant(1.0);
        for (a, b) in [(0.0, 1.0), (0.0, 0.5), (0.25, 0.75), (0.1, 0.3)] {
            let out = comparison_experiment(
                &u,
                &v,
                &p,
                &f,
                &Domain::interval(a, b),
                &ComparisonOptions::default(),
            )
            .unwrap();
            assert!(out.ran() && out.passed(), "box [{a},{b}]");
        }
        assert_eq!(g.len(), 129);
    }

    #[test]
    fn comparison_is_reflexive_and_transport_safe() {
        let (g, p, _, _) = parabolas(65);
        // −u'' = 1 exactly: both a sub- and a supersolution
        let u = GridFunction::from_fn(&g, |x| 0.5 * x[0] * (1.0 - x[0])).unwrap();
        let f = SourceSpec::of_x("f=1", |_| 1.0);
        let b = Domain::interval(0.2, 0.8);
        let opts = ComparisonOptions::default();
        let same = comparison_experiment(&u, &u, &p, &f, &b, &opts).unwrap();
        assert!(same.passed());
        let c = 0.5;
        let (us, vs) = (u.map(|x| x + c).unwrap(), u.map(|x| x + c).unwrap());
        let shifted = comparison_experiment(&us, &vs, &p, &f, &b, &opts).unwrap();
        assert_eq!(same.passed(), shifted.passed());
        let up = u.map(|x| x + 0.25).unwrap();
        assert!(comparison_experiment(&u, &up, &p, &f, &b, &opts)
            .unwrap()
            .passed());
    }

    #[test]
    fn comparison_rejects_vanishing_gradients_where_p_exceeds_two() {
        let g = line(65, 0.0, 1.0);
        let p = ExponentField::constant(&g, 3.0).unwrap();
        let u = GridFunction::from_fn(&g, |x| (x[0] - 0.5).powi(2)).unwrap();
        let out = comparison_experiment(
            &u,
            &u,
            &p,
            &SourceSpec::zero(),
            &Domain::interval(0.0, 1.0),
            &ComparisonOptions::default(),
        )
        .unwrap();
        assert!(!out.ran());
        assert!(!out.preconditions[3].passed());
    }

    #[test]
    fn comparison_rejects_boundary_disorder() {
        let (_, p, u, v) = parabolas(65);
        let high = u.map(|x| x + 1.0).unwrap();
        let out = comparison_experiment(
            &high,
            &v,
            &p,
            &SourceSpec::constant(1.0),
            &Domain::interval(0.0, 1.0),
            &ComparisonOptions::default(),
        )
        .unwrap();
        assert!(!out.ran());
        assert!(!out.preconditions[2].passed());
    }

    #[test]
    fn sweep_reports_the_largest_ordered_box() {
        let (_, p, u, v) = parabolas(129);
        let sweep = comparison_sweep(
            &u,
            &v,
            &p,
            &SourceSpec::constant(1.0),
            [0.5, 0.0],
            &[1.0, 0.5, 0.25],
            &ComparisonOptions::default(),
        )
        .unwrap();
        // every box is ordered, so the largest is the whole interval
        assert!(sweep.outcomes[0].passed());
        assert!((sweep.empirical_delta.unwrap() - 1.0).abs() < 1e-12);
    }
}
