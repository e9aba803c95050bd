//! Variable-exponent Lebesgue machinery: the modular ρ(u) = ∫|u|^{p(x)}, the
//! Luxemburg norm and checkers for the classical inequalities relating them.
//!
//! All integrals use the trapezoid rule of the grid, so every identity below is
//! an identity about the discrete modular.

use crate::error::{Error, Result};
use crate::exponent::ExponentField;
use crate::grid::{GridFunction, NeumaierSum};
use crate::report::CheckReport;

pub const DEFAULT_NORM_TOL: f64 = 1e-10;
const MAX_BISECTIONS: usize = 400;

/// ρ(u) = ∫ |u(x)|^{p(x)} dx by trapezoid quadrature.
pub fn modular(u: &GridFunction, p: &ExponentField) -> Result<f64> {
    u.grid().check_same(p.grid(), "modular")?;
    Ok(scaled_modular(u, p, 1.0))
}

fn scaled_modular(u: &GridFunction, p: &ExponentField, lambda: f64) -> f64 {
    let g = u.grid();
    let mut sum = NeumaierSum::default();
    for (k, (&v, &pk)) in u.values().iter().zip(p.values()).enumerate() {
        sum.add(g.weight(k) * (v / lambda).abs().powf(pk));
    }
    sum.total()
}

/// ‖u‖ = inf{λ > 0 : ρ(u/λ) ≤ 1}, found by bisection until |ρ(u/λ) − 1| ≤ tol.
pub fn luxemburg_norm(u: &GridFunction, p: &ExponentField, tol: f64) -> Result<f64> {
    u.grid().check_same(p.grid(), "luxemburg_norm")?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tol must be > 0, got {tol}"
        )));
    }
    let max = u.max_abs();
    if max == 0.0 {
        return Ok(0.0);
    }
    let rho = |lambda: f64| scaled_modular(u, p, lambda);

    let mut lo = f64::EPSILON;
    let mut hi = max * (1.0 + u.grid().domain().measure());
    let mut guard = 0;
    while rho(hi) > 1.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(Error::IterationLimit {
                iterations: guard,
                lo,
                hi,
            });
        }
    }
    while rho(lo) <= 1.0 {
        lo *= 0.5;
        guard += 1;
        if lo == 0.0 || guard > 4000 {
            return Err(Error::IterationLimit {
                iterations: guard,
                lo,
                hi,
            });
        }
    }

    for _ in 0..MAX_BISECTIONS {
        // geometric midpoint while the bracket spans orders of magnitude
        let mid = if hi > 4.0 * lo {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        let r = rho(mid);
        if (r - 1.0).abs() <= tol {
            return Ok(mid);
        }
        if r > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::IterationLimit {
        iterations: MAX_BISECTIONS,
        lo,
        hi,
    })
}

/// ‖u‖_{W^{1,p(·)}} = ‖u‖_{L^{p(·)}} + ‖ |Du| ‖_{L^{p(·)}} with nodal gradients.
pub fn sobolev_norm(u: &GridFunction, p: &ExponentField, tol: f64) -> Result<f64> {
    Ok(luxemburg_norm(u, p, tol)? + luxemburg_norm(&u.gradient_norms()?, p, tol)?)
}

/// Checks the norm–modular relations: ‖u‖ and ρ(u) lie on the same side of 1,
/// and ‖u‖^{p⁺} ≤ ρ(u) ≤ ‖u‖^{p⁻} (‖u‖ ≤ 1) or ‖u‖^{p⁻} ≤ ρ(u) ≤ ‖u‖^{p⁺}
/// (‖u‖ ≥ 1). The report tolerance is 10·tol.
pub fn check_modular_norm_relations(
    u: &GridFunction,
    p: &ExponentField,
    tol: f64,
) -> Result<CheckReport> {
    let norm = luxemburg_norm(u, p, tol)?;
    let rho = modular(u, p)?;
    let mut report = CheckReport::new("modular-norm", 10.0 * tol);

    let (dn, dr) = (norm - 1.0, rho - 1.0);
    let consistent = dn * dr >= 0.0;
    let margin = if consistent {
        0.0
    } else {
        -dn.abs().min(dr.abs())
    };
    report.push_margin("norm and modular on the same side of 1", norm, rho, margin);

    let (low, high) = if norm >= 1.0 {
        (norm.powf(p.p_minus()), norm.powf(p.p_plus()))
    } else {
        (norm.powf(p.p_plus()), norm.powf(p.p_minus()))
    };
    report.push_at_most_relative("lower power of norm <= modular", low, rho);
    report.push_at_most_relative("modular <= upper power of norm", rho, high);
    Ok(report)
}

/// Checks |∫uv| ≤ (1/p⁻ + 1/(p′)⁻)·‖u‖_{p(·)}·‖v‖_{p′(·)} with p′ computed
/// pointwise on this grid.
pub fn check_holder_pairing(
    u: &GridFunction,
    v: &GridFunction,
    p: &ExponentField,
    tol: f64,
) -> Result<CheckReport> {
    u.grid().check_same(v.grid(), "holder pairing")?;
    let conj = p.conjugate()?;
    let product = u.zip_with(v, |a, b| a * b)?;
    let pairing = product.integral().abs();
    let constant = 1.0 / p.p_minus() + 1.0 / conj.p_minus();
    let bound = constant * luxemburg_norm(u, p, tol)? * luxemburg_norm(v, &conj, tol)?;
    let mut report = CheckReport::new("holder", 10.0 * tol);
    report.push_at_most_relative("|int uv| <= C |u|_p |v|_p'", pairing, bound);
    report.note(format!("constant 1/p- + 1/(p')- = {constant}"));
    Ok(report)
}

/// Checks the norm relation between ‖f‖_{L^{p(·)q(·)}} and ‖|f|^{p(·)}‖_{L^{q(·)}}.
pub fn check_product_lemma(
    f: &GridFunction,
    p: &ExponentField,
    q: &ExponentField,
    tol: f64,
) -> Result<CheckReport> {
    f.grid().check_same(p.grid(), "product lemma")?;
    let pq = p.product(q)?;
    let a = luxemburg_norm(f, &pq, tol)?;
    let powered = GridFunction::new(
        f.grid().clone(),
        f.values()
            .iter()
            .zip(p.values())
            .map(|(v, e)| v.abs().powf(*e))
            .collect(),
    )?;
    let b = luxemburg_norm(&powered, q, tol)?;
    let (low, high) = if a <= 1.0 {
        (a.powf(p.p_plus()), a.powf(p.p_minus()))
    } else {
        (a.powf(p.p_minus()), a.powf(p.p_plus()))
    };
    let mut report = CheckReport::new("product-lemma", 10.0 * tol);
    report.note(format!(
        "|f|_(pq) = {a}, branch {}",
        if a <= 1.0 { "(i)" } else { "(ii)" }
    ));
    report.push_at_most_relative("lower power <= |f^p|_q", low, b);
    report.push_at_most_relative("|f^p|_q <= upper power", b, high);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Domain, Grid};

    fn unit(n: usize) -> Grid {
        Grid::with_nodes(Domain::interval(0.0, 1.0), n, 1).unwrap()
    }

    #[test]
    fn modular_constants() {
        let g = unit(11);
        let p = ExponentField::constant(&g, 2.0).unwrap();
        assert!((modular(&GridFunction::constant(&g, 1.0), &p).unwrap() - 1.0).abs() < 1e-14);
        assert!((modular(&GridFunction::constant(&g, 2.0), &p).unwrap() - 4.0).abs() < 1e-14);
        assert_eq!(modular(&GridFunction::constant(&g, 0.0), &p).unwrap(), 0.0);
    }

    #[test]
    fn modular_rejects_grid_mismatch() {
        let p = ExponentField::constant(&unit(11), 2.0).unwrap();
        assert!(matches!(
            modular(&GridFunction::constant(&unit(12), 1.0), &p),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn modular_variable_exponent_converges_at_second_order() {
        // oracle: composite Simpson at 10^6 intervals
        let n = 1_000_000usize;
        let f = |x: f64| if x == 0.0 { 0.0 } else { x.powf(2.0 + x) };
        let hh = 1.0 / n as f64;
        let mut s = f(0.0) + f(1.0);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * hh);
        }
        let exact = s * hh / 3.0;
        let err = |nodes: usize| {
            let g = unit(nodes);
            let u = GridFunction::from_fn(&g, |x| x[0]).unwrap();
            let p = ExponentField::build(&g, |x| 2.0 + x[0]).unwrap();
            (modular(&u, &p).unwrap() - exact).abs()
        };
        let (e1, e2) = (err(33), err(65));
        assert!(e1 < 1e-3);
        assert!((e1 / e2).log2() > 1.9);
    }

    #[test]
    fn norm_closed_forms() {
        let g = unit(33);
        let p = ExponentField::constant(&g, 2.0).unwrap();
        assert_eq!(
            luxemburg_norm(&GridFunction::constant(&g, 0.0), &p, 1e-10).unwrap(),
            0.0
        );
        let two = luxemburg_norm(&GridFunction::constant(&g, 2.0), &p, 1e-10).unwrap();
        assert!((two - 2.0).abs() < 1e-9);
    }

    #[test]
    fn norm_variable_exponent_matches_independent_root() {
        // oracle: bisection on the exact integral ∫₀² λ^{-(2+x)} dx = (λ^{-2} − λ^{-4}) / ln λ
        let exact_rho = |l: f64| (l.powi(-2) - l.powi(-4)) / l.ln();
        let (mut lo, mut hi) = (1.0001f64, 4.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if exact_rho(mid) > 1.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let lambda_star = 0.5 * (lo + hi);
        let g = Grid::with_nodes(Domain::interval(0.0, 2.0), 513, 1).unwrap();
        let p = ExponentField::build(&g, |x| 2.0 + x[0]).unwrap();
        let n = luxemburg_norm(&GridFunction::constant(&g, 1.0), &p, 1e-12).unwrap();
        assert!((n - lambda_star).abs() < 1e-5, "{n} vs {lambda_star}");

        // on [0,1] the constant 1 has unit modular, hence unit norm
        let g = unit(257);
        let p = ExponentField::build(&g, |x| 2.0 + x[0]).unwrap();
        let n = luxemburg_norm(&GridFunction::constant(&g, 1.0), &p, 1e-12).unwrap();
        assert!((n - 1.0).abs() < 1e-11);
    }

    #[test]
    fn norm_is_homogeneous() {
        let g = unit(40);
        let p = ExponentField::build(&g, |x| 1.5 + 2.0 * x[0]).unwrap();
        let u = GridFunction::from_fn(&g, |x| (5.0 * x[0]).sin() + 0.3).unwrap();
        let base = luxemburg_norm(&u, &p, 1e-12).unwrap();
        for c in [-3.0, 0.01, 7.5] {
            let scaled = luxemburg_norm(&u.map(|v| c * v).unwrap(), &p, 1e-12).unwrap();
            assert!((scaled - c.abs() * base).abs() <= 1e-10 * (1.0 + scaled));
        }
    }

    #[test]
    fn scaling_drives_modular_and_norm_to_zero_monotonically() {
        let g = unit(64);
        let p = ExponentField::build(&g, |x| 2.0 + x[0]).unwrap();
        let u = GridFunction::from_fn(&g, |x| 3.0 * x[0] - 1.0).unwrap();
        let mut last = (f64::INFINITY, f64::INFINITY);
        for k in 0..=10 {
            let t = 0.5f64.powi(k);
            let tu = u.map(|v| t * v).unwrap();
            let cur = (
                modular(&tu, &p).unwrap(),
                luxemburg_norm(&tu, &p, 1e-12).unwrap(),
            );
            assert!(cur.0 < last.0 && cur.1 < last.1);
            last = cur;
        }
        assert!(last.0 < 1e-5 && last.1 < 2e-3);
    }

    #[test]
    fn modular_norm_relation_examples() {
        let g = unit(64);
        let p2 = ExponentField::constant(&g, 2.0).unwrap();
        let r = check_modular_norm_relations(&GridFunction::constant(&g, 1.0), &p2, 1e-10).unwrap();
        assert!(r.passed(), "{r}");
        let r = check_modular_norm_relations(&GridFunction::constant(&g, 0.5), &p2, 1e-10).unwrap();
        assert!(r.passed(), "{r}");
        assert!((r.items[1].lhs - 0.25).abs() < 1e-9 && (r.items[1].rhs - 0.25).abs() < 1e-12);

        let mixed = ExponentField::build(&g, |x| if x[0] < 0.5 { 2.0 } else { 3.0 }).unwrap();
        let r =
            check_modular_norm_relations(&GridFunction::constant(&g, 2.0), &mixed, 1e-10).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.items[0].lhs > 1.0);
    }

    #[test]
    fn holder_examples() {
        let g = unit(64);
        let p2 = ExponentField::constant(&g, 2.0).unwrap();
        let one = GridFunction::constant(&g, 1.0);
        let r = check_holder_pairing(&one, &one, &p2, 1e-10).unwrap();
        assert!(r.passed());
        // 1/p⁻ + 1/(p′)⁻ = 1 for p ≡ 2, so the bound is attained
        assert!((r.items[0].lhs - 1.0).abs() < 1e-12 && (r.items[0].rhs - 1.0).abs() < 1e-8);

        let u = GridFunction::from_fn(&g, |x| x[0]).unwrap();
        let v = GridFunction::from_fn(&g, |x| 1.0 - x[0]).unwrap();
        let p = ExponentField::build(&g, |x| 2.0 + x[0]).unwrap();
        assert!(check_holder_pairing(&u, &v, &p, 1e-10).unwrap().passed());
    }

    #[test]
    fn holder_with_equal_arguments_is_cauchy_schwarz_equality() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let g = unit(64);
        let p2 = ExponentField::constant(&g, 2.0).unwrap();
        let u = GridFunction::new(
            g.clone(),
            (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let r = check_holder_pairing(&u, &u, &p2, 1e-10).unwrap();
        // direct: ∫u² ≤ 1·(∫u²)^{1/2}(∫u²)^{1/2}, attained
        let l2 = u.map(|v| v * v).unwrap().integral();
        assert!((r.items[0].lhs - l2).abs() < 1e-12);
        assert!((r.items[0].rhs - l2).abs() < 1e-8 * l2);
        assert!(r.passed());
    }

    #[test]
    fn holder_rejects_exponent_near_one() {
        let g = unit(8);
        let p = ExponentField::constant(&g, 1.0 + 1e-8).unwrap();
        let one = GridFunction::constant(&g, 1.0);
        assert!(check_holder_pairing(&one, &one, &p, 1e-10).is_err());
    }

    #[test]
    fn product_lemma_examples() {
        let g = unit(64);
        let p2 = ExponentField::constant(&g, 2.0).unwrap();
        let r = check_product_lemma(&GridFunction::constant(&g, 1.0), &p2, &p2, 1e-10).unwrap();
        assert!(r.passed());
        assert!((r.items[0].rhs - 1.0).abs() < 1e-9);

        let r = check_product_lemma(&GridFunction::constant(&g, 2.0), &p2, &p2, 1e-10).unwrap();
        assert!(r.passed());
        assert!((r.items[0].lhs - 4.0).abs() < 1e-8 && (r.items[0].rhs - 4.0).abs() < 1e-8);

        let f = GridFunction::from_fn(&g, |x| 1.0 + x[0]).unwrap();
        let p = ExponentField::build(&g, |x| 2.0 + 0.5 * x[0]).unwrap();
        let r = check_product_lemma(&f, &p, &p2, 1e-10).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.notes[0].contains("(ii)"));
    }
}
