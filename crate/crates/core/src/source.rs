//! Right-hand sides f(x, t, η) together with their structural constants.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exponent::ExponentField;
use crate::grid::{norm, Point};
use crate::report::CheckReport;

/// Range [−T, T] of the state variable sampled by [`validate_growth`]; the
/// preset φ terms are sized for it.
pub const GROWTH_T: f64 = 10.0;
/// Radius of the η ball sampled by [`validate_growth`].
pub const GROWTH_ETA: f64 = 10.0;

type Eval = dyn Fn(Point, f64, Point) -> f64 + Send + Sync;

/// f(x, t, η) with the growth data |f| ≤ γ(|t|)|η|^{p(x)−1} + φ(x).
#[derive(Clone)]
pub struct SourceSpec {
    name: String,
    eval: Arc<Eval>,
    gamma: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    phi: Arc<dyn Fn(Point) -> f64 + Send + Sync>,
    pub lipschitz_eta: f64,
    pub monotone_t: bool,
    /// f depends on x only.
    pub state_free: bool,
}

impl fmt::Debug for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceSpec")
            .field("name", &self.name)
            .field("lipschitz_eta", &self.lipschitz_eta)
            .field("monotone_t", &self.monotone_t)
            .field("state_free", &self.state_free)
            .finish()
    }
}

impl SourceSpec {
    /// A general source; growth data defaults to γ ≡ 0, φ ≡ 0, which callers
    /// override with the builder methods.
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(Point, f64, Point) -> f64 + Send + Sync + 'static,
    ) -> Self {
        SourceSpec {
            name: name.into(),
            eval: Arc::new(eval),
            gamma: Arc::new(|_| 0.0),
            phi: Arc::new(|_| 0.0),
            lipschitz_eta: 0.0,
            monotone_t: false,
            state_free: false,
        }
    }

    pub fn with_gamma(mut self, gamma: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.gamma = Arc::new(gamma);
        self
    }

    pub fn with_phi(mut self, phi: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        self.phi = Arc::new(phi);
        self
    }

    pub fn with_lipschitz_eta(mut self, l: f64) -> Self {
        self.lipschitz_eta = l;
        self
    }

    pub fn with_monotone_t(mut self, flag: bool) -> Self {
        self.monotone_t = flag;
        self
    }

    pub fn with_state_free(mut self, flag: bool) -> Self {
        self.state_free = flag;
        self
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(c: f64) -> Self {
        SourceSpec::new(format!("constant({c})"), move |_, _, _| c)
            .with_phi(move |_| c.abs())
            .with_monotone_t(true)
            .with_state_free(true)
    }

    /// f = f(x) only.
    pub fn of_x(
        name: impl Into<String>,
        f: impl Fn(Point) -> f64 + Send + Sync + Clone + 'static,
    ) -> Self {
        let g = f.clone();
        SourceSpec::new(name, move |x, _, _| f(x))
            .with_phi(move |x| g(x).abs())
            .with_monotone_t(true)
            .with_state_free(true)
    }

    /// f = c + a·t + b·|η|.
    pub fn linear(c: f64, a: f64, b: f64) -> Self {
        SourceSpec::new(format!("linear({c},{a},{b})"), move |_, t, eta| {
            c + a * t + b * norm(eta)
        })
        .with_gamma(move |_| b.abs())
        .with_phi(move |_| c.abs() + a.abs() * GROWTH_T)
        .with_lipschitz_eta(b.abs())
        .with_monotone_t(a <= 0.0)
        .with_state_free(a == 0.0 && b == 0.0)
    }

    /// f = c·|η|^k with declared γ ≡ |c|.
    pub fn gradient_power(c: f64, k: f64) -> Self {
        SourceSpec::new(format!("gradient_power({c},{k})"), move |_, _, eta| {
            c * norm(eta).powf(k)
        })
        .with_gamma(move |_| c.abs())
        .with_lipschitz_eta(if k == 1.0 { c.abs() } else { f64::INFINITY })
        .with_monotone_t(true)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: Point, t: f64, eta: Point) -> f64 {
        (self.eval)(x, t, eta)
    }

    pub fn gamma(&self, t_abs: f64) -> f64 {
        (self.gamma)(t_abs)
    }

    pub fn phi(&self, x: Point) -> f64 {
        (self.phi)(x)
    }
}

/// Samples random (x, t, η) and checks the growth bound, the declared
/// monotonicity in t and the declared Lipschitz constant in η.
pub fn validate_growth(
    f: &SourceSpec,
    p: &ExponentField,
    samples: usize,
    seed: u64,
) -> Result<CheckReport> {
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be >= 1".into()));
    }
    let grid = p.grid();
    let dim = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new(format!("growth {}", f.name()), 1e-9);
    let eta_in_ball = |rng: &mut ChaCha8Rng| loop {
        let e = [
            rng.gen_range(-GROWTH_ETA..=GROWTH_ETA),
            if dim == 2 {
                rng.gen_range(-GROWTH_ETA..=GROWTH_ETA)
            } else {
                0.0
            },
        ];
        if norm(e) <= GROWTH_ETA {
            return e;
        }
    };

    let mut worst_growth: Option<(f64, f64, f64)> = None;
    let mut worst_mono: Option<(f64, f64, f64)> = None;
    let mut worst_lip: Option<(f64, f64, f64)> = None;
    let relative = |lhs: f64, rhs: f64| (rhs - lhs) / 1.0f64.max(lhs.abs()).max(rhs.abs());
    let keep = |slot: &mut Option<(f64, f64, f64)>, lhs: f64, rhs: f64| {
        let m = relative(lhs, rhs);
        if slot.is_none_or(|(_, _, w)| m < w) {
            *slot = Some((lhs, rhs, m));
        }
    };

    for _ in 0..samples {
        let node = rng.gen_range(0..grid.len());
        let x = grid.point(node);
        let px = p.value(node);
        let t = rng.gen_range(-GROWTH_T..=GROWTH_T);
        let eta = eta_in_ball(&mut rng);
        let val = f.eval(x, t, eta);
        let bound = f.gamma(t.abs()) * norm(eta).powf(px - 1.0) + f.phi(x);
        keep(&mut worst_growth, val.abs(), bound);

        if f.monotone_t {
            let t2 = rng.gen_range(t..=GROWTH_T);
            keep(&mut worst_mono, f.eval(x, t2, eta), val);
        }
        if f.lipschitz_eta.is_finite() {
            let eta2 = eta_in_ball(&mut rng);
            let d = norm([eta[0] - eta2[0], eta[1] - eta2[1]]);
            keep(
                &mut worst_lip,
                (val - f.eval(x, t, eta2)).abs(),
                f.lipschitz_eta * d,
            );
        }
    }
    for (label, slot) in [
        ("|f| <= gamma |eta|^(p-1) + phi", worst_growth),
        ("non-increasing in t", worst_mono),
        ("Lipschitz in eta", worst_lip),
    ] {
        if let Some((lhs, rhs, m)) = slot {
            report.push_margin(label, lhs, rhs, m);
        }
    }
    report.note(format!(
        "samples {samples}, seed {seed}, t in [-{GROWTH_T}, {GROWTH_T}], |eta| <= {GROWTH_ETA}"
    ));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Domain, Grid};

    fn p2() -> ExponentField {
        let g = Grid::with_nodes(Domain::rect(0.0, 1.0, 0.0, 1.0), 9, 9).unwrap();
        ExponentField::constant(&g, 2.0).unwrap()
    }

    #[test]
    fn zero_source_passes() {
        let r = validate_growth(&SourceSpec::zero(), &p2(), 500, 1).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn damped_gradient_source_passes() {
        let r = validate_growth(&SourceSpec::linear(0.0, -1.0, 1.0), &p2(), 2000, 2).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.items.len(), 3);
    }

    #[test]
    fn cubic_gradient_growth_is_reported() {
        let r = validate_growth(&SourceSpec::gradient_power(1.0, 3.0), &p2(), 2000, 3).unwrap();
        assert!(!r.passed());
        assert!(r.items[0].lhs > r.items[0].rhs);
    }

    #[test]
    fn wrong_monotonicity_flag_is_reported() {
        let f = SourceSpec::linear(0.0, 1.0, 0.0)
            .with_monotone_t(true)
            .with_phi(|_| GROWTH_T);
        let r = validate_growth(&f, &p2(), 500, 4).unwrap();
        assert!(!r.passed());
        assert!(validate_growth(&f, &p2(), 0, 4).is_err());
    }
}
