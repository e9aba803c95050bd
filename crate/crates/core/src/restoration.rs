//! Variable-exponent image restoration: the piecewise energy density that is
//! quadratic-like below β and linear above, an exponent map adapted to the
//! smoothed image gradient, and the gradient flow
//! u_t = div F(x, Du) − 2(u − I).

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discrete::{ClrFlux, FluxModel, VariationalScheme};
use crate::error::{Error, Result};
use crate::exponent::ExponentField;
use crate::grid::{dot, Domain, Grid, GridFunction, NeumaierSum, Point};
use crate::solver::BandedCholesky;

/// Lower clamp of the image exponent; the rest of the toolkit needs p⁻ > 1.
pub const P_FLOOR: f64 = 1.0 + 1e-3;

/// Gray image with unit pixel pitch, intensities in [0, 1], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl ImageGrid {
    /// Clamps every intensity into [0, 1]; non-finite values are rejected.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidGrid(format!(
                "image must be at least 2x2, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(k) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite intensity at pixel {k}"
            )));
        }
        let pixels = pixels.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(ImageGrid {
            width,
            height,
            pixels,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Intensity at column `x`, row `y`.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Node grid with h = 1; node (i, j) is pixel column i, row j.
    pub fn grid(&self) -> Grid {
        let domain = Domain::rect(0.0, (self.width - 1) as f64, 0.0, (self.height - 1) as f64);
        Grid::with_nodes(domain, self.width, self.height).expect("at least 2x2 by construction")
    }

    pub fn to_grid_function(&self) -> GridFunction {
        GridFunction::new(self.grid(), self.pixels.clone()).expect("sizes agree by construction")
    }

    fn check_shape(&self, other: &ImageGrid, what: &str) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Variance over all rows and the given column range.
    pub fn column_band_variance(&self, cols: Range<usize>) -> f64 {
        let vals: Vec<f64> = (0..self.height)
            .flat_map(|y| cols.clone().map(move |x| (x, y)))
            .map(|(x, y)| self.get(x, y))
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }

    /// Per row, the column c maximizing |u(c+1) − u(c)|.
    pub fn row_edge_columns(&self) -> Vec<usize> {
        (0..self.height)
            .map(|y| {
                let mut best = (0, f64::NEG_INFINITY);
                for x in 0..self.width - 1 {
                    let d = (self.get(x + 1, y) - self.get(x, y)).abs();
                    if d > best.1 {
                        best = (x, d);
                    }
                }
                best.0
            })
            .collect()
    }
}

/// A vertical step between `low` (columns < width/2) and `high`, plus uniform
/// noise of half-width `noise` from a seeded generator.
pub fn step_edge(
    width: usize,
    height: usize,
    low: f64,
    high: f64,
    noise: f64,
    seed: u64,
) -> Result<ImageGrid> {
    if !(noise >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise must be >= 0, got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = Vec::with_capacity(width * height);
    for _ in 0..height {
        for x in 0..width {
            let base = if x < width / 2 { low } else { high };
            let n = if noise > 0.0 {
                rng.gen_range(-noise..=noise)
            } else {
                0.0
            };
            px.push(base + n);
        }
    }
    ImageGrid::new(width, height, px)
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian blur, kernel radius ⌈3σ⌉, symmetric reflection at the
/// borders; σ = 0 is the identity.
pub fn gaussian_blur(image: &ImageGrid, sigma: f64) -> Result<ImageGrid> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);
    let (w, h) = (image.width, image.height);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, kw) in kernel.iter().enumerate() {
                    let d = t as isize - radius;
                    let (sx, sy) = if horizontal {
                        (reflect(x as isize + d, w), y)
                    } else {
                        (x, reflect(y as isize + d, h))
                    };
                    acc += kw * src[sy * w + sx];
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    let tmp = pass(&image.pixels, true);
    ImageGrid::new(w, h, pass(&tmp, false))
}

/// p(x) = 1 + 1/(1 + k|D(G_σ * I)(x)|²) clamped to [1 + 1e-3, 2]: near 1 on
/// edges, near 2 in flat regions.
pub fn build_exponent_from_image(image: &ImageGrid, sigma: f64, k: f64) -> Result<ExponentField> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::InvalidParameter(format!("k must be > 0, got {k}")));
    }
    let smooth = gaussian_blur(image, sigma)?.to_grid_function();
    let grid = smooth.grid().clone();
    let values = grid
        .nodes()
        .map(|n| {
            let g = smooth.nodal_gradient(n);
            (1.0 + 1.0 / (1.0 + k * dot(g, g))).clamp(P_FLOOR, 2.0)
        })
        .collect();
    ExponentField::from_values(&grid, values)
}

/// C(β, p) = β − β^p/p.
pub fn continuity_constant(beta: f64, p: f64) -> f64 {
    ClrFlux::continuity_constant(beta, p)
}

/// ∂φ/∂ξ: |ξ|^{p−2}ξ up to |ξ| = β, ξ/|ξ| beyond, 0 at ξ = 0.
pub fn clr_flux(x: Point, xi: Point, p: &ExponentField, beta: f64) -> Point {
    let s = ClrFlux { beta }.scale(dot(xi, xi).sqrt(), p.value_at(x));
    [s * xi[0], s * xi[1]]
}

/// ∫ φ(x, Du) + (u − I)² with the corner-triangle quadrature for the first
/// term and the trapezoid rule for the second.
pub fn clr_energy(u: &ImageGrid, image: &ImageGrid, p: &ExponentField, beta: f64) -> Result<f64> {
    u.check_shape(image, "clr_energy")?;
    u.grid().check_same(p.grid(), "clr_energy exponent")?;
    check_beta(beta)?;
    Ok(energy_with(
        &VariationalScheme::new(p),
        beta,
        &u.pixels,
        &image.pixels,
    ))
}

fn energy_with(scheme: &VariationalScheme, beta: f64, u: &[f64], image: &[f64]) -> f64 {
    let mut fidelity = NeumaierSum::default();
    for ((a, b), w) in u.iter().zip(image).zip(scheme.node_weights()) {
        fidelity.add(w * (a - b) * (a - b));
    }
    scheme.energy(&ClrFlux { beta }, u) + fidelity.total()
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || beta.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "beta must be > 0, got {beta}"
        )));
    }
    Ok(())
}

/// Time discretization of the flow.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FlowScheme {
    /// u⁺ = u − dt·(−div F(Du) + 2(u − I)); stable only below the heuristic
    /// dt ≤ h²/(4·max slope), which p < 2 makes arbitrarily small.
    Explicit,
    /// Diffusivity |Du|^{p−2} (or 1/|Du|) frozen at the old step, everything
    /// else implicit. Each step minimizes a quadratic majorant of the energy
    /// plus Σ w(u − uⁿ)²/(2dt), so the energy never increases when the
    /// diffusivity is nonincreasing in |Du| (β ≥ 1).
    #[default]
    SemiImplicit,
}

/// Gradients below this are lifted before freezing the diffusivity.
pub const LAGGED_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowOptions {
    pub scheme: FlowScheme,
    pub beta: f64,
    pub dt: f64,
    pub steps: usize,
    /// Hold the border pixels at their initial values instead of the natural
    /// (Neumann) boundary condition.
    pub dirichlet: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            scheme: FlowScheme::SemiImplicit,
            beta: 1.0,
            dt: 0.2,
            steps: 100,
            dirichlet: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowOutcome {
    pub image: ImageGrid,
    /// Energy before the first step and after every step.
    pub energy: Vec<f64>,
    /// Pixels clamped into [0, 1] at each step.
    pub clamped: Vec<usize>,
    /// h²/(4·max flux slope) at the initial state.
    pub stability_limit: f64,
    pub warnings: Vec<String>,
}

/// Time stepping for u_t = div F(x, Du) − 2(u − I), followed by a clamp to
/// [0, 1] at every step. The clamp never raises the energy: it shrinks every
/// difference and moves u toward I ∈ [0, 1].
pub fn evolve_flow(
    u0: &ImageGrid,
    image: &ImageGrid,
    p: &ExponentField,
    opts: &FlowOptions,
) -> Result<FlowOutcome> {
    u0.check_shape(image, "evolve_flow")?;
    u0.grid().check_same(p.grid(), "evolve_flow exponent")?;
    check_beta(opts.beta)?;
    if !(opts.dt > 0.0) || !opts.dt.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "dt must be > 0, got {}",
            opts.dt
        )));
    }
    if opts.steps == 0 {
        return Err(Error::InvalidParameter("steps must be >= 1".into()));
    }
    let scheme = VariationalScheme::new(p);
    let model = ClrFlux { beta: opts.beta };
    let grid = u0.grid();
    let mut warnings = Vec::new();
    if opts.beta < 1.0 && opts.scheme == FlowScheme::SemiImplicit {
        warnings.push(format!(
            "beta = {} < 1: the frozen diffusivity jumps up at |Du| = beta",
            opts.beta
        ));
    }
    if opts.beta != 1.0 {
        warnings.push(format!(
            "beta = {} makes the flux discontinuous where |Du| = beta",
            opts.beta
        ));
    }
    let slope = scheme.max_slope(&model, &u0.pixels);
    let stability_limit = if slope > 0.0 {
        0.25 / slope
    } else {
        f64::INFINITY
    };
    if opts.scheme == FlowScheme::Explicit && opts.dt > stability_limit {
        warnings.push(format!(
            "dt = {} exceeds the stability heuristic h^2/(4 max slope) = {stability_limit:.3e}",
            opts.dt
        ));
    }

    let mut u = u0.pixels.clone();
    let mut energy = Vec::with_capacity(opts.steps + 1);
    let mut clamped = Vec::with_capacity(opts.steps);
    energy.push(energy_with(&scheme, opts.beta, &u, &image.pixels));
    for step in 1..=opts.steps {
        let next = match opts.scheme {
            FlowScheme::Explicit => {
                let div = scheme.apply(&model, &u);
                (0..u.len())
                    .map(|k| {
                        if opts.dirichlet && grid.is_boundary(k) {
                            u[k]
                        } else {
                            u[k] - opts.dt * (div[k] + 2.0 * (u[k] - image.pixels[k]))
                        }
                    })
                    .collect()
            }
            FlowScheme::SemiImplicit => {
                semi_implicit_step(&scheme, &model, &grid, &u, &image.pixels, opts)?
            }
        };
        let mut count = 0;
        for (k, v) in next.into_iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::BlowUp { step });
            }
            let c = v.clamp(0.0, 1.0);
            if c != v {
                count += 1;
            }
            u[k] = c;
        }
        clamped.push(count);
        energy.push(energy_with(&scheme, opts.beta, &u, &image.pixels));
    }
    Ok(FlowOutcome {
        image: ImageGrid::new(u0.width, u0.height, u)?,
        energy,
        clamped,
        stability_limit,
        warnings,
    })
}

/// Solves [K(uⁿ) + diag(w(2 + 1/dt))] u = w(2I + uⁿ/dt) by banded Cholesky,
/// K the frozen-diffusivity stiffness; Dirichlet rows are identity rows.
fn semi_implicit_step(
    scheme: &VariationalScheme,
    model: &ClrFlux,
    grid: &Grid,
    u: &[f64],
    image: &[f64],
    opts: &FlowOptions,
) -> Result<Vec<f64>> {
    let n = u.len();
    let bw = grid.shape()[0];
    let width = bw + 1;
    let fixed = |k: usize| opts.dirichlet && grid.is_boundary(k);
    let mut band = vec![0.0; n * width];
    let mut rhs = vec![0.0; n];
    let w = scheme.node_weights();
    for k in 0..n {
        if fixed(k) {
            band[k * width + bw] = 1.0;
            rhs[k] = u[k];
        } else {
            band[k * width + bw] = w[k] * (2.0 + 1.0 / opts.dt);
            rhs[k] = w[k] * (2.0 * image[k] + u[k] / opts.dt);
        }
    }
    scheme.lagged_edges(model, u, LAGGED_FLOOR, |a, b, wt| {
        match (fixed(a), fixed(b)) {
            (false, false) => {
                band[a * width + bw] += wt;
                band[b * width + bw] += wt;
                let (hi, lo) = if a > b { (a, b) } else { (b, a) };
                band[hi * width + (lo + bw - hi)] -= wt;
            }
            (false, true) => {
                band[a * width + bw] += wt;
                rhs[a] += wt * u[b];
            }
            (true, false) => {
                band[b * width + bw] += wt;
                rhs[b] += wt * u[a];
            }
            (true, true) => {}
        }
    });
    let chol = BandedCholesky::factor(n, bw, |i, j| band[i * width + (j + bw - i)])?;
    Ok(chol.solve(&rhs))
}
