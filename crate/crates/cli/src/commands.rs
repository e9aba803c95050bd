//! Experiment dispatch. Every command renders its artifacts into memory; the
//! caller writes them and the manifest.

use std::path::Path;

use pxlap::exponent::{choose_q, log_holder_constant};
use pxlap::grid::{Grid, GridFunction};
use pxlap::harness::{self, ComparisonOptions};
use pxlap::inf_convolution::{convolution_suite, inf_convolve};
use pxlap::lebesgue::{check_modular_norm_relations, luxemburg_norm, modular, sobolev_norm};
use pxlap::pgm::{write_pgm, PgmFormat};
use pxlap::restoration::{self, FlowOptions, FlowScheme, ImageGrid};
use pxlap::solver::{solve_fixed_point, FixedPointOptions, SolveOutcome, SolverOptions};
use pxlap::{CheckReport, ExponentField, SourceSpec};

use crate::config::{
    sample_field, CheckSide, Command, ExperimentConfig, FieldConfig, LoadedConfig, SchemeConfig,
};
use crate::error::CliError;

/// A file produced by a run, held in memory until written.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

/// An input file the run read, recorded by name and content hash.
#[derive(Clone, Debug, PartialEq)]
pub struct InputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub reports: Vec<CheckReport>,
    /// (metric, value) rows of summary.csv.
    pub summary: Vec<(String, String)>,
    pub artifacts: Vec<Artifact>,
    pub inputs: Vec<InputFile>,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(CheckReport::passed)
    }

    fn metric(&mut self, name: &str, value: impl ToString) {
        self.summary.push((name.to_string(), value.to_string()));
    }

    fn artifact(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.artifacts.push(Artifact {
            name: name.into(),
            bytes,
        });
    }

    fn grid_csv(&mut self, name: impl Into<String>, f: &GridFunction) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f.write_csv(&mut buf)?;
        self.artifact(name, buf);
        Ok(())
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    base_dir: &'a Path,
    grid: Grid,
    p: ExponentField,
    f: SourceSpec,
}

impl Context<'_> {
    fn field(&self, field: &FieldConfig, out: &mut RunOutput) -> Result<GridFunction, CliError> {
        match field {
            FieldConfig::Solve => Ok(self.solve()?.u),
            FieldConfig::Csv { path } => {
                let bytes = std::fs::read(self.base_dir.join(path))
                    .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                out.inputs.push(InputFile {
                    name: path.display().to_string(),
                    bytes,
                });
                sample_field(field, &self.grid, self.base_dir)
            }
            other => sample_field(other, &self.grid, self.base_dir),
        }
    }

    fn solve(&self) -> Result<SolveOutcome, CliError> {
        if matches!(self.cfg.boundary, FieldConfig::Solve) {
            return Err(CliError::Validation(
                "boundary data cannot be of kind `solve`".into(),
            ));
        }
        let g = sample_field(&self.cfg.boundary, &self.grid, self.base_dir)?;
        let s = &self.cfg.solver;
        let inner = SolverOptions {
            tol: s.tol,
            max_iter: s.max_iter,
            delta: s.delta,
        };
        let outer = FixedPointOptions {
            tol: s.outer_tol,
            max_outer: s.max_outer,
            omega: s.omega,
        };
        Ok(solve_fixed_point(&self.p, &g, &self.f, &inner, &outer)?)
    }
}

/// Runs one validated experiment.
pub fn run(loaded: &LoadedConfig) -> Result<RunOutput, CliError> {
    let cfg = &loaded.config;
    cfg.validate()?;
    let mut out = RunOutput::default();
    if let Some(path) = &loaded.path {
        let bytes =
            std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        out.inputs.push(InputFile {
            name: "config".into(),
            bytes,
        });
    }
    if cfg.command == Command::Denoise {
        denoise(cfg, &loaded.base_dir, &mut out)?;
        return Ok(out);
    }
    let grid = cfg.build_grid()?;
    let ctx = Context {
        cfg,
        base_dir: &loaded.base_dir,
        p: cfg.build_exponent(&grid)?,
        f: cfg.build_source(),
        grid,
    };
    match cfg.command {
        Command::Norm => norm(&ctx, &mut out)?,
        Command::Infconv => infconv(&ctx, &mut out)?,
        Command::Solve => solve(&ctx, &mut out)?,
        Command::CheckWeak => check_weak(&ctx, &mut out)?,
        Command::CheckViscosity => check_viscosity(&ctx, &mut out)?,
        Command::Pipeline => pipeline(&ctx, &mut out)?,
        Command::Compare => compare(&ctx, &mut out)?,
        Command::Denoise => unreachable!("handled above"),
    }
    Ok(out)
}

fn norm(ctx: &Context, out: &mut RunOutput) -> Result<(), CliError> {
    let u = ctx.field(&ctx.cfg.u, out)?;
    let tol = ctx.cfg.norm.tol;
    out.metric("luxemburg_norm", luxemburg_norm(&u, &ctx.p, tol)?);
    out.metric("modular", modular(&u, &ctx.p)?);
    out.metric("sobolev_norm", sobolev_norm(&u, &ctx.p, tol)?);
    out.metric("p_minus", ctx.p.p_minus());
    out.metric("p_plus", ctx.p.p_plus());
    out.metric("log_holder_constant", log_holder_constant(&ctx.p));
    out.reports
        .push(check_modular_norm_relations(&u, &ctx.p, tol)?);
    Ok(())
}

fn infconv(ctx: &Context, out: &mut RunOutput) -> Result<(), CliError> {
    let u = ctx.field(&ctx.cfg.u, out)?;
    let eps = &ctx.cfg.infconv.epsilons;
    let q = match ctx.cfg.infconv.q {
        Some(q) => q,
        None => choose_q(ctx.p.p_minus())?,
    };
    out.metric("q", q);
    for (i, &e) in eps.iter().enumerate() {
        let res = inf_convolve(&u, e, q)?;
        out.metric(&format!("r_eps[{i}]"), res.r_eps);
        let mut buf = Vec::new();
        res.write_csv(&mut buf)?;
        out.artifact(format!("infconv_{i}.csv"), buf);
    }
    out.reports.extend(convolution_suite(&u, eps, q)?);
    Ok(())
}

fn solve(ctx: &Context, out: &mut RunOutput) -> Result<(), CliError> {
    let res = ctx.solve()?;
    out.grid_csv("solution.csv", &res.u)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "energy", "change"])?;
    for (k, e) in res.energy_history.iter().enumerate() {
        let change = if k == 0 {
            String::new()
        } else {
            res.energy_changes
                .get(k - 1)
                .map_or(String::new(), f64::to_string)
        };
        w.write_record([k.to_string(), e.to_string(), change])?;
    }
    out.artifact(
        "energy.csv",
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))?,
    );
    out.metric("iterations", res.iterations);
    out.metric("outer_iterations", res.outer_history.len());
    out.metric("final_residual", res.final_residual);
    if let Some(exact) = &ctx.cfg.exact {
        let reference = ctx.field(exact, out)?;
        let err = res
            .u
            .values()
            .iter()
            .zip(reference.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        out.metric("max_error", err);
        out.metric("h", ctx.grid.h());
    }
    Ok(())
}

fn sides(side: CheckSide) -> (bool, bool) {
    match side {
        CheckSide::Super => (true, false),
        CheckSide::Sub => (false, true),
        CheckSide::Both => (true, true),
    }
}

fn check_weak(ctx: &Context, out: &mut RunOutput) -> Result<(), CliError> {
    let u = ctx.field(&ctx.cfg.u, out)?;
    let tol = ctx
        .cfg
        .check
        .tol
        .unwrap_or_else(|| harness::default_weak_tol(&ctx.grid));
    let battery = harness::bump_battery(&ctx.grid, ctx.grid.domain(), ctx.cfg.check.battery_size)?;
    out.metric("tol", tol);
    out.metric("battery", battery.len());
    let (sup, sub) = sides(ctx.cfg.check.side);
    if sup {
        out.reports.push(harness::check_weak_supersolution(
            &u, &ctx.p, &ctx.f, &battery, tol,
        )?);
    }
    if sub {
        out.reports.push(harness::check_weak_subsolution(
            &u, &ctx.p, &ctx.f, &battery, tol,
        )?);
    }
    Ok(())
}

fn check_viscosity(ctx: &Context, out: &mut RunOutput) -> Result<(), CliError> {
    let u = ctx.field(&ctx.cfg.u, out)?;
    let tol = ctx
        .cfg
        .check
        .tol
        .unwrap_or_else(|| harness::default_viscosity_tol(&ctx.grid));
    out.metric("tol", tol);
    let (sup, sub) = sides(ctx.cfg.check.side);
    if sup {
        out.reports.push(harness::check_viscosity_supersolution(
            &u, &ctx.p, &ctx.f, tol,
        )?);
    }
    if sub {
        out.reports.push(harness::check_viscosity_subsolution(
            &u, &ctx.p, &ctx.f, tol,
        )?);
    }
    Ok(())
}

fn pipeline(ctx: &Context, out: &mut RunOutput) -> Result<(), CliError> {
    let u = ctx.field(&ctx.cfg.u, out)?;
    let tol = ctx
        .cfg
        .pipeline
        .tol
        .unwrap_or_else(|| harness::default_viscosity_tol(&ctx.grid));
    let report =
        harness::pipeline_viscosity_to_weak(&u, &ctx.p, &ctx.f, &ctx.cfg.pipeline.epsilons, tol)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    out.artifact("pipeline.csv", buf);
    out.metric("q", report.q);
    out.metric("tol", tol);
    out.reports.extend(report.reports().into_iter().cloned());
    Ok(())
}

fn compare(ctx: &Context, out: &mut RunOutput) -> Result<(), CliError> {
    let c = &ctx.cfg.compare;
    let u = ctx.field(&ctx.cfg.u, out)?;
    let v_cfg = ctx
        .cfg
        .v
        .as_ref()
        .ok_or_else(|| CliError::Validation("compare needs a [v] section".into()))?;
    let v = ctx.field(v_cfg, out)?;
    let opts = ComparisonOptions {
        weak_tol: c.weak_tol,
        order_tol: c.order_tol,
        gradient_floor: c.gradient_floor,
        battery_size: c.battery_size,
    };
    let sweep = harness::comparison_sweep(
        &u,
        &v,
        &ctx.p,
        &ctx.f,
        [c.center_x, c.center_y],
        &c.sides,
        &opts,
    )?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["side", "x_min", "x_max", "y_min", "y_max", "ran", "ordered"])?;
    for (i, (side, o)) in c.sides.iter().zip(&sweep.outcomes).enumerate() {
        let r = &o.region;
        w.write_record([
            side.to_string(),
            r.lo[0].to_string(),
            r.hi[0].to_string(),
            r.lo[1].to_string(),
            r.hi[1].to_string(),
            o.ran().to_string(),
            o.passed().to_string(),
        ])?;
        for rep in o.reports() {
            let mut rep = rep.clone();
            rep.name = format!("box{i} {}", rep.name);
            out.reports.push(rep);
        }
    }
    out.artifact(
        "compare.csv",
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))?,
    );
    out.metric(
        "empirical_delta",
        sweep
            .empirical_delta
            .map_or("none".to_string(), |d| d.to_string()),
    );
    Ok(())
}

fn denoise(cfg: &ExperimentConfig, base_dir: &Path, out: &mut RunOutput) -> Result<(), CliError> {
    let d = &cfg.denoise;
    let image = match &d.input {
        Some(path) => {
            let full = base_dir.join(path);
            let bytes = std::fs::read(&full)
                .map_err(|e| CliError::Io(format!("{}: {e}", full.display())))?;
            let img = pxlap::pgm::read_pgm(bytes.as_slice())?;
            out.inputs.push(InputFile {
                name: path.display().to_string(),
                bytes,
            });
            img
        }
        None => restoration::step_edge(d.width, d.height, d.low, d.high, d.noise, d.seed)?,
    };
    let p = restoration::build_exponent_from_image(&image, d.sigma, d.k)?;
    let opts = FlowOptions {
        scheme: match d.scheme {
            SchemeConfig::Explicit => FlowScheme::Explicit,
            SchemeConfig::SemiImplicit => FlowScheme::SemiImplicit,
        },
        beta: d.beta,
        dt: d.dt,
        steps: d.steps,
        dirichlet: d.dirichlet,
    };
    let flow = restoration::evolve_flow(&image, &image, &p, &opts)?;

    let mut buf = Vec::new();
    write_pgm(&flow.image, PgmFormat::Binary, &mut buf)?;
    out.artifact("denoised.pgm", buf);
    if d.input.is_none() {
        let mut buf = Vec::new();
        write_pgm(&image, PgmFormat::Binary, &mut buf)?;
        out.artifact("input.pgm", buf);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "energy", "clamped"])?;
    for (k, e) in flow.energy.iter().enumerate() {
        let clamped = if k == 0 { 0 } else { flow.clamped[k - 1] };
        w.write_record([k.to_string(), e.to_string(), clamped.to_string()])?;
    }
    out.artifact(
        "energy.csv",
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))?,
    );

    let mut report = CheckReport::new("energy non-increasing", 1e-12);
    for (k, e) in flow.energy.windows(2).enumerate() {
        report.push_at_most_relative(format!("step {}", k + 1), e[1], e[0]);
    }
    for w in &flow.warnings {
        report.note(w.clone());
    }
    out.reports.push(report);

    let (variance_before, variance_after) = flat_variance(&image, &flow.image, d.edge_band);
    out.metric("p_minus", p.p_minus());
    out.metric("p_plus", p.p_plus());
    out.metric("energy_initial", flow.energy[0]);
    out.metric("energy_final", flow.energy[flow.energy.len() - 1]);
    out.metric("stability_limit", flow.stability_limit);
    out.metric("flat_variance_before", variance_before);
    out.metric("flat_variance_after", variance_after);
    out.metric(
        "flat_variance_reduction",
        1.0 - variance_after / variance_before,
    );
    out.metric("edge_displacement", edge_displacement(&image, &flow.image));
    Ok(())
}

/// Mean variance of the column bands left and right of the middle, each
/// `band` columns away from it.
pub fn flat_variance(before: &ImageGrid, after: &ImageGrid, band: usize) -> (f64, f64) {
    let w = before.width();
    let mid = w / 2;
    let left = 0..mid.saturating_sub(band).max(1);
    let right = (mid + band).min(w - 1)..w;
    let v = |img: &ImageGrid| {
        0.5 * (img.column_band_variance(left.clone()) + img.column_band_variance(right.clone()))
    };
    (v(before), v(after))
}

/// Largest per-row shift of the strongest horizontal jump.
pub fn edge_displacement(before: &ImageGrid, after: &ImageGrid) -> usize {
    let a = before.row_edge_columns();
    let b = after.row_edge_columns();
    a.iter()
        .zip(&b)
        .map(|(x, y)| x.abs_diff(*y))
        .max()
        .unwrap_or(0)
}
