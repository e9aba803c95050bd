//! Experiment configuration: a TOML document of flat sections, validated
//! before dispatch.

use std::path::{Path, PathBuf};

use pxlap::grid::{Domain, Grid, GridFunction};
use pxlap::profiles::{random_lipschitz, Profile};
use pxlap::{ExponentField, ExponentPreset, SourceSpec};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Norm,
    Infconv,
    Solve,
    CheckWeak,
    CheckViscosity,
    Pipeline,
    Compare,
    Denoise,
}

impl Command {
    /// Whether the command reads the given top-level config key.
    pub fn uses_section(self, section: &str) -> bool {
        const SHARED: &[&str] = &[
            "command", "grid", "exponent", "source", "boundary", "solver", "u",
        ];
        let own: &[&str] = match self {
            Command::Norm => &["norm"],
            Command::Infconv => &["infconv"],
            Command::Solve => &["exact"],
            Command::CheckWeak | Command::CheckViscosity => &["check"],
            Command::Pipeline => &["pipeline"],
            Command::Compare => &["v", "compare"],
            Command::Denoise => return matches!(section, "command" | "denoise"),
        };
        own.contains(&section) || SHARED.contains(&section)
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::Norm => "norm",
            Command::Infconv => "infconv",
            Command::Solve => "solve",
            Command::CheckWeak => "check-weak",
            Command::CheckViscosity => "check-viscosity",
            Command::Pipeline => "pipeline",
            Command::Compare => "compare",
            Command::Denoise => "denoise",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    /// Artifact directory, relative to the working directory.
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub exponent: ExponentConfig,
    #[serde(default)]
    pub source: SourceConfig,
    /// Dirichlet data for `solve` and for fields of kind `solve`.
    #[serde(default)]
    pub boundary: FieldConfig,
    /// Closed-form reference for `solve`; adds a max-error line.
    #[serde(default)]
    pub exact: Option<FieldConfig>,
    /// The function under test (the subsolution candidate for `compare`).
    #[serde(default)]
    pub u: FieldConfig,
    /// The supersolution candidate for `compare`.
    #[serde(default)]
    pub v: Option<FieldConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub norm: NormConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub infconv: InfconvConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub denoise: DenoiseConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dim: usize,
    /// Nodes per axis.
    pub n: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            dim: 1,
            n: 65,
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExponentConfig {
    Constant {
        #[serde(default = "two")]
        value: f64,
    },
    Affine {
        base: f64,
        #[serde(default)]
        slope_x: f64,
        #[serde(default)]
        slope_y: f64,
    },
    SineBump {
        base: f64,
        amplitude: f64,
    },
}

fn default_output() -> PathBuf {
    PathBuf::from("pxlap-out")
}

fn two() -> f64 {
    2.0
}

impl Default for ExponentConfig {
    fn default() -> Self {
        ExponentConfig::Constant { value: 2.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// f = c + a·t + b·|η|
    Linear {
        #[serde(default)]
        c: f64,
        #[serde(default)]
        a: f64,
        #[serde(default)]
        b: f64,
    },
    /// f = c·|η|^k
    GradientPower {
        c: f64,
        k: f64,
    },
}

/// A grid function: a closed-form profile, a random Lipschitz sample, a CSV
/// file, or the output of the solver on the shared sections.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// offset + slope·x
    Affine {
        #[serde(default)]
        slope_x: f64,
        #[serde(default)]
        slope_y: f64,
        #[serde(default)]
        offset: f64,
    },
    /// offset + coeff·|x − center|²
    Quadratic {
        #[serde(default)]
        center_x: f64,
        #[serde(default)]
        center_y: f64,
        coeff: f64,
        #[serde(default)]
        offset: f64,
    },
    /// offset + coeff·|x − center|^power
    Radial {
        #[serde(default)]
        center_x: f64,
        #[serde(default)]
        center_y: f64,
        coeff: f64,
        power: f64,
        #[serde(default)]
        offset: f64,
    },
    /// offset + amplitude·sin(π·frequency·x) (times the y factor in 2D)
    Sine {
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default)]
        offset: f64,
    },
    /// offset + coeff·|x − center|
    Abs {
        #[serde(default)]
        center_x: f64,
        #[serde(default)]
        center_y: f64,
        #[serde(default = "one")]
        coeff: f64,
        #[serde(default)]
        offset: f64,
    },
    RandomLipschitz {
        lipschitz: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Grid function CSV (`x,value` or `x,y,value`), relative to the config.
    Csv {
        path: PathBuf,
    },
    Solve,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub delta: f64,
    pub omega: f64,
    pub outer_tol: f64,
    pub max_outer: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let inner = pxlap::solver::SolverOptions::default();
        let outer = pxlap::solver::FixedPointOptions::default();
        SolverConfig {
            tol: inner.tol,
            max_iter: inner.max_iter,
            delta: inner.delta,
            omega: outer.omega,
            outer_tol: outer.tol,
            max_outer: outer.max_outer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormConfig {
    pub tol: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig {
            tol: pxlap::lebesgue::DEFAULT_NORM_TOL,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckSide {
    #[default]
    Super,
    Sub,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    /// Defaults: 10·h² for weak residuals, 10·h for viscosity margins.
    pub tol: Option<f64>,
    pub side: CheckSide,
    pub battery_size: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            tol: None,
            side: CheckSide::Super,
            battery_size: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfconvConfig {
    pub epsilons: Vec<f64>,
    /// Defaults to the smallest admissible q for p⁻.
    pub q: Option<f64>,
}

impl Default for InfconvConfig {
    fn default() -> Self {
        InfconvConfig {
            epsilons: vec![0.4, 0.2, 0.1, 0.05],
            q: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub epsilons: Vec<f64>,
    /// Defaults to 10·h.
    pub tol: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            epsilons: vec![0.05, 0.02, 0.01, 0.005],
            tol: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub center_x: f64,
    pub center_y: f64,
    /// Box side lengths, one experiment each.
    pub sides: Vec<f64>,
    /// Defaults to 10·h².
    pub weak_tol: Option<f64>,
    pub order_tol: f64,
    pub gradient_floor: f64,
    pub battery_size: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        let d = pxlap::harness::ComparisonOptions::default();
        CompareConfig {
            center_x: 0.5,
            center_y: 0.5,
            sides: vec![1.0, 0.5, 0.25],
            weak_tol: d.weak_tol,
            order_tol: d.order_tol,
            gradient_floor: d.gradient_floor,
            battery_size: d.battery_size,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeConfig {
    Explicit,
    #[default]
    SemiImplicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiseConfig {
    /// PGM input, relative to the config; absent means the synthetic step edge.
    pub input: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub low: f64,
    pub high: f64,
    pub noise: f64,
    pub seed: u64,
    pub sigma: f64,
    pub k: f64,
    pub beta: f64,
    pub dt: f64,
    pub steps: usize,
    pub dirichlet: bool,
    pub scheme: SchemeConfig,
    /// Columns this close to the middle are excluded from the flat-region
    /// variance.
    pub edge_band: usize,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig {
            input: None,
            width: 64,
            height: 64,
            low: 0.25,
            high: 0.75,
            noise: 0.1,
            seed: 7,
            sigma: 1.5,
            k: 1000.0,
            beta: 1.0,
            dt: 0.2,
            steps: 100,
            dirichlet: false,
            scheme: SchemeConfig::SemiImplicit,
            edge_band: 8,
        }
    }
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    /// The config file as given, for the manifest.
    pub path: Option<PathBuf>,
}

/// Reads `path` (if any), applies `section.key=value` overrides, fills
/// `command` when absent, deserializes and validates.
pub fn parse_config(
    path: Option<&Path>,
    command: Option<Command>,
    overrides: &[String],
) -> Result<LoadedConfig, CliError> {
    let (mut table, base_dir, text) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            let table: Table = text
                .parse()
                .map_err(|e: toml::de::Error| CliError::Parse(format!("{}: {e}", p.display())))?;
            (
                table,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
                Some(text),
            )
        }
        None => (Table::new(), PathBuf::from("."), None),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    if let Some(cmd) = command {
        match table.get("command") {
            None => {
                table.insert("command".into(), Value::String(cmd.name().into()));
            }
            Some(Value::String(s)) if s == cmd.name() => {}
            Some(other) => {
                return Err(CliError::Validation(format!(
                    "config command {other} does not match subcommand {}",
                    cmd.name()
                )))
            }
        }
    }
    let config: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| {
        // the merged table has no source positions; if the file alone is at
        // fault, re-deserializing it locates the offending line
        let located = text
            .as_deref()
            .and_then(|t| toml::from_str::<ExperimentConfig>(t).err())
            .filter(|d| d.span().is_some() && d.message() == e.message());
        match (located, path) {
            (Some(d), Some(p)) => CliError::Parse(format!("{}: {d}", p.display())),
            (_, Some(p)) => CliError::Parse(format!("{} with --set overrides: {e}", p.display())),
            (_, None) => CliError::Parse(format!("--set overrides: {e}")),
        }
    })?;
    config.validate()?;
    Ok(LoadedConfig {
        config,
        base_dir,
        path: path.map(Path::to_path_buf),
    })
}

/// `section.key=value` or `key=value`; the value is parsed as a TOML value,
/// falling back to a bare string.
fn apply_override(table: &mut Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Parse(format!("--set {spec:?}: expected key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) || parts.len() > 2 {
        return Err(CliError::Parse(format!(
            "--set {spec:?}: key must be `key` or `section.key`"
        )));
    }
    if parts.len() == 1 {
        table.insert(parts[0].into(), value);
        return Ok(());
    }
    let section = table
        .entry(parts[0])
        .or_insert_with(|| Value::Table(Table::new()));
    match section {
        Value::Table(t) => {
            t.insert(parts[1].into(), value);
            Ok(())
        }
        _ => Err(CliError::Parse(format!(
            "--set {spec:?}: {} is not a section",
            parts[0]
        ))),
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{name} must be > 0")))
    }
}

fn strictly_decreasing(name: &str, v: &[f64]) -> Result<(), CliError> {
    if v.is_empty() {
        return Err(CliError::Validation(format!("{name} must not be empty")));
    }
    for &e in v {
        positive(name, e)?;
    }
    if v.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CliError::Validation(format!(
            "{name} must be strictly decreasing"
        )));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.grid;
        if g.dim != 1 && g.dim != 2 {
            return Err(CliError::Validation(format!(
                "grid.dim must be 1 or 2, got {}",
                g.dim
            )));
        }
        if g.n < 3 {
            return Err(CliError::Validation("grid.n must be >= 3".into()));
        }
        if !(g.x_max > g.x_min) || (g.dim == 2 && !(g.y_max > g.y_min)) {
            return Err(CliError::Validation(
                "grid bounds must satisfy min < max".into(),
            ));
        }
        let s = &self.solver;
        positive("tol", s.tol)?;
        positive("solver.outer_tol", s.outer_tol)?;
        if !(s.delta >= 0.0) {
            return Err(CliError::Validation("delta must be >= 0".into()));
        }
        if !(s.omega > 0.0 && s.omega <= 1.0) {
            return Err(CliError::Validation("omega must lie in (0, 1]".into()));
        }
        if s.max_iter == 0 || s.max_outer == 0 {
            return Err(CliError::Validation(
                "solver.max_iter and solver.max_outer must be >= 1".into(),
            ));
        }
        positive("norm.tol", self.norm.tol)?;
        if let Some(t) = self.check.tol {
            positive("tol", t)?;
        }
        if self.check.battery_size == 0 || self.compare.battery_size == 0 {
            return Err(CliError::Validation("battery_size must be >= 1".into()));
        }
        match self.command {
            Command::Infconv => {
                strictly_decreasing("epsilons", &self.infconv.epsilons)?;
                if let Some(q) = self.infconv.q {
                    if !(q >= 2.0) {
                        return Err(CliError::Validation("infconv.q must be >= 2".into()));
                    }
                }
            }
            Command::Pipeline => {
                strictly_decreasing("epsilons", &self.pipeline.epsilons)?;
                if let Some(t) = self.pipeline.tol {
                    positive("tol", t)?;
                }
            }
            Command::Compare => {
                if self.v.is_none() {
                    return Err(CliError::Validation("compare needs a [v] section".into()));
                }
                if self.compare.sides.is_empty() {
                    return Err(CliError::Validation(
                        "compare.sides must not be empty".into(),
                    ));
                }
                for &side in &self.compare.sides {
                    positive("compare.sides", side)?;
                }
                if let Some(t) = self.compare.weak_tol {
                    positive("compare.weak_tol", t)?;
                }
                if !(self.compare.order_tol >= 0.0) || !(self.compare.gradient_floor >= 0.0) {
                    return Err(CliError::Validation(
                        "compare.order_tol and compare.gradient_floor must be >= 0".into(),
                    ));
                }
            }
            Command::Denoise => {
                let d = &self.denoise;
                positive("beta", d.beta)?;
                positive("dt", d.dt)?;
                positive("k", d.k)?;
                if !(d.sigma >= 0.0) {
                    return Err(CliError::Validation("sigma must be >= 0".into()));
                }
                if d.steps == 0 {
                    return Err(CliError::Validation("steps must be >= 1".into()));
                }
                if d.input.is_none() && (d.width < 2 || d.height < 2) {
                    return Err(CliError::Validation(
                        "denoise width and height must be >= 2".into(),
                    ));
                }
                if !(d.noise >= 0.0) {
                    return Err(CliError::Validation("noise must be >= 0".into()));
                }
            }
            _ => {}
        }
        if let ExponentConfig::Constant { value } = self.exponent {
            if !(value > 1.0) {
                return Err(CliError::Validation("exponent value must exceed 1".into()));
            }
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Grid, CliError> {
        let g = &self.grid;
        let domain = if g.dim == 1 {
            Domain::interval(g.x_min, g.x_max)
        } else {
            Domain::rect(g.x_min, g.x_max, g.y_min, g.y_max)
        };
        Ok(Grid::with_nodes(
            domain,
            g.n,
            if g.dim == 1 { 1 } else { g.n },
        )?)
    }

    pub fn build_exponent(&self, grid: &Grid) -> Result<ExponentField, CliError> {
        let preset = match self.exponent {
            ExponentConfig::Constant { value } => ExponentPreset::Constant { value },
            ExponentConfig::Affine {
                base,
                slope_x,
                slope_y,
            } => ExponentPreset::Affine {
                base,
                slope: [slope_x, slope_y],
            },
            ExponentConfig::SineBump { base, amplitude } => {
                ExponentPreset::SineBump { base, amplitude }
            }
        };
        Ok(preset.build(grid)?)
    }

    pub fn build_source(&self) -> SourceSpec {
        match self.source {
            SourceConfig::Zero => SourceSpec::zero(),
            SourceConfig::Constant { value } => SourceSpec::constant(value),
            SourceConfig::Linear { c, a, b } => SourceSpec::linear(c, a, b),
            SourceConfig::GradientPower { c, k } => SourceSpec::gradient_power(c, k),
        }
    }
}

/// The closed-form profile behind a field, if it has one.
pub fn profile_of(field: &FieldConfig) -> Option<Profile> {
    Some(match *field {
        FieldConfig::Zero => Profile::Constant { value: 0.0 },
        FieldConfig::Constant { value } => Profile::Constant { value },
        FieldConfig::Affine {
            slope_x,
            slope_y,
            offset,
        } => Profile::Affine {
            slope: [slope_x, slope_y],
            offset,
        },
        FieldConfig::Quadratic {
            center_x,
            center_y,
            coeff,
            offset,
        } => Profile::Quadratic {
            center: [center_x, center_y],
            coeff,
            offset,
        },
        FieldConfig::Radial {
            center_x,
            center_y,
            coeff,
            power,
            offset,
        } => Profile::Radial {
            center: [center_x, center_y],
            coeff,
            power,
            offset,
        },
        FieldConfig::Sine {
            amplitude,
            frequency,
            offset,
        } => Profile::Sine {
            amplitude,
            frequency,
            offset,
        },
        FieldConfig::Abs {
            center_x,
            center_y,
            coeff,
            offset,
        } => Profile::Abs {
            center: [center_x, center_y],
            coeff,
            offset,
        },
        FieldConfig::RandomLipschitz { .. } | FieldConfig::Csv { .. } | FieldConfig::Solve => {
            return None
        }
    })
}

/// Samples a field that does not need the solver.
pub fn sample_field(
    field: &FieldConfig,
    grid: &Grid,
    base_dir: &Path,
) -> Result<GridFunction, CliError> {
    if let Some(profile) = profile_of(field) {
        return Ok(profile.sample(grid)?);
    }
    match field {
        FieldConfig::RandomLipschitz { lipschitz, seed } => {
            Ok(random_lipschitz(grid, *lipschitz, *seed)?)
        }
        FieldConfig::Csv { path } => {
            let f = GridFunction::load_csv(&base_dir.join(path))?;
            if f.grid().shape() != grid.shape() || f.grid().dim() != grid.dim() {
                return Err(CliError::Validation(format!(
                    "{} does not match the configured grid",
                    path.display()
                )));
            }
            Ok(GridFunction::new(grid.clone(), f.into_values())?)
        }
        _ => Err(CliError::Validation(
            "field of kind `solve` needs the solver".into(),
        )),
    }
}

/// Flattens a config into sorted `section.key=value` lines, leaving out the
/// output directory so that relocated runs hash alike.
pub fn flatten(config: &ExperimentConfig) -> Vec<(String, String)> {
    let value = Value::try_from(config).expect("configs serialize");
    let mut out = Vec::new();
    flatten_into("", &value, &mut out);
    out.retain(|(k, _)| k != "output");
    out.sort();
    out
}

fn flatten_into(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    match value {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_into(&key, v, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}
