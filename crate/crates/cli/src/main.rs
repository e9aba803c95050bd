use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use pxlap_cli::config::{flatten, parse_config, Command};
use pxlap_cli::manifest::write_run;
use pxlap_cli::{exit_code, run, CliError};

/// Variable-exponent p(x)-Laplace experiments.
///
/// Exit status: 0 when every check passes (or a solve succeeds), 1 when a
/// check fails, 2 on invalid input or runtime errors.
#[derive(Parser, Debug)]
#[command(name = "pxlap", version)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML experiment config; keys absent from it take the defaults below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set solver.tol=1e-9` or `--set u.preset=abs`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Artifact directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct DenoiseArgs {
    #[command(flatten)]
    common: Common,
    /// Binary or ASCII PGM to restore (default: the synthetic step edge).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Edge sensitivity of the exponent map.
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Hold border pixels fixed.
    #[arg(long)]
    dirichlet: bool,
    /// `semi-implicit` or `explicit`.
    #[arg(long)]
    scheme: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Luxemburg and Sobolev norms of [u] and the norm-modular relations.
    Norm(Common),
    /// Inf-convolution sweep of [u] with the property checks.
    Infconv(Common),
    /// Dirichlet solve with [boundary] data; [exact] adds a max-error line.
    Solve(Common),
    /// Weak sub/supersolution residuals of [u] against a bump battery.
    CheckWeak(Common),
    /// Viscosity sub/supersolution margins of [u] through touching quadratics.
    CheckViscosity(Common),
    /// Inf-convolution pipeline from a viscosity to a weak supersolution.
    Pipeline(Common),
    /// Comparison of [u] and [v] on nested boxes.
    Compare(Common),
    /// Variable-exponent restoration flow on a PGM image.
    Denoise(DenoiseArgs),
    /// Run the command named inside a config file.
    Run {
        config: PathBuf,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

const COMMANDS: [Command; 8] = [
    Command::Norm,
    Command::Infconv,
    Command::Solve,
    Command::CheckWeak,
    Command::CheckViscosity,
    Command::Pipeline,
    Command::Compare,
    Command::Denoise,
];

fn defaults_help(cmd: Command) -> String {
    let mut text = String::from("Defaults:\n");
    if let Ok(loaded) = parse_config(None, Some(cmd), &[]) {
        for (k, v) in flatten(&loaded.config) {
            if !cmd.uses_section(k.split('.').next().unwrap_or_default()) {
                continue;
            }
            text.push_str(&format!("  {k} = {v}\n"));
        }
    }
    text
}

fn cli() -> clap::Command {
    let mut cmd = Cli::command();
    for c in COMMANDS {
        let help = defaults_help(c);
        cmd = cmd.mut_subcommand(c.name(), |s| s.after_long_help(help));
    }
    cmd
}

fn denoise_overrides(a: &DenoiseArgs) -> Vec<String> {
    let mut o = a.common.overrides.clone();
    if let Some(p) = &a.input {
        // relative to the working directory, not to the config file
        let p = std::path::absolute(p).unwrap_or_else(|_| p.clone());
        o.push(format!("denoise.input={:?}", p.display().to_string()));
    }
    let numeric = [
        ("sigma", a.sigma),
        ("k", a.k),
        ("beta", a.beta),
        ("dt", a.dt),
    ];
    for (key, v) in numeric {
        if let Some(v) = v {
            o.push(format!("denoise.{key}={v:?}"));
        }
    }
    if let Some(s) = a.steps {
        o.push(format!("denoise.steps={s}"));
    }
    if a.dirichlet {
        o.push("denoise.dirichlet=true".into());
    }
    if let Some(s) = &a.scheme {
        o.push(format!("denoise.scheme={s:?}"));
    }
    o
}

fn execute(
    sub: Sub,
) -> (
    Result<pxlap_cli::RunOutput, CliError>,
    Option<PathBuf>,
    Option<pxlap_cli::ExperimentConfig>,
) {
    let (config, command, overrides, output) = match sub {
        Sub::Run {
            config,
            overrides,
            output,
        } => (Some(config), None, overrides, output),
        Sub::Denoise(a) => {
            let o = denoise_overrides(&a);
            (a.common.config, Some(Command::Denoise), o, a.common.output)
        }
        Sub::Norm(c) => (c.config, Some(Command::Norm), c.overrides, c.output),
        Sub::Infconv(c) => (c.config, Some(Command::Infconv), c.overrides, c.output),
        Sub::Solve(c) => (c.config, Some(Command::Solve), c.overrides, c.output),
        Sub::CheckWeak(c) => (c.config, Some(Command::CheckWeak), c.overrides, c.output),
        Sub::CheckViscosity(c) => (
            c.config,
            Some(Command::CheckViscosity),
            c.overrides,
            c.output,
        ),
        Sub::Pipeline(c) => (c.config, Some(Command::Pipeline), c.overrides, c.output),
        Sub::Compare(c) => (c.config, Some(Command::Compare), c.overrides, c.output),
    };
    let loaded = match parse_config(config.as_deref(), command, &overrides) {
        Ok(l) => l,
        Err(e) => return (Err(e), None, None),
    };
    let dir = output.unwrap_or_else(|| loaded.config.output.clone());
    (run(&loaded), Some(dir), Some(loaded.config))
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let args = match Cli::from_arg_matches(&matches) {
        Ok(a) => a,
        Err(e) => e.exit(),
    };
    if let Some(n) = args.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let (result, dir, config) = execute(args.command);
    if let (Ok(out), Some(dir), Some(config)) = (&result, &dir, &config) {
        if let Err(e) = write_run(dir, config, out) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        for r in &out.reports {
            println!(
                "{}: {} ({}/{} passed, {} skipped)",
                r.name,
                if r.passed() { "PASS" } else { "FAIL" },
                r.pass_count(),
                r.items.len(),
                r.skipped
            );
        }
        for (k, v) in &out.summary {
            println!("{k} = {v}");
        }
        println!("artifacts: {}", dir.display());
    }
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    ExitCode::from(exit_code(&result) as u8)
}
