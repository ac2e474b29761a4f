mod commands;
mod config;
mod output;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::{Args, Parser};
use toml::Value;

use commands::Command;
use config::{ConfigError, FlowDirection, Overrides};
use report::{Environment, SuiteReport, SCHEMA_VERSION};

/// Thread count for the internal rayon pool.
const THREADS_ENV: &str = "AFFLEG_THREADS";

#[derive(Parser)]
#[command(name = "affleg", version, about = "Numerical experiments on affine Legendrian submanifolds of Sasakian manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

/// Flags override values from `--config`.
#[derive(Args)]
struct Flags {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["sphere", "heisenberg", "perturbed_heisenberg"])]
    model: Option<String>,
    /// Model dimension parameter: the manifold has dimension 2n+1.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Bump size for the perturbed Heisenberg control model.
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true, value_parser = [
        "torus_curve", "great_circle", "weighted_torus", "clifford_torus", "heisenberg_line", "heisenberg_loop",
    ])]
    family: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    a: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    k: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    phase: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    k1: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    k2: Option<f64>,
    #[arg(long, global = true)]
    amplitude: Option<f64>,
    /// Grid nodes per parameter direction.
    #[arg(long, global = true)]
    nodes: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    step_size: Option<f64>,
    #[arg(long, global = true)]
    t_final: Option<f64>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long, global = true, value_enum)]
    direction: Option<FlowDirection>,
    /// Highest Fourier mode kept in flow step directions.
    #[arg(long, global = true)]
    modes: Option<usize>,
    /// JSON report path; stdout when absent.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Node-table CSV path, for commands that produce one.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Directory for SVG plots.
    #[arg(long, global = true)]
    plots: Option<PathBuf>,
    /// Record wall time in the report.
    #[arg(long, global = true)]
    timing: bool,
    /// Tolerance override, e.g. `--tol structure=1e-8`.
    #[arg(long = "tol", global = true, value_parser = parse_tol)]
    tol: Vec<(String, f64)>,
}

fn parse_tol(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    let value: f64 = value.parse().map_err(|e| format!("{value}: {e}"))?;
    Ok((name.to_string(), value))
}

impl Flags {
    fn overrides(&self) -> Overrides {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| Value::String(p.display().to_string()));
        let float = |key: &'static str, v: Option<f64>| v.map(|v| (key, Value::Float(v)));
        let int = |key: &'static str, v: Option<u64>| v.map(|v| (key, Value::Integer(v as i64)));
        let mut model_params: Vec<(&'static str, Value)> = Vec::new();
        model_params.extend(self.n.map(|n| ("n", Value::Integer(n as i64))));
        model_params.extend(float("delta", self.delta));
        let mut family_params: Vec<(&'static str, Value)> =
            [float("a", self.a), float("k", self.k), float("phase", self.phase), float("k1", self.k1), float("k2", self.k2)]
                .into_iter()
                .flatten()
                .collect();
        family_params.extend(float("amplitude", self.amplitude));
        let top_level = [
            int("nodes", self.nodes.map(|v| v as u64)),
            int("seed", self.seed),
            int("samples", self.samples.map(|v| v as u64)),
            int("steps", self.steps.map(|v| v as u64)),
            int("modes", self.modes.map(|v| v as u64)),
            float("step_size", self.step_size),
            float("t_final", self.t_final),
            float("dt", self.dt),
            self.direction.map(|d| ("direction", Value::try_from(d).expect("direction serializes"))),
        ]
        .into_iter()
        .flatten()
        .collect();
        let mut output: Vec<(&'static str, Value)> = [
            path(&self.report).map(|v| ("report", v)),
            path(&self.csv).map(|v| ("csv", v)),
            path(&self.plots).map(|v| ("plots", v)),
        ]
        .into_iter()
        .flatten()
        .collect();
        if self.timing {
            output.push(("timing", Value::Boolean(true)));
        }
        Overrides {
            model: self.model.clone(),
            model_params,
            family: self.family.clone(),
            family_params,
            top_level,
            output,
            tolerances: self.tol.clone(),
        }
    }
}

fn configure_threads() -> Result<(), ConfigError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| ConfigError(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| ConfigError(format!("thread pool: {e}")))
}

fn execute(cli: Cli) -> Result<bool> {
    let started = Instant::now();
    configure_threads()?;
    let cfg = config::resolve(&cli.command.defaults(), cli.flags.config.as_deref(), &cli.flags.overrides())?;
    let outcome = commands::run(cli.command, &cfg)?;
    let pass = outcome.checks.iter().all(|c| c.pass);
    for c in &outcome.checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        eprintln!("{verdict} {}: {:.3e} (tolerance {:.1e})", c.name, c.measured, c.tolerance);
    }
    if let Some(path) = &cfg.output.csv {
        match &outcome.table {
            Some(table) => output::write_csv(table, path)?,
            None => eprintln!("warning: {} produces no node table; {} not written", cli.command.name(), path.display()),
        }
    }
    if let Some(dir) = &cfg.output.plots {
        // Plots never change the exit status.
        match output::emit_plots(&outcome.series, dir) {
            Ok(files) if files.is_empty() => eprintln!("warning: no plottable series"),
            Ok(_) => {}
            Err(e) => eprintln!("warning: plot emission failed: {e:#}"),
        }
    }
    let report = SuiteReport {
        schema_version: SCHEMA_VERSION,
        command: cli.command.name().to_string(),
        environment: Environment { version: env!("CARGO_PKG_VERSION").to_string(), threads: rayon::current_num_threads() },
        checks: outcome.checks,
        pass,
        data: outcome.data,
        series: outcome.series,
        wall_time_s: cfg.output.timing.then(|| started.elapsed().as_secs_f64()),
        config: cfg.clone(),
    };
    output::write_report(&report, cfg.output.report.as_deref())?;
    Ok(pass)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
