use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use memlaw_core::config::{parse_config, RunConfig, StudyConfig};
use memlaw_core::diagnostics::verify_run;
use memlaw_core::output::{emit_profile_csv, emit_rate_table, format_float};
use memlaw_core::scheme::{run_with, RunOptions};
use memlaw_core::studies::{delta_study, mesh_study, RATE_FLOOR, RATE_SLACK};
use memlaw_core::{Error, ErrorTable};

/// Caps the rayon worker count.
const THREADS_ENV: &str = "MEMLAW_THREADS";
/// A halving must shrink the error at least by this factor.
const DECREASE_FACTOR: f64 = 0.9;

#[derive(Parser)]
#[command(
    name = "memlaw",
    version,
    about = "Nonlocal conservation laws with memory: solver and convergence studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write a profile CSV per record time.
    Simulate(Common),
    /// Memory-to-memoryless convergence table at fixed dx.
    StudyDelta(Common),
    /// Mesh convergence table at fixed delta/dx.
    StudyMesh(Common),
    /// Run the simulation with the full diagnostics suite.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Process exit status by failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Config = 1,
    Numeric = 2,
    Study = 3,
}

#[derive(Debug)]
struct StudyFailure(Vec<String>);

impl std::fmt::Display for StudyFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "study assertions failed:\n  {}", self.0.join("\n  "))
    }
}

impl std::error::Error for StudyFailure {}

#[derive(Debug)]
struct DiagnosticsFailure(Vec<String>);

impl std::fmt::Display for DiagnosticsFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "diagnostics failed: {}", self.0.join(", "))
    }
}

impl std::error::Error for DiagnosticsFailure {}

fn classify(err: &anyhow::Error) -> Exit {
    if err.downcast_ref::<StudyFailure>().is_some() {
        return Exit::Study;
    }
    if err.downcast_ref::<DiagnosticsFailure>().is_some() {
        return Exit::Numeric;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::InvariantViolation { .. }) => Exit::Numeric,
        _ => Exit::Config,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(Exit::Config as u8);
    }
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::StudyDelta(c) => study_delta(c),
        Command::StudyMesh(c) => study_mesh(c),
        Command::Verify(c) => verify(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e) as u8)
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    info!("using {n} worker threads");
    Ok(())
}

fn load(common: &Common) -> anyhow::Result<(RunConfig, PathBuf)> {
    let config = parse_config(&common.config).map_err(anyhow::Error::new)?;
    let out = common.out.clone().unwrap_or_else(|| config.output.directory.clone());
    Ok((config, out))
}

fn simulate(common: &Common) -> anyhow::Result<()> {
    let (config, out) = load(common)?;
    let model = config.model_spec()?;
    let (grid, time, params) = config.discretization(&model)?;
    let mut times = config.scheme.record_times.clone();
    if times.is_empty() {
        times.push(time.t_final);
    }
    info!("{} cells, {} steps, lambda {}", grid.cells(), time.n_steps, time.lambda);
    let traj = run_with(
        &model,
        &grid,
        &time,
        &params,
        &RunOptions::default().recording(&times),
        &mut (),
    )?;
    if traj.final_state.components.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvariantViolation {
            step: time.n_steps,
            component: 0,
            cell: 0,
            value: f64::NAN,
        }
        .into());
    }
    let files = emit_profile_csv(&traj, &out, config.output.precision)?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(())
}

fn check_table(table: &ErrorTable) -> anyhow::Result<()> {
    let mut problems = table.floor_violations(RATE_FLOOR - RATE_SLACK);
    problems.extend(table.decrease_violations(DECREASE_FACTOR));
    if problems.is_empty() {
        Ok(())
    } else {
        Err(StudyFailure(problems).into())
    }
}

fn print_table(name: &str, table: &ErrorTable) {
    println!("{:<14} {:>16} {:>8} {:>12}", name, "error", "rate", "lambda");
    for r in &table.rows {
        let rate = r.rate.map_or("-".to_string(), |a| format!("{a:.3}"));
        let flag = if r.error == 0.0 { "  (zero error)" } else { "" };
        println!(
            "{:<14} {:>16} {:>8} {:>12}{flag}",
            format_float(r.parameter),
            format!("{:.6e}", r.error),
            rate,
            format!("{:.6}", r.lambda_used)
        );
    }
}

fn finish_study(table: &ErrorTable, out: &Path, stem: &str, name: &str, precision: usize) -> anyhow::Result<()> {
    let (csv, dat) = emit_rate_table(table, out, stem, precision)?;
    print_table(name, table);
    println!("{}\n{}", csv.display(), dat.display());
    check_table(table)
}

fn study_delta(common: &Common) -> anyhow::Result<()> {
    let (config, out) = load(common)?;
    let Some(StudyConfig::Delta { delta0, halvings }) = config.study else {
        bail!(Error::Config(vec![
            "study.kind must be \"delta\" for study-delta".into()
        ]));
    };
    let model = config.model_spec()?;
    let (grid, time, params) = config.discretization(&model)?;
    let table = delta_study(&model, &grid, &time, &params, delta0, halvings)?;
    finish_study(&table, &out, "delta_study", "delta", config.output.precision)
}

fn study_mesh(common: &Common) -> anyhow::Result<()> {
    let (config, out) = load(common)?;
    let Some(study) = config.mesh_study() else {
        bail!(Error::Config(vec!["study.kind must be \"mesh\" for study-mesh".into()]));
    };
    let model = config.model_spec()?;
    let table = mesh_study(&model, &study)?;
    finish_study(&table, &out, "mesh_study", "dx", config.output.precision)
}

fn verify(common: &Common) -> anyhow::Result<()> {
    let (config, out) = load(common)?;
    let model = config.model_spec()?;
    let (grid, time, params) = config.discretization(&model)?;
    let options = RunOptions::default().recording(&config.scheme.record_times);
    let (traj, report) = verify_run(&model, &grid, &time, &params, &options)?;
    emit_profile_csv(&traj, &out, config.output.precision)?;
    let path = out.join("diagnostics.csv");
    let file = std::fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    report.write_csv(std::io::BufWriter::new(file))?;
    print!("{}", report.to_table());
    println!("{}", path.display());
    let failed: Vec<String> = report.failures().map(|c| c.name.to_string()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(DiagnosticsFailure(failed).into())
    }
}
