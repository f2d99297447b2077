//! Command-line front end: single solves, sweeps, profiles and the problem list.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trssqp::bench::{self, ExperimentSpec, MethodSpec, ResultRow};
use trssqp::oracles::{EstimationMode, NoiseFamily};
use trssqp::solver::{HessianStrategy, RunStatus};
use trssqp::{Error, Result};

#[derive(Parser)]
#[command(name = "trssqp", version, about = "Trust-region stochastic SQP solver and benchmark harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one catalog problem and print a summary.
    Run(RunArgs),
    /// Run an experiment sweep from a TOML spec or a named preset.
    Sweep(SweepArgs),
    /// Compute performance-profile curves from a results CSV.
    Profile(ProfileArgs),
    /// Print the problem catalog as JSON.
    Problems,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    problem: String,
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    alpha: u8,
    #[arg(long, default_value = "id")]
    hessian: HessianStrategy,
    #[arg(long, default_value = "normal")]
    noise: NoiseFamily,
    #[arg(long, default_value_t = 1e-2)]
    sigma: f64,
    /// Stopping tolerance on the true residuals.
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    #[arg(long, default_value_t = 0.0)]
    eps_f: f64,
    #[arg(long, default_value_t = 0.0)]
    eps_g: f64,
    #[arg(long, default_value_t = 0.0)]
    eps_h: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    #[arg(long, default_value = "inject")]
    mode: EstimationMode,
    /// Disable the second-order correction retry.
    #[arg(long)]
    no_soc: bool,
    /// Write the one-row results CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the per-iteration trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Exit with status 3 if the run ended in a solver error.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment spec (TOML).
    #[arg(required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Use a built-in preset instead of a spec file.
    #[arg(long)]
    preset: Option<String>,
    /// Override the results CSV path.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Override the manifest JSON path.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Override the profile CSV path.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Exit with status 3 if any cell ended in a solver error.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct ProfileArgs {
    /// Results CSV written by `sweep` or `run --out`.
    results: PathBuf,
    /// Profile CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_run(a: RunArgs) -> Result<bool> {
    let method = MethodSpec {
        label: format!("{}-a{}", a.hessian, a.alpha),
        alpha: a.alpha,
        hessian: a.hessian,
        noise: a.noise,
        sigma: if a.noise == NoiseFamily::None { 0.0 } else { a.sigma },
        mode: a.mode,
        eps_f: a.eps_f,
        eps_g: a.eps_g,
        eps_h: a.eps_h,
        max_iter: a.max_iter,
        soc: !a.no_soc,
        ..MethodSpec::default()
    };
    method.validate()?;
    if !(a.eps >= 0.0) {
        return Err(Error::Config(format!("eps must be >= 0, got {}", a.eps)));
    }
    let method = MethodSpec {
        kappa_b: bench::resolve_kappa_b(&a.problem, &method, a.eps),
        ..method
    };
    let rec = bench::run_method(&a.problem, &method, a.eps, a.seed)?;
    let row = ResultRow::from_record(&rec, &method.label, a.eps);

    println!("problem      {}", rec.problem);
    println!("method       {}", method.label);
    println!("status       {}", row.status);
    match rec.stopping_time {
        Some(t) => println!("T_eps        {t}"),
        None => println!("T_eps        - (budget {})", rec.config.max_iter),
    }
    println!("final_kkt    {:e}", rec.final_kkt);
    println!("final_tau+   {:e}", rec.final_tau_plus);
    println!("final_x      {:?}", rec.final_x.as_slice());
    if let Some(e) = &rec.error {
        println!("error        {e}");
    }
    if let Some(path) = &a.out {
        bench::write_results_csv(&[row], create(path)?)?;
    }
    if let Some(path) = &a.trace {
        bench::write_trace_csv(&rec, create(path)?)?;
    }
    Ok(a.strict && matches!(rec.status, RunStatus::Error(_)))
}

fn cmd_sweep(a: SweepArgs) -> Result<bool> {
    let mut spec = match (&a.config, &a.preset) {
        (Some(path), _) => ExperimentSpec::from_path(path)?,
        (None, Some(name)) => ExperimentSpec::preset(name)?,
        (None, None) => return Err(Error::Config("need a spec file or --preset".into())),
    };
    if a.results.is_some() {
        spec.outputs.results = a.results;
    }
    if a.manifest.is_some() {
        spec.outputs.manifest = a.manifest;
    }
    if a.profile.is_some() {
        spec.outputs.profile = a.profile;
    }
    let out = bench::stopping_time_experiment(&spec)?;
    let m = bench::sweep_manifest(&spec, &out);
    eprintln!(
        "{} cells: {} stopped, {} budget exhausted, {} errors",
        m.cells, m.stopped, m.budget_exhausted, m.errors
    );

    match &spec.outputs.results {
        Some(path) => bench::write_results_csv(&out.rows, create(path)?)?,
        None => bench::write_results_csv(&out.rows, io::stdout().lock())?,
    }
    if let Some(path) = &spec.outputs.manifest {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &m).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w)?;
    }
    if let Some(path) = &spec.outputs.profile {
        let best = bench::reference_best_kkt(&spec)?;
        let rows = bench::sweep_profile(&spec, &out, &best)?;
        bench::write_profile_csv(&rows, create(path)?)?;
    }
    Ok(a.strict && out.errors() > 0)
}

fn cmd_profile(a: ProfileArgs) -> Result<()> {
    let rows = bench::read_results_csv(BufReader::new(File::open(&a.results)?))?;
    let prof = bench::profile_from_results(&rows)?;
    match &a.out {
        Some(path) => bench::write_profile_csv(&prof, create(path)?),
        None => bench::write_profile_csv(&prof, io::stdout().lock()),
    }
}

fn cmd_problems() -> Result<()> {
    let m = trssqp::problem::manifest();
    let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Io(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownProblem(_) | Error::Io(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Profile(a) => cmd_profile(a).map(|_| false),
        Command::Problems => cmd_problems().map(|_| false),
    };
    match res {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("solver error recorded (--strict)");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
