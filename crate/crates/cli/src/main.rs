//! `incvar`: generate data, fit interval-CVaR regressions, compute Prokhorov
//! distances and run the robustness sweeps from JSON configs.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use incvar_core::experiments::{
    emit, gen_contamination_with, gen_nominal_with, gen_perturbed_from, run_sweep, NOMINAL_SIZE,
};
use incvar_core::selftest::run_selftest;
use incvar_core::{fit_incvar, prokhorov_distance, DataSet, EmpiricalCloud, Error};

use config::GenKind;

#[derive(Debug, Parser)]
#[command(name = "incvar", version, about = "Interval CVaR regression toolkit")]
struct Cli {
    /// Worker threads for restarts and sweep cells.
    #[arg(long, global = true, env = "INCVAR_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to a dataset and write report.json.
    Fit(RunArgs),
    /// Run a robustness sweep and write CSV, SVG and metadata.json.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Record wall-clock seconds per cell (output is then not byte-stable).
        #[arg(long)]
        timings: bool,
    },
    /// Prokhorov distance between two point clouds; writes certificate.json.
    Prokhorov(RunArgs),
    /// Write a generated dataset as CSV.
    Gen(RunArgs),
    /// Run the built-in property checks of every module.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Invalid(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NumericalFailure { .. } => Failure::Numerical(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Invalid(msg.into())
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(dir).map_err(|e| invalid(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| invalid(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// A cloud file is a CSV with one header line; every column is a coordinate.
fn read_cloud(path: &Path) -> Result<EmpiricalCloud, Failure> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let bad = |e: &dyn std::fmt::Display| invalid(format!("{} row {}: {e}", path.display(), row + 1));
        let record = record.map_err(|e| bad(&e))?;
        let point = record
            .iter()
            .map(str::parse::<f64>)
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| bad(&e))?;
        points.push(point);
    }
    EmpiricalCloud::new(points).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn fit(args: &RunArgs) -> Result<(), Failure> {
    let mut cfg = config::load_fit(&args.config).map_err(Failure::Invalid)?;
    if let Some(seed) = args.seed {
        cfg.solver.seed = seed;
    }
    let data_path = config::relative_to(&args.config, &cfg.data);
    let data = DataSet::from_csv(&read_text(&data_path)?)
        .map_err(|e| invalid(format!("{}: {e}", data_path.display())))?;
    if data.dim() != cfg.model.dim {
        return Err(invalid(format!(
            "model.dim: {} does not match the {} attribute columns of {}",
            cfg.model.dim,
            data.dim(),
            data_path.display()
        )));
    }
    let report = fit_incvar(&data, &cfg.model, cfg.loss, cfg.levels, &cfg.solver)?;
    let path = write_json(&args.out, "report.json", &report)?;
    println!("objective {}", report.best_objective);
    println!("wrote {}", path.display());
    Ok(())
}

fn sweep(args: &RunArgs, timings: bool) -> Result<(), Failure> {
    let mut cfg = config::load_sweep(&args.config).map_err(Failure::Invalid)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    let result = run_sweep(&cfg)?;
    let stem = cfg.scenario.name();
    emit(&result, &args.out, stem, timings)?;
    write_json(&args.out, "metadata.json", &result.metadata)?;
    let failed = result.rows.iter().filter(|r| r.failed).count();
    println!("{} rows ({failed} failed)", result.rows.len());
    println!("wrote {}", args.out.join(format!("{stem}.csv")).display());
    Ok(())
}

fn prokhorov(args: &RunArgs) -> Result<(), Failure> {
    let cfg = config::load_prokhorov(&args.config).map_err(Failure::Invalid)?;
    let p = read_cloud(&config::relative_to(&args.config, &cfg.p))?;
    let q = read_cloud(&config::relative_to(&args.config, &cfg.q))?;
    let (distance, certificate) = prokhorov_distance(&p, &q)?;
    write_json(&args.out, "certificate.json", &certificate)?;
    println!("{distance}");
    Ok(())
}

fn gen(args: &RunArgs) -> Result<(), Failure> {
    let mut cfg = config::load_gen(&args.config).map_err(Failure::Invalid)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let n = cfg.size();
    let data = match cfg.kind {
        GenKind::Nominal => gen_nominal_with(n, cfg.noise_sigma, cfg.seed)?,
        GenKind::Contamination => gen_contamination_with(n, cfg.noise_sigma, cfg.seed)?,
        GenKind::Perturbed => {
            let nominal = gen_nominal_with(NOMINAL_SIZE, cfg.noise_sigma, cfg.seed)?;
            gen_perturbed_from(&nominal, cfg.k.unwrap_or(1), n, cfg.noise_sigma, cfg.seed)?
        }
    };
    std::fs::create_dir_all(&args.out).map_err(|e| invalid(format!("{}: {e}", args.out.display())))?;
    let path = args.out.join(format!("{}.csv", cfg.stem()));
    std::fs::write(&path, data.to_csv()).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn selftest(seed: u64) -> Result<(), Failure> {
    let report = run_selftest(seed);
    for c in &report.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {} / {}: {}", c.module, c.name, c.detail);
    }
    println!("{} passed, {} failed", report.passed(), report.failed());
    if report.failed() > 0 {
        return Err(invalid("selftest failures"));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(invalid("--jobs: must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| invalid(e.to_string()))?;
    }
    match &cli.command {
        Command::Fit(args) => fit(args),
        Command::Sweep { run, timings } => sweep(run, *timings),
        Command::Prokhorov(args) => prokhorov(args),
        Command::Gen(args) => gen(args),
        Command::Selftest { seed } => selftest(*seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage_error { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
