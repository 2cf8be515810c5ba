//! `sharedbuf`: command-line driver for the shared-buffer control library.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input (instance, JSON,
//! arguments, missing prerequisites), 3 solver non-convergence, 64 usage
//! error.

mod commands;
mod manifest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sharedbuf::hjb::SolverSettings;
use sharedbuf::model::SystemSpec;
use sharedbuf::policy::PolicyConfig;
use sharedbuf::reflect::{default_dt, default_horizon};

use commands::*;
use manifest::Manifest;
use output::{to_json, Prefix};

/// Default directory for outputs when `--out` is not given.
const OUT_DIR_ENV: &str = "SHAREDBUF_OUT_DIR";

#[derive(Debug)]
pub enum CliError {
    Core(sharedbuf::Error),
    /// Bad or missing input that the library never saw.
    Input(String),
    Io(std::io::Error),
}

impl From<sharedbuf::Error> for CliError {
    fn from(e: sharedbuf::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use sharedbuf::Error as E;
        match self {
            CliError::Core(E::NonConvergence { .. }) => 3,
            CliError::Core(E::Io(_)) | CliError::Io(_) => 1,
            CliError::Core(_) | CliError::Input(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Input(s) => write!(f, "{s}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "sharedbuf", version, about = "Heavy-traffic control of a multiclass queue with a shared buffer")]
struct Cli {
    /// Base RNG seed; replication k uses seed + k.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads for replications (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output path prefix. Defaults to `<command>` inside $SHAREDBUF_OUT_DIR
    /// or the working directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    /// Grid intervals N.
    #[arg(long, default_value_t = 4096)]
    grid: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
}

impl SolverArgs {
    fn settings(&self) -> SolverSettings {
        SolverSettings { grid_intervals: self.grid, tol: self.tol, max_iterations: self.max_iterations }
    }
}

#[derive(Args, Debug, Clone)]
struct BoundaryArgs {
    /// `inline` (solve now), `from-solve` (read a prior solve), or a number.
    #[arg(long, default_value = "inline")]
    x_star: String,
    /// Solve artifact for `--x-star from-solve`; defaults to solve.json next
    /// to the outputs.
    #[arg(long)]
    solve: Option<String>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug, Clone)]
struct DesArgs {
    #[arg(long, default_value_t = 3.0)]
    horizon: f64,
    /// Number of seeds, starting at --seed.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Margin below the buffer size; defaults to b/25.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    sample_dt: f64,
    #[arg(long, value_enum, default_value_t = Start::Empty)]
    start: Start,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate an instance and print its heavy-traffic parameters.
    Derive { instance: PathBuf },
    /// Order of accumulation with the incremental cost ratios.
    Order { instance: PathBuf },
    /// One-dimensional holding cost and minimizing curve on a grid.
    Hbar {
        instance: PathBuf,
        #[arg(long, default_value_t = 512)]
        grid_points: usize,
    },
    /// Policy curve with its margins on [0, a*].
    GammaA {
        instance: PathBuf,
        #[arg(long, default_value_t = 512)]
        grid_points: usize,
        #[arg(long)]
        epsilon: Option<f64>,
        #[command(flatten)]
        boundary: BoundaryArgs,
    },
    /// Solve the free-boundary Bellman equation.
    Solve {
        instance: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Also write the value function and its derivative as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Monte Carlo cost of the reflected workload process.
    Rbm {
        instance: PathBuf,
        #[command(flatten)]
        boundary: BoundaryArgs,
        #[arg(long, default_value_t = 10_000)]
        replications: usize,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        x0: f64,
        /// Write the first K paths as CSV.
        #[arg(long, default_value_t = 0)]
        paths_csv: usize,
    },
    /// Discrete-event simulation of the n-th system under the policy.
    Simulate {
        instance: PathBuf,
        #[arg(long)]
        n: u64,
        #[command(flatten)]
        des: DesArgs,
        #[command(flatten)]
        boundary: BoundaryArgs,
    },
    /// Bellman value, Monte Carlo cost and simulated cost side by side.
    #[command(group(ArgGroup::new("source").required(true).args(["full", "solve_artifact"])))]
    Compare {
        instance: PathBuf,
        /// Solve in-line.
        #[arg(long)]
        full: bool,
        /// Use a prior solve artifact.
        #[arg(long = "solve", value_name = "SOLVE_JSON")]
        solve_artifact: Option<String>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [100u64, 400, 1600])]
        n_values: Vec<u64>,
        #[command(flatten)]
        des: DesArgs,
        #[arg(long, default_value_t = 10_000)]
        replications: usize,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Rerun a command from its manifest.
    Replay { manifest: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Derive { .. } => "derive",
            Command::Order { .. } => "order",
            Command::Hbar { .. } => "hbar",
            Command::GammaA { .. } => "gamma-a",
            Command::Solve { .. } => "solve",
            Command::Rbm { .. } => "rbm",
            Command::Simulate { .. } => "simulate",
            Command::Compare { .. } => "compare",
            Command::Replay { .. } => "replay",
        }
    }
}

fn boundary_request(args: &BoundaryArgs, prefix: &Prefix) -> Result<BoundaryRequest, CliError> {
    match args.x_star.as_str() {
        "inline" => Ok(BoundaryRequest::Inline(args.solver.settings())),
        "from-solve" => Ok(BoundaryRequest::FromSolve(
            args.solve.clone().unwrap_or_else(|| default_solve_path(prefix)),
        )),
        s => s
            .parse::<f64>()
            .map(BoundaryRequest::Given)
            .map_err(|_| CliError::Input(format!("--x-star expects inline, from-solve or a number, got {s:?}"))),
    }
}

fn seed_list(seed: u64, count: u64) -> Vec<u64> {
    (0..count).map(|k| seed.wrapping_add(k)).collect()
}

fn epsilon_or_default(eps: Option<f64>, spec: &SystemSpec) -> f64 {
    eps.unwrap_or_else(|| PolicyConfig::default_epsilon(spec.b))
}

fn des_params(args: &DesArgs, n: u64, seed: u64, spec: &SystemSpec) -> DesParams {
    DesParams {
        n,
        horizon: args.horizon,
        seeds: seed_list(seed, args.seeds),
        epsilon: epsilon_or_default(args.epsilon, spec),
        sample_dt: args.sample_dt,
        start: args.start,
    }
}

fn to_value<T: Serialize>(p: &T) -> serde_json::Value {
    serde_json::to_value(p).expect("parameters serialize")
}

/// Writes the manifest and every output file.
fn execute(manifest: &Manifest, prefix: &Prefix) -> Result<(), CliError> {
    let ctx = Ctx { manifest, prefix };
    fn params<T: DeserializeOwned>(m: &Manifest) -> Result<T, CliError> {
        serde_json::from_value(m.params.clone())
            .map_err(|e| CliError::Input(format!("manifest parameters for {}: {e}", m.command)))
    }
    let files = match manifest.command.as_str() {
        "derive" => derive_cmd(&ctx, &params(manifest)?)?,
        "order" => order_cmd(&ctx, &params(manifest)?)?,
        "hbar" => hbar_cmd(&ctx, &params(manifest)?)?,
        "gamma-a" => gamma_a_cmd(&ctx, &params(manifest)?)?,
        "solve" => solve_cmd(&ctx, &params(manifest)?)?,
        "rbm" => rbm_cmd(&ctx, &params(manifest)?)?,
        "simulate" => simulate_cmd(&ctx, &params(manifest)?)?,
        "compare" => compare_cmd(&ctx, &params(manifest)?)?,
        other => return Err(CliError::Input(format!("unknown command {other:?} in manifest"))),
    };
    prefix.write("_manifest.json", &to_json(manifest)).map_err(CliError::Io)?;
    for (suffix, contents) in files {
        let path = prefix.write(&suffix, &contents).map_err(CliError::Io)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn default_prefix(out: Option<PathBuf>, command: &str) -> Prefix {
    Prefix(out.unwrap_or_else(|| {
        let dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
        dir.join(command)
    }))
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("--threads: {e}")))?;
    }
    let seed = cli.seed;
    if let Command::Replay { manifest } = &cli.command {
        let m = Manifest::load(manifest)?;
        let prefix = default_prefix(cli.out, &m.command);
        return execute(&m, &prefix);
    }
    let name = cli.command.name();
    let prefix = default_prefix(cli.out, name);
    let (instance, params) = match &cli.command {
        Command::Derive { instance } | Command::Order { instance } => (instance, to_value(&NoParams {})),
        Command::Hbar { instance, grid_points } => {
            (instance, to_value(&HbarParams { grid_points: *grid_points }))
        }
        Command::GammaA { instance, grid_points, epsilon, boundary } => {
            let spec = load_instance(instance)?;
            let boundary = resolve_boundary(&spec, &boundary_request(boundary, &prefix)?)?;
            let p = GammaAParams {
                grid_points: *grid_points,
                epsilon: epsilon_or_default(*epsilon, &spec),
                boundary,
            };
            (instance, to_value(&p))
        }
        Command::Solve { instance, solver, csv } => {
            let p = SolveParams {
                grid_intervals: solver.grid,
                tol: solver.tol,
                max_iterations: solver.max_iterations,
                csv: *csv,
            };
            (instance, to_value(&p))
        }
        Command::Rbm { instance, boundary, replications, dt, horizon, x0, paths_csv } => {
            let spec = load_instance(instance)?;
            let boundary = resolve_boundary(&spec, &boundary_request(boundary, &prefix)?)?;
            let d = sharedbuf::model::derive(&spec)?;
            let p = RbmCmdParams {
                replications: *replications,
                x0: *x0,
                dt: dt.unwrap_or_else(|| default_dt(boundary.x_star, d.sigma2_bar)),
                horizon: horizon.unwrap_or_else(|| default_horizon(spec.alpha)),
                paths_csv: *paths_csv,
                boundary,
            };
            (instance, to_value(&p))
        }
        Command::Simulate { instance, n, des, boundary } => {
            let spec = load_instance(instance)?;
            let boundary = resolve_boundary(&spec, &boundary_request(boundary, &prefix)?)?;
            let p = SimulateParams { boundary, des: des_params(des, *n, seed, &spec) };
            (instance, to_value(&p))
        }
        Command::Compare { instance, full, solve_artifact, solver, n_values, des, replications, dt } => {
            let spec = load_instance(instance)?;
            let req = match (full, solve_artifact) {
                (true, _) => BoundaryRequest::Inline(solver.settings()),
                (false, Some(path)) => BoundaryRequest::FromSolve(path.clone()),
                (false, None) => unreachable!("clap requires --full or --solve"),
            };
            let boundary = resolve_boundary(&spec, &req)?;
            let d = sharedbuf::model::derive(&spec)?;
            let template = des_params(des, 0, seed, &spec);
            let p = CompareParams {
                n_values: n_values.clone(),
                horizon: template.horizon,
                seeds: template.seeds,
                epsilon: template.epsilon,
                sample_dt: template.sample_dt,
                start: template.start,
                replications: *replications,
                dt: dt.unwrap_or_else(|| default_dt(boundary.x_star, d.sigma2_bar)),
                rbm_horizon: default_horizon(spec.alpha),
                boundary,
            };
            (instance, to_value(&p))
        }
        Command::Replay { .. } => unreachable!(),
    };
    let spec = load_instance(instance)?;
    let manifest = Manifest::new(name, &instance.to_string_lossy(), &spec, seed, params);
    execute(&manifest, &prefix)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(64),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
