use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Parser, Subcommand, ValueEnum};

use dwmap::backends::{BackendRegistry, PricingMode, SolveConfig};
use dwmap::decomposition::{PurgePolicy, TieRule};
use dwmap::io::{parse_uai, read_native, write_native, write_trace, UaiOptions};
use dwmap::model::Graph;
use dwmap::problem::MapProblem;
use dwmap::runtime::{run_worker, WorkerOptions};
use dwmap::sideconstraints::SideConstraint;

#[derive(Parser)]
#[command(name = "dwmap", version, about = "MAP inference for pairwise Markov random fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a model and print a JSON result record.
    Solve(SolveArgs),
    /// Serve pricing requests for a coordinator.
    Worker {
        #[arg(long)]
        connect: String,
        /// Seconds to keep retrying the first connection.
        #[arg(long, default_value_t = 30.0)]
        connect_timeout: f64,
    },
    /// Convert a model to the native JSON format.
    Convert {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// List available backends.
    Backends,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Auto,
    Uai,
    Native,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ConstraintKind {
    /// No two nodes share a state, except the outlier state.
    Injective,
}

#[derive(clap::Args)]
struct ModelArgs {
    /// Model file format; `auto` picks native for `.json`.
    #[arg(long, value_enum, default_value_t = Format::Auto)]
    format: Format,
    /// UAI tables hold log potentials (false: probabilities).
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    log_domain: bool,
    /// Add a global constraint over all nodes.
    #[arg(long, value_enum)]
    constraint: Option<ConstraintKind>,
    /// Zero-based state exempt from the injective constraint.
    #[arg(long, requires = "constraint")]
    outlier_state: Option<usize>,
}

#[derive(clap::Args)]
struct SolveArgs {
    model_path: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "dw")]
    backend: String,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    /// Columns added per iteration; 0 adds every improving column.
    #[arg(long, default_value_t = 200)]
    columns_per_iter: usize,
    /// Drop non-basic columns once a master solve takes longer than this.
    #[arg(long)]
    purge_after_seconds: Option<f64>,
    #[arg(long, default_value_t = TieRule::LowestIndex)]
    tie_rule: TieRule,
    /// Reduced-cost threshold for adding columns.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Marginal threshold for keeping a state in the rounding IP.
    #[arg(long = "round", default_value_t = 1e-6)]
    round_eps: f64,
    /// Pricing threads (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Price on remote workers connecting to this address.
    #[arg(long)]
    listen: Option<String>,
    /// Remote workers to wait for with --listen.
    #[arg(long, default_value_t = 1, requires = "listen")]
    remote_workers: usize,
    /// Seconds to wait for remote workers.
    #[arg(long, default_value_t = 60.0, requires = "listen")]
    accept_timeout: f64,
    /// Write per-iteration trace records here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the result record here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Refuse direct-lp above this many LP variables.
    #[arg(long, default_value_t = dwmap::relaxation::DEFAULT_MAX_LP_VARIABLES)]
    max_lp_vars: usize,
    #[arg(long, default_value_t = 100)]
    bp_iters: usize,
}

fn load_model(path: &Path, args: &ModelArgs) -> Result<(Graph, Vec<SideConstraint>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let native = match args.format {
        Format::Native => true,
        Format::Uai => false,
        Format::Auto => path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")),
    };
    let (g, mut side) = if native {
        read_native(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        let opts = UaiOptions { log_domain: args.log_domain, ..Default::default() };
        (parse_uai(&text, &opts).with_context(|| format!("parsing {}", path.display()))?, Vec::new())
    };
    if let Some(ConstraintKind::Injective) = args.constraint {
        side.push(SideConstraint::injective_all(&g, args.outlier_state));
    }
    Ok((g, side))
}

fn solve(args: SolveArgs) -> Result<()> {
    let (g, side) = load_model(&args.model_path, &args.model)?;
    let registry = BackendRegistry::with_defaults();
    registry.get(&args.backend)?;

    let mut config = SolveConfig { max_lp_variables: args.max_lp_vars, bp_iterations: args.bp_iters, ..Default::default() };
    config.round_eps = args.round_eps;
    config.dw.max_iterations = args.max_iters;
    config.dw.columns_per_iteration = (args.columns_per_iter > 0).then_some(args.columns_per_iter);
    config.dw.tie_rule = args.tie_rule;
    config.dw.tol = args.tol;
    if let Some(secs) = args.purge_after_seconds {
        if secs.is_nan() || secs < 0.0 {
            bail!("--purge-after-seconds must be non-negative");
        }
        config.dw.purge = PurgePolicy::SolveTimeAbove(Duration::from_secs_f64(secs));
    }
    config.pricing = match (&args.listen, args.workers) {
        (Some(listen), _) => PricingMode::Remote {
            listen: listen.clone(),
            workers: args.remote_workers,
            accept_timeout: Some(Duration::from_secs_f64(args.accept_timeout)),
        },
        (None, Some(n)) if n <= 1 => PricingMode::Serial,
        (None, Some(n)) => PricingMode::Pool(n),
        (None, None) => match std::thread::available_parallelism().map_or(1, |n| n.get()) {
            1 => PricingMode::Serial,
            n => PricingMode::Pool(n),
        },
    };

    let problem = MapProblem::new(g, &side)?;
    let report = registry.solve(&args.backend, &problem, &config)?;
    log::info!(
        "{}: value {} after {} iterations (converged: {})",
        report.backend,
        report.value,
        report.iterations,
        report.converged
    );

    if let Some(path) = &args.trace {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_trace(BufWriter::new(f), &report.trace)?;
    }
    let mut record = serde_json::to_value(&report)?;
    record["model"] = serde_json::Value::String(args.model_path.display().to_string());
    let line = serde_json::to_string(&record)?;
    match &args.output {
        Some(path) => std::fs::write(path, line + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve(args) => solve(args),
        Command::Worker { connect, connect_timeout } => {
            let opts = WorkerOptions { connect_timeout: Duration::from_secs_f64(connect_timeout), ..Default::default() };
            let stats = run_worker(&connect, &opts)?;
            log::info!("worker done: {} requests over {} edges", stats.requests, stats.edges);
            Ok(())
        }
        Command::Convert { input, output, model } => {
            let (g, side) = load_model(&input, &model)?;
            std::fs::write(&output, write_native(&g, &side)).with_context(|| format!("writing {}", output.display()))?;
            Ok(())
        }
        Command::Backends => {
            for b in BackendRegistry::with_defaults().iter() {
                println!("{:<12} {}", b.name(), b.description());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
