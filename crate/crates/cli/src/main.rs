//! Experiment harness CLI: builds a refinement scheme, assembles the low-rank
//! system, solves it, and appends one metrics row to a CSV file.

use clap::{Args, Parser, Subcommand};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use ttiga::experiment::{
    run_experiment, ExperimentConfig, PrecChoice, Scheme, SolutionId, CSV_HEADER,
};
use ttiga::solver::history_csv;

#[derive(Parser)]
#[command(name = "ttiga", about = "Low-rank THB-spline Poisson experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and append a metrics row to a CSV file.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Analytical solution: sol1 | sol2 | sol3
    #[arg(long, default_value = "sol1")]
    solution: String,
    /// Refinement scheme: slab | nested-slab | two-corners | four-corners
    #[arg(long, default_value = "slab")]
    scheme: String,
    /// Spline degree of the discretization
    #[arg(long, default_value_t = 3)]
    degree: usize,
    /// Number of hierarchy levels
    #[arg(long, default_value_t = 2)]
    levels: usize,
    /// Mesh growth index of the slab scheme (initial cells 6 + 2k)
    #[arg(long, default_value_t = 0)]
    k: usize,
    /// Solver tolerance
    #[arg(long, default_value_t = 1e-7)]
    eps: f64,
    /// Global assembly approach: 1 (cuboid blocks) | 2 (L x L blocks)
    #[arg(long, default_value_t = 1)]
    approach: u8,
    /// Preconditioner: block | jacobi | none
    #[arg(long, default_value = "block")]
    prec: String,
    /// Source interpolation basis size per dimension
    #[arg(long = "source-n", default_value_t = 40)]
    source_n: usize,
    /// Also run the dense oracle and report comparison deltas
    #[arg(long, default_value_t = false)]
    oracle: bool,
    /// Output CSV file (header written when the file is new)
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value configuration file; explicit flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the residual history CSV next to --out
    #[arg(long, default_value_t = false)]
    residuals: bool,
    /// Print the block structure report
    #[arg(long, default_value_t = false)]
    report: bool,
    /// Lift the desk-scale caps
    #[arg(long, default_value_t = false)]
    allow_large: bool,
}

fn parse_solution(s: &str) -> Result<SolutionId, String> {
    match s {
        "sol1" => Ok(SolutionId::Sol1),
        "sol2" => Ok(SolutionId::Sol2),
        "sol3" => Ok(SolutionId::Sol3),
        _ => Err(format!("unknown solution {s:?}")),
    }
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    match s {
        "slab" => Ok(Scheme::Slab),
        "nested-slab" => Ok(Scheme::NestedSlab),
        "two-corners" => Ok(Scheme::TwoCorners),
        "four-corners" => Ok(Scheme::FourCorners),
        _ => Err(format!("unknown scheme {s:?}")),
    }
}

fn parse_prec(s: &str) -> Result<PrecChoice, String> {
    match s {
        "block" => Ok(PrecChoice::Block),
        "jacobi" => Ok(PrecChoice::Jacobi),
        "none" => Ok(PrecChoice::None),
        _ => Err(format!("unknown preconditioner {s:?}")),
    }
}

fn run(args: &RunArgs) -> Result<(), String> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            ExperimentConfig::from_kv(&text).map_err(|e| e.to_string())?
        }
        None => ExperimentConfig::default(),
    };
    // explicit flags win over the config file
    cfg.solution = parse_solution(&args.solution)?;
    cfg.scheme = parse_scheme(&args.scheme)?;
    cfg.prec = parse_prec(&args.prec)?;
    cfg.degree = args.degree;
    cfg.levels = args.levels;
    cfg.k = args.k;
    cfg.eps = args.eps;
    cfg.approach = args.approach;
    cfg.source_n = args.source_n;
    cfg.oracle = args.oracle;
    cfg.allow_large = cfg.allow_large || args.allow_large;

    let outcome = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let row = outcome.row.to_csv_row();
    println!("{CSV_HEADER}");
    println!("{row}");
    if args.report {
        print!("{}", outcome.system.structure_report());
    }
    if let Some(path) = &args.out {
        let new_file = !path.exists();
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| format!("cannot open {}: {e}", path.display()))?;
        if new_file {
            writeln!(file, "{CSV_HEADER}").map_err(|e| e.to_string())?;
        }
        writeln!(file, "{row}").map_err(|e| e.to_string())?;
        if args.residuals {
            let rpath = path.with_extension("residuals.csv");
            std::fs::write(&rpath, history_csv(&outcome.residual_history))
                .map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match run(&args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(message) => {
                eprintln!("error: {message}");
                ExitCode::FAILURE
            }
        },
    }
}
