use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adasdbo_cli::{oracle_check, parse_config, run_single, run_sweep, CliError, ExperimentConfig, OUTDIR_ENV};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adasdbo", version, about = "Decentralized bilevel optimization experiments")]
struct Cli {
    /// Worker threads for agent-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,

    /// Output root; falls back to $ADASDBO_OUTDIR, then `output.dir`, then `runs`.
    #[arg(long)]
    outdir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a config, then print it with defaults filled.
    Validate(Common),
    /// Run one experiment.
    Run(Common),
    /// Run every value of the config's sweep section.
    Sweep(Common),
    /// Check the hypergradient oracle against finite differences.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        points: usize,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn outdir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTDIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn execute(cli: Cli) -> Result<ExitCode, CliError> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Validate(c) => {
            let cfg = load(&c.config)?;
            if !quiet {
                print!(
                    "{}",
                    toml::to_string(&cfg).map_err(|e| CliError::Config(e.to_string()))?
                );
                println!("# hash {}", cfg.hash());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(c) => {
            let cfg = load(&c.config)?;
            if cfg.sweep.is_some() {
                return Err(CliError::Config(
                    "sweep: use the `sweep` verb for configs with a sweep section".into(),
                ));
            }
            let s = run_single(&cfg, &outdir(c.outdir, &cfg))?;
            if !quiet {
                println!("{}", serde_json::to_string_pretty(&s).expect("summary serializes"));
            }
            if s.diverged {
                eprintln!(
                    "diverged at round {}: {}",
                    s.divergence_round.unwrap_or(0),
                    s.divergence_reason.as_deref().unwrap_or("")
                );
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep(c) => {
            let cfg = load(&c.config)?;
            let dir = outdir(c.outdir, &cfg);
            let rows = run_sweep(&cfg, &dir)?;
            if !quiet {
                for row in &rows {
                    println!("{}", row.to_csv_row());
                }
                println!("wrote {}", dir.join("sweep.csv").display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::OracleCheck { common, points, scale } => {
            let cfg = load(&common.config)?;
            let report = oracle_check(&cfg, points, scale)?;
            if !quiet {
                println!("points {}", report.points);
                println!("max relative error (finite differences) {:e}", report.max_rel_error);
                if let Some(e) = report.analytic_max_rel_error {
                    println!("max relative error (closed form) {e:e}");
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
