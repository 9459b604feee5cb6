use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sescc::{compare, run_job, CliError, JobConfig};

#[derive(Parser)]
#[command(name = "sescc", version, about = "Coupled-cluster sub-system flows and unitary downfolding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the job described by a TOML config.
    Run {
        config: PathBuf,
        /// Override a config key, e.g. `--set flow.mode=parallel`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory (overrides `output`).
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Compare energies of result files computed for the same Hamiltonian.
    Compare {
        #[arg(required = true, num_args = 2..)]
        results: Vec<PathBuf>,
        #[arg(long, default_value_t = 1e-8)]
        tolerance: f64,
    },
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Run { config, set, output } => {
            let mut cfg = JobConfig::load(&config, &set)?;
            if let Some(dir) = output {
                cfg.output = dir;
            }
            let outcome = run_job(&cfg)?;
            print!("{}", outcome.summary);
            println!("result: {}", outcome.result_path.display());
            Ok(outcome.status.exit_code())
        }
        Command::Compare { results, tolerance } => {
            let c = compare(&results, tolerance)?;
            print!("{}", c.table());
            Ok(if c.all_pass() { 0 } else { 2 })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("sescc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
