use std::path::PathBuf;
use std::process::ExitCode;

use adaptive_smc2::cli::{self, Overrides};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "smc2", version, about = "SMC² with adaptive numbers of state particles")]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run SMC² from a config file and write trace.csv, samples.csv and summary.json.
    Run(RunArgs),
    /// Print the table of stage-2 candidate values.
    Table1,
    /// Run a grid of methods and write scores.csv relative to a baseline.
    Bench(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config file.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, out: self.out.clone() }
    }
}

fn main() -> ExitCode {
    let args = match Cli::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { cli::EXIT_CONFIG } else { cli::EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = if args.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &args.command {
        Command::Table1 => {
            print!("{}", cli::cmd_table1());
            Ok(())
        }
        Command::Run(a) => cli::cmd_run(&a.config, &a.overrides()).map(|r| {
            if !args.quiet {
                println!(
                    "{} stages, final Nx = {}, tll = {}, artifacts in {}",
                    r.ensemble.trace.len(),
                    r.ensemble.nx,
                    r.ensemble.tll,
                    r.dir.display()
                );
            }
        }),
        Command::Bench(a) => cli::cmd_bench(&a.config, &a.overrides()).map(|b| {
            if !args.quiet {
                print!("{}", cli::format_scores(&b.scores));
                println!("scores written to {}", b.dir.join("scores.csv").display());
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
