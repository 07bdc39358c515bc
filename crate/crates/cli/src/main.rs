//! `trustfl` command-line runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trustfl::commands::{self, CommandError, RunManifest};
use trustfl::config::KEYS;
use trustfl::parallel::Execution;

#[derive(Parser)]
#[command(name = "trustfl", version, about = "Fair, private and Byzantine-robust federated learning simulator")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Run clients one after another.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seeds; defaults to the config's seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration for each seed.
    Run(Common),
    /// Run one configuration per value of a numeric key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Numeric config key to vary.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// List config keys and defaults.
    Keys,
}

fn manifest(c: Common) -> Result<RunManifest, CommandError> {
    RunManifest::new(c.config, &c.overrides, c.out, c.seeds)
}

fn execute(cli: Cli) -> Result<(), CommandError> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::Keys => {
            for k in KEYS {
                println!("{:<16} {:<34} {}", k.name, k.default, k.help);
            }
        }
        Command::Run(common) => {
            let m = manifest(common)?;
            let out = commands::run_command(&m, exec)?;
            let s = &out.summary;
            println!(
                "{} seed(s): final accuracy {:.4} ± {:.4}, client variance {:.1} ± {:.1}",
                s.n_seeds, s.final_acc_mean, s.final_acc_std, s.acc_variance_mean, s.acc_variance_std
            );
        }
        Command::Sweep { common, axis, values } => {
            let m = manifest(common)?;
            let out = commands::sweep_command(&m, &axis, &values, exec)?;
            for s in &out.summary {
                println!(
                    "{}={}: final accuracy {:.4} ± {:.4}, client variance {:.1} ± {:.1}",
                    s.axis, s.axis_value, s.final_acc_mean, s.final_acc_std, s.acc_variance_mean, s.acc_variance_std
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        #[cfg(feature = "parallel")]
        if let Err(e) = trustfl::parallel::set_threads(cli.threads) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
