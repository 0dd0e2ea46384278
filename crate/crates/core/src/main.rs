use clap::{Parser, Subcommand};
use std::path::PathBuf;

use factorlab::cli::{self, config::schema};

/// Monte Carlo checks of stochastic integral representations.
#[derive(Parser)]
#[command(name = "factorlab", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the checks selected by a JSON config and write the report.
    Run { config: PathBuf },
    /// Write plot-ready CSV from a report or a binary ensemble.
    Export {
        input: PathBuf,
        selector: String,
        /// Output file; defaults to `<selector>.csv` in the current directory.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Print the JSON schema of the config file.
    Schema,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { cli::EXIT_CONFIG } else { cli::EXIT_PASS });
        }
    };
    let code = match args.command {
        Command::Run { config } => cli::run_command(&config),
        Command::Export { input, selector, out } => {
            let out = out.unwrap_or_else(|| PathBuf::from(format!("{selector}.csv")));
            cli::export_command(&input, &selector, &out)
        }
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&schema()).expect("schema serializes"));
            cli::EXIT_PASS
        }
    };
    std::process::exit(code);
}
