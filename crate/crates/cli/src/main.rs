//! Command-line front end: dataset generation, training, evaluation, the
//! window-count sweep, and file inspection.
//!
//! Exit codes: 0 success, 1 usage error, 2 numeric failure (solver blow-up or
//! non-finite model output), 3 I/O error.

mod cmd;
mod dataset;
mod error;
mod manifest;
mod metrics;

use clap::Parser;

use cmd::Command;

#[derive(Parser)]
#[command(name = "cegnn", version, about = "Mesh-based neural PDE surrogate lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit code for bad flags is 2, which this tool
            // reserves for numeric failures.
            let _ = e.print();
            std::process::exit(1);
        }
    };
    if let Err(e) = cli.command.run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
