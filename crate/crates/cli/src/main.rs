use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use hopfield_cli::args::{resolve, Cli};
use hopfield_cli::commands::{run, write_all};
use hopfield_cli::{CliError, EXIT_USAGE};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    let artifacts = run(&cfg)?;
    if let Some(dir) = &cli.out {
        write_all(dir, &artifacts)?;
    }
    if cli.out.is_none() || matches!(cfg.command, hopfield_cli::config::CommandConfig::FixedPoint(_)) {
        std::io::stdout()
            .write_all(&artifacts.stdout)
            .map_err(|e| CliError::Usage(format!("stdout: {e}")))?;
    }
    Ok(())
}
