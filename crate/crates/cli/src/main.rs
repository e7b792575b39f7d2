use std::process::ExitCode;

use clap::Parser;
use pam_cli::args::{Cli, Command};
use pam_cli::config::resolve;
use pam_cli::{execute, merge_runs, CliError, EXIT_INCONCLUSIVE, EXIT_OK};

fn run(cli: Cli) -> Result<i32, CliError> {
    if let Command::Report(r) = &cli.command {
        let summary = merge_runs(&r.runs, r.kind.as_deref(), &r.out)?;
        println!("{} rows from {} runs of `{}` -> {}", summary.rows, summary.runs.len(), summary.kind, r.out.display());
        return Ok(EXIT_OK);
    }
    let (command, io, flags) = cli.command.split()?.expect("report handled above");
    let exp = resolve(command, io.config.as_deref(), flags)?;
    let record = execute(&exp, &io.out)?;
    println!("{} -> {} ({} files, config {})", command, io.out.display(), record.files.len(), &record.config_hash[..12]);
    if record.conclusive == Some(false) {
        eprintln!("diagnostic inconclusive");
        return Ok(EXIT_INCONCLUSIVE);
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
