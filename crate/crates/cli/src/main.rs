mod commands;
mod config;
mod data;
mod error;
mod report;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use config::{Cli, CommandKind, RunConfig};
use error::CliError;

fn write_file(path: &std::path::Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Output {
        path: path.display().to_string(),
        source,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (kind, flags) = cli.command.split();
    let cfg = RunConfig::resolve(kind, flags)?;
    let output = mdep_core::simlab::with_workers(cfg.workers, || match kind {
        CommandKind::Fit => commands::fit(&cfg),
        CommandKind::Simulate => commands::simulate(&cfg),
        CommandKind::Coverage => commands::coverage(&cfg),
        CommandKind::TestRelevance => commands::test_relevance(&cfg),
        CommandKind::TestSpec => commands::test_spec(&cfg),
    })??;
    if let (Some(path), Some(text)) = (&cfg.per_rep, &output.per_rep) {
        write_file(path, text)?;
    }
    match &cfg.out {
        Some(path) => write_file(path, &output.report),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(output.report.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| CliError::Output {
                    path: "<stdout>".into(),
                    source,
                })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
