mod args;
mod attack;
mod commands;
mod error;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use args::{expand_config, Cli, Command};
use error::{io_at, CliResult};

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        io_at(dir, std::fs::create_dir_all(dir))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    io_at(path, std::fs::write(path, text))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Attack(a) => attack::run(a),
        Command::BenchProx(a) => commands::bench_prox(a),
        Command::Gradcheck(a) => commands::gradcheck_cmd(a),
        Command::Report(a) => commands::report(a),
        Command::Synth(a) => commands::synth(a),
    }
}

fn main() -> ExitCode {
    let result = expand_config(std::env::args_os().collect()).and_then(|args| {
        let cli = match Cli::try_parse_from(args) {
            Ok(cli) => cli,
            Err(e) => {
                let code = if e.use_stderr() { 2 } else { 0 };
                let _ = e.print();
                std::process::exit(code);
            }
        };
        run(cli)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
