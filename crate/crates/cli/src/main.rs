mod args;
mod commands;
mod plotdata;

use std::io::{self, Write};
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut err = io::stderr();
    let result = match &cli.command {
        Command::Run(a) => commands::cmd_run(a, &mut out),
        Command::Bench(a) => commands::cmd_bench(a, &mut out),
        Command::Verify(a) => commands::cmd_verify(a, &mut out),
        Command::Plotdata(a) => plotdata::cmd_plotdata(a, &mut out, &mut err),
        Command::Presets(a) => commands::cmd_presets(a, &mut out),
    };
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
