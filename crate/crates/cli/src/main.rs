use std::process::ExitCode;

use clap::Parser;
use tvmix_cli::{describe_error, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, body) = describe_error(&err);
            eprintln!("{body}");
            ExitCode::from(code as u8)
        }
    }
}
