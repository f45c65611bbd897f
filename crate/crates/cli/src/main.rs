use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = hitframe_cli::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match hitframe_cli::run(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(hitframe_cli::exit_code(&e))
        }
    }
}
