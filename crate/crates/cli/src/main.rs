use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = gmwb_cli::Cli::parse();
    match gmwb_cli::run(cli) {
        Ok(report) => {
            print!("{}", report.text);
            if report.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
