use std::process::ExitCode;

use varexp_cli::CliError;

fn main() -> ExitCode {
    match varexp_cli::run(std::env::args_os()) {
        Ok(outcome) => {
            println!("{}", outcome.csv.display());
            println!("{}", outcome.summary.display());
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(CliError::Help(text)) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
