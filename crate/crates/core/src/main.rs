use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use complier_ri::cli::{error_line, exit_code, run, Cli};
use complier_ri::Error;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = Error::Config(e.to_string().trim().replace('\n', " "));
            eprintln!("{}", error_line(&err));
            return ExitCode::from(exit_code(&err) as u8);
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let _ = out.flush();
            eprintln!("{}", error_line(&err));
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
