use std::process::ExitCode;

fn main() -> ExitCode {
    vcspread::cli::run_cli()
}
