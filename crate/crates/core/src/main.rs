use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(canline::cli::run(std::env::args_os()))
}
