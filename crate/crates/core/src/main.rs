use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(lsc::cli::main_with_args(std::env::args_os()))
}
