use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(mab_deform::cli::main_with_args(std::env::args_os()))
}
