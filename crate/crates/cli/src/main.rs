use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(a4net_cli::dispatch(std::env::args_os()))
}
