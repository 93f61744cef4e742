use std::process::ExitCode;

fn main() -> ExitCode {
    seam_cli::app::main(std::env::args_os())
}
