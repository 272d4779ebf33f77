use std::panic;
use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SKMTL_LOG", "error")).init();
    let code = panic::catch_unwind(|| skmtl::cli::run(std::env::args_os())).unwrap_or(3);
    ExitCode::from(code as u8)
}
