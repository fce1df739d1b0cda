use std::process::ExitCode;

use clap::Parser;
use viewfusion::cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VIEWFUSION_LOG", "warn")).init();
    ExitCode::from(run(Cli::parse()))
}
