use std::process::ExitCode;

use clap::Parser;

use shapeopt::cli::{run, Cli};

fn main() -> ExitCode {
    ExitCode::from(run(Cli::parse()))
}
