use clap::Parser;

use anisokernel::cli::{init_threads, run, Cli};

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    init_threads();
    std::process::ExitCode::from(run(&cli) as u8)
}
