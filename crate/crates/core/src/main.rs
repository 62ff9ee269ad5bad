use clap::Parser;
use tracing_subscriber::EnvFilter;

fn main() {
    tracing_subscriber::fmt()
        .json()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_env("QEFIX_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .init();
    let args = qefix::cli::Args::parse();
    std::process::exit(qefix::cli::main_with_args(args));
}
