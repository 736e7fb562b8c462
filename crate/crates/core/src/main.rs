mod cli;

use clap::Parser;

fn main() {
    let args = cli::Cli::parse();
    cli::init_logging();
    if let Err(failure) = cli::dispatch(args) {
        eprintln!("{}", failure.line());
        std::process::exit(failure.exit_code());
    }
}
