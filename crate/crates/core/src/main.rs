use clap::Parser;

use price_impact::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
