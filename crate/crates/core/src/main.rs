use clap::Parser;

use manet_sec::cli::{main_with, Cli};

fn main() {
    std::process::exit(main_with(Cli::parse()));
}
