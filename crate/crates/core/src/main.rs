use clap::Parser;

fn main() {
    let cli = dpvi::cli::Cli::parse();
    std::process::exit(dpvi::cli::run(&cli));
}
