use clap::Parser;

fn main() {
    env_logger::init();
    std::process::exit(mixdse::cli::run(mixdse::cli::Cli::parse()));
}
