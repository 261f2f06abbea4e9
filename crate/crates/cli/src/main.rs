use clap::Parser;

fn main() {
    std::process::exit(codedfocus_cli::run(codedfocus_cli::Cli::parse()));
}
