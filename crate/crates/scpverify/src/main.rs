use clap::Parser;

fn main() {
    let cli = scpverify::cli::Cli::parse();
    std::process::exit(scpverify::cli::main_with(cli));
}
