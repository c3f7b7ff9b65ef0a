use clap::Parser;

fn main() {
    let cli = fasttalker_cli::Cli::parse();
    if let Err(e) = fasttalker_cli::run(cli) {
        eprintln!("{}", e.to_json());
        std::process::exit(1);
    }
}
