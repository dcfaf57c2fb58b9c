use clap::Parser;
use enrich_npp_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("enrich-npp: {e}");
        std::process::exit(e.exit_code());
    }
}
