use clap::Parser;
use fcesr_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("fcesr: {e}");
        std::process::exit(e.exit_code());
    }
}
