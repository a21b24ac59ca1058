use clap::Parser;
use freight_hedge::cli::{exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    let (mut out, mut err) = (std::io::stdout().lock(), std::io::stderr());
    if let Err(e) = run(&cli, &mut out, &mut err) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
