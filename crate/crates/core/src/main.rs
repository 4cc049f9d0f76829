use clap::Parser;
use dlqr::cli::{run, Cli, EXIT_OK};

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            std::process::exit(EXIT_OK);
        }
        Err(e) => {
            eprintln!("dlqr: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
