use clap::Parser;

use apex::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("apex: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
