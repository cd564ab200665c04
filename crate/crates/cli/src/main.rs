use clap::Parser;

fn main() {
    let cli = radbath_cli::Cli::parse();
    let stdout = std::io::stdout();
    if let Err(e) = radbath_cli::run(cli, &mut stdout.lock()) {
        eprintln!("radbath: {e}");
        std::process::exit(e.exit_code());
    }
}
