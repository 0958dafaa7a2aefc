use clap::Parser;

fn main() {
    let cli = signaligner::cli::Cli::parse();
    if let Err(err) = signaligner::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
