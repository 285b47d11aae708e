use clap::Parser;

fn main() {
    let cli = iidgen::cli::Cli::parse();
    if let Err(err) = iidgen::cli::run_pipeline(&cli) {
        eprintln!("error[{}]: {err}", err.code());
        std::process::exit(err.exit_code());
    }
}
