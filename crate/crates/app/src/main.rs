use clap::Parser;

fn main() {
    let cli = kgctx::cli::Cli::parse();
    let stdout = std::io::stdout();
    if let Err(e) = kgctx::cli::run(cli, &mut stdout.lock()) {
        eprintln!("error: {e:#}");
        std::process::exit(kgctx::cli::exit_code(&e));
    }
}
