use clap::Parser;

fn main() {
    let cli = fmn::cli::Cli::parse();
    if let Err(err) = fmn::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(i32::from(err.exit_code()));
    }
}
