use clap::Parser;
use gcl_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp(None).init();
    if let Err(e) = gcl_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
