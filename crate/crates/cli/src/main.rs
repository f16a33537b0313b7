use clap::Parser;

fn main() {
    let cli = chatter_atlas_cli::Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    std::process::exit(chatter_atlas_cli::execute(cli));
}
