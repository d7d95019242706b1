use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = hakan_cli::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(err) = hakan_cli::run(cli, &mut stdout) {
        eprintln!("error: {err:#}");
        std::process::exit(hakan_cli::exit_code(&err));
    }
}
