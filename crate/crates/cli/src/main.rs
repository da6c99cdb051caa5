use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result =
        apdlab_cli::configure_threads().and_then(|()| apdlab_cli::run(apdlab_cli::Cli::parse()));
    if let Err(e) = result {
        eprintln!("apdlab: {e}");
        std::process::exit(e.exit_code());
    }
}
