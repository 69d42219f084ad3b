use clap::Parser;
use tpsurf_cli::commands::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.command.common().and_then(|c| c.threads) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("tpsurf: cannot start {threads} threads: {e}");
            std::process::exit(3);
        }
    }
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("tpsurf: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
