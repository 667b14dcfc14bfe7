use clap::Parser;

use genuin_cli::{execute, exit_code, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    if let Err(e) = execute(cli.command, &mut stdout.lock()) {
        eprintln!("error: {}", e.to_string().replace('\n', " "));
        std::process::exit(exit_code(&e));
    }
}
