use clap::error::ErrorKind;
use clap::Parser;
use jokerank_cli::error::{CliError, ExitKind};
use jokerank_cli::Cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let message = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("{}", CliError::new(ExitKind::Usage, message).to_line());
            std::process::exit(ExitKind::Usage.code());
        }
    };
    if let Err(e) = jokerank_cli::run(cli) {
        eprintln!("{}", e.to_line());
        std::process::exit(e.kind.code());
    }
}
