use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use adapt_nav::cli::{execute, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADAPT_NAV_LOG", "warn")).init();
    let result = match Cli::try_parse() {
        Ok(cli) => execute(cli),
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            Err(adapt_nav::Error::Config(msg.trim_start_matches("error: ").to_string()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ");
            eprintln!("error: kind={} {line}", e.kind());
            ExitCode::from(2)
        }
    }
}
