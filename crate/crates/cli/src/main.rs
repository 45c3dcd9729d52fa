mod args;
mod commands;
mod error;

use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use args::{Cli, Command};
use commands::Context;
use error::{CliError, Result};

fn load_invocation(path: &std::path::Path) -> Result<Cli> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_value(value["invocation"].clone())
        .map_err(|e| CliError::Config(format!("{}: invocation: {e}", path.display())))
}

fn run(mut cli: Cli) -> Result<()> {
    if let Command::Replay(r) = &cli.command {
        let mut inner = load_invocation(&r.resolved)?;
        if matches!(inner.command, Command::Replay(_)) {
            return Err(CliError::Config(
                "a replay file cannot point at another replay".into(),
            ));
        }
        inner.global.out_dir = cli.global.out_dir.clone();
        log::info!(
            "replaying {} into {}",
            inner.command.name(),
            inner.global.out_dir.display()
        );
        cli = inner;
    }
    commands::resolve(&mut cli)?;
    let ctx = Context {
        global: cli.global.clone(),
    };
    let resolved = json!({
        "tool": "polytts",
        "version": env!("CARGO_PKG_VERSION"),
        "command": cli.command.name(),
        "invocation": cli,
    });
    let path = ctx.output(std::path::Path::new(&format!(
        "{}.resolved.json",
        cli.command.name()
    )))?;
    let text = serde_json::to_string_pretty(&resolved).expect("invocation serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    commands::execute(&ctx, &cli.command)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
