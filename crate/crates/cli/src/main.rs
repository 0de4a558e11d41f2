mod args;
mod commands;
mod explain;
mod manifest;

use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;

use args::Command;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match args::parse_from(std::env::args_os()) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match &cli.command {
        Command::Stats(a) => commands::cmd_stats(a),
        Command::Synth(a) => commands::cmd_synth(a),
        Command::Preprocess(a) => commands::cmd_preprocess(a),
        Command::Train(a) => commands::cmd_train(a),
        Command::Eval(a) => commands::cmd_eval(a),
        Command::Ablate(a) => commands::cmd_ablate(a),
        Command::Explain(a) => explain::cmd_explain(a),
    };
    match result {
        Ok(text) => {
            let _ = std::io::stdout().write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
