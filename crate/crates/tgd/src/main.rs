use std::process::ExitCode;

use clap::Parser;
use tgd::cli::{Cli, Command};
use tgd::commands::{cmd_evaluate, cmd_gendata, cmd_pretrain, cmd_transfer};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gendata(a) => cmd_gendata(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Transfer(a) => cmd_transfer(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match result {
        Ok(summary) => {
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", summary.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
