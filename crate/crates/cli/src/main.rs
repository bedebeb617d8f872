use std::process::ExitCode;

use clap::Parser;

use spinpol_cli::cli::Cli;
use spinpol_cli::error::EXIT_NUMERICAL;
use spinpol_cli::execute;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out_dir = cli.out_dir.clone();
    match execute(cli) {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for (k, v) in &report.results {
                if !(v.is_array() || v.is_object()) {
                    println!("{k} = {v}");
                }
            }
            for o in &report.outputs {
                println!("wrote {}", out_dir.join(&o.path).display());
            }
            match report.failure {
                Some(f) => {
                    eprintln!("spinpol: numerical failure: {f}");
                    ExitCode::from(EXIT_NUMERICAL as u8)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("spinpol: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
