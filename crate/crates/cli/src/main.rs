use std::process::ExitCode;

use embias_cli::config::threads_from_env;
use embias_cli::{parse_config, run, ParseError};

const EXIT_ERROR: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cfg = match parse_config(&argv) {
        Ok(cfg) => cfg,
        Err(ParseError::Clap(e)) => e.exit(),
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match threads_from_env() {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("embias: error: cannot start {n} worker threads: {e}");
                return ExitCode::from(EXIT_ERROR);
            }
        }
        Ok(None) => {}
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run(&cfg, &argv) {
        Ok(outcome) => {
            eprintln!(
                "embias: wrote {} files to {}",
                outcome.files.len(),
                outcome.dir.display()
            );
            if outcome.exit_code != 0 {
                eprintln!("embias: convergence thresholds not met; pass --allow-nonconverged to accept the fit");
            }
            ExitCode::from(outcome.exit_code)
        }
        Err(e) => {
            eprintln!("embias: error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
