use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use shift_index::workbench::{self, parse_config, Command, EXIT_OTHER, EXIT_PARSE};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    CheckGroup,
    Ellipticity,
    Index,
    Verify,
    Sweep,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::CheckGroup => Command::CheckGroup,
            Cmd::Ellipticity => Command::Ellipticity,
            Cmd::Index => Command::Index,
            Cmd::Verify => Command::Verify,
            Cmd::Sweep => Command::Sweep,
        }
    }
}

/// Index workbench for operators with shifts on the circle.
///
/// Exit codes: 0 success, 1 other failure, 2 config error, 3 not elliptic,
/// 4 unstable numerics, 5 index disagreement.
#[derive(Debug, Parser)]
#[command(name = "workbench", version)]
struct Args {
    /// Defaults to `run.command` from the config.
    #[arg(value_enum)]
    command: Option<Cmd>,
    #[arg(long)]
    config: PathBuf,
    /// Directory for report.json, report.txt and sweep.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", args.config.display());
            return ExitCode::from(EXIT_OTHER as u8);
        }
    };
    let cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            for issue in &e.0 {
                eprintln!("{}: {issue}", args.config.display());
            }
            return ExitCode::from(EXIT_PARSE as u8);
        }
    };
    let seed = args.seed.unwrap_or(cfg.run.seed);
    let Some(command) = args.command.map(Command::from).or(cfg.run.command) else {
        eprintln!("no command given and the config has no run.command");
        return ExitCode::from(EXIT_PARSE as u8);
    };
    let report = workbench::run(&cfg, command, seed);
    print!("{}", report.to_text());
    let out = args.out.or_else(|| cfg.run.out.as_ref().map(PathBuf::from));
    if let Some(dir) = out {
        if let Err(e) = report.write(&dir) {
            eprintln!("cannot write reports to {}: {e}", dir.display());
            return ExitCode::from(EXIT_OTHER as u8);
        }
    }
    ExitCode::from(report.exit_code() as u8)
}
