use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fk_cli::{load_config, read_report, run, summarize, Command};

#[derive(Parser)]
#[command(
    name = "fk",
    version,
    about = "Semilinear Feynman-Kac solver and verification runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Multiplies every statistical tolerance.
    #[arg(long, global = true)]
    tol_scale: Option<f64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Evaluate u(t, x).
    Solve,
    /// Backward-equation checks: comparison, estimates, explicit linear solution.
    VerifyBsde,
    /// Checks of u: Markov consistency, B-continuity, terminal behaviour, growth, reference solver.
    VerifyFk,
    /// Convergence in paths, steps and dimension.
    Sweep,
    /// Print the verdicts of an existing output directory.
    Report,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Solve => Command::Solve,
            Sub::VerifyBsde => Command::VerifyBsde,
            Sub::VerifyFk => Command::VerifyFk,
            Sub::Sweep => Command::Sweep,
            Sub::Report => Command::Report,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = Command::from(cli.command);

    if command == Command::Report {
        let dir = match (&cli.out, &cli.config) {
            (Some(o), _) => o.clone(),
            (None, Some(c)) => match load_config(c) {
                Ok(cfg) => cfg.out,
                Err(e) => return fail(&e.to_string()),
            },
            (None, None) => PathBuf::from("out"),
        };
        return match read_report(&dir) {
            Ok(r) => {
                print!("{}", summarize(&r));
                ExitCode::from(r.exit_code() as u8)
            }
            Err(e) => fail(&e),
        };
    }

    let Some(path) = cli.config else {
        return fail("--config is required");
    };
    let mut cfg = match load_config(&path) {
        Ok(c) => c,
        Err(e) => return fail(&e.to_string()),
    };
    if let Err(e) = cfg.apply_overrides(cli.seed, cli.threads, cli.out, cli.tol_scale) {
        return fail(&e.to_string());
    }
    let output = match run(&cfg, command) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    if let Err(e) = output.write(&cfg.out) {
        return fail(&format!("cannot write {}: {e}", cfg.out.display()));
    }
    print!("{}", summarize(&output.report));
    ExitCode::from(output.report.exit_code() as u8)
}

fn fail(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}
