use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hetdim::cli_runner::{check_model, exit_code, replay_file, run_experiment};

#[derive(Parser)]
#[command(name = "hetdim", version, about = "Heterodimensional cycles near a saddle with homoclinic tangencies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Re-evaluate every check of a cycle certificate.
    Replay { certificate: PathBuf },
    /// Validate a config and report the open conditions on its model.
    CheckModel {
        #[arg(long)]
        config: PathBuf,
    },
}

fn init_logging() -> Result<(), String> {
    let level = std::env::var("HETDIM_LOG").unwrap_or_else(|_| "error".into());
    if !matches!(level.as_str(), "error" | "info" | "debug") {
        return Err(format!("HETDIM_LOG must be one of error, info, debug (got {level:?})"));
    }
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .init();
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).unwrap_or_else(|e| format!("{{\"error\": \"{e}\"}}"))
}

fn dispatch(cli: Cli) -> u8 {
    let result = match cli.command {
        Command::Run { config, out, jobs } => run_experiment(&config, out.as_deref(), jobs).map(|s| {
            for c in &s.checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("{}: {}", s.experiment, if s.passed { "all checks passed" } else { "some checks failed" });
            s.passed
        }),
        Command::Replay { certificate } => replay_file(&certificate).map(|r| {
            println!("{}", to_json(&r));
            r.passed
        }),
        Command::CheckModel { config } => check_model(&config).map(|m| {
            println!("{}", to_json(&m));
            m.first_failure.is_none()
        }),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e) as u8
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(msg) = init_logging() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    std::panic::set_hook(Box::new(|info| eprintln!("internal error: {info}")));
    match std::panic::catch_unwind(|| dispatch(cli)) {
        Ok(code) => ExitCode::from(code),
        Err(_) => ExitCode::from(1),
    }
}
