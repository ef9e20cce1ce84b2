use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use defecthom::multiscale::Column;
use defecthom_cli::{exit_code_for, run, ExperimentConfig, Kind, RunOptions, EXIT_CONTRACT, EXIT_OK};

#[derive(Parser)]
#[command(name = "defecthom", version, about = "Run homogenization experiments from a TOML configuration")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a configuration file.
    Run {
        config: PathBuf,
        /// Override the experiment kind of the configuration.
        #[arg(long, value_enum)]
        kind: Option<Kind>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Neither read nor write cached cell solutions.
        #[arg(long)]
        no_cache: bool,
        /// Error columns of convergence tables, comma separated
        /// (l2, h1, w1-inf, h1-periodic-only, w1-inf-periodic-only, hessian, residual).
        #[arg(long, value_delimiter = ',', value_parser = parse_column)]
        columns: Option<Vec<Column>>,
    },
    /// Check a configuration without solving anything.
    Validate { config: PathBuf },
}

fn parse_column(s: &str) -> Result<Column, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown column `{s}`"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Validate { config } => ExperimentConfig::load(&config).and_then(|c| {
            c.check()?;
            print!("{}", c.to_toml()?);
            Ok(EXIT_OK)
        }),
        Cmd::Run {
            config,
            kind,
            out,
            no_cache,
            columns,
        } => ExperimentConfig::load(&config).and_then(|c| {
            let ro = RunOptions {
                kind,
                out,
                no_cache,
                columns,
            };
            let outcome = run(&c, &ro)?;
            for k in &outcome.manifest.contracts {
                println!("{} {}", if k.ok { "PASS" } else { "FAIL" }, k.name);
            }
            println!("outputs in {}", outcome.out_dir.display());
            Ok(if outcome.ok() { EXIT_OK } else { EXIT_CONTRACT })
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
