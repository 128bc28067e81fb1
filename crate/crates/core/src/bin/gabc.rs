use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gabc::ablation::parse_rows;
use gabc::config::{selftest, ExperimentConfig};
use gabc::experiment::{cmd_ablate, cmd_dump_data, cmd_run};

#[derive(Parser)]
#[command(version, about = "Graph-based adaptive betweenness clustering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this single seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Parent directory for outputs (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed and write logs, checkpoints and plots.
    Run(Common),
    /// Run the ablation grid.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Row selection, e.g. `1,11-16` or `M-11` (default: all).
        #[arg(long, default_value = "all")]
        rows: String,
    },
    /// Check that shipped defaults equal their reference values.
    Selftest,
    /// Write the synthetic pools of one seed as CSV.
    DumpData {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> gabc::Result<(ExperimentConfig, Option<String>)> {
    let (mut config, raw) = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            (ExperimentConfig::from_toml_str(&text)?, Some(text))
        }
        None => (ExperimentConfig::default(), None),
    };
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
        config.train.seed = seed;
    }
    Ok((config, raw))
}

fn execute(cli: Cli) -> gabc::Result<bool> {
    match cli.command {
        Command::Run(common) => {
            let (config, raw) = load(&common)?;
            let report = cmd_run(&config, raw.as_deref(), common.out.as_deref())?;
            println!("final target accuracy: {}", report.accuracy);
            println!("outputs: {}", report.dir.display());
        }
        Command::Ablate { common, rows } => {
            let (config, raw) = load(&common)?;
            let rows = parse_rows(&rows)?;
            let (dir, table) = cmd_ablate(&config, &rows, raw.as_deref(), common.out.as_deref())?;
            print!("{}", table.to_markdown());
            println!("outputs: {}", dir.display());
        }
        Command::Selftest => {
            let mut ok = true;
            for c in selftest() {
                let status = if c.passed() { "ok" } else { "MISMATCH" };
                println!("{:<16} expected {:<8} got {:<8} {status}", c.key, c.expected, c.actual);
                ok &= c.passed();
            }
            return Ok(ok);
        }
        Command::DumpData { common } => {
            let (config, _) = load(&common)?;
            let seed = config.seeds[0];
            let dir = common.out.unwrap_or_else(|| config.output_dir.clone());
            let path = dir.join(format!("pools-seed{seed}.csv"));
            cmd_dump_data(&config, seed, &path)?;
            println!("{}", path.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
