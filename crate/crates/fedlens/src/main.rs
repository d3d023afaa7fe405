use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedlens::dumps::metrics_from_dumps;
use fedlens::export::{summarize, write_long_csv};
use fedlens::presets::{preset, PRESETS};
use fedlens::runner::{self, read_metrics_csv, write_metrics_csv, METRICS_FILE};
use fedlens::{CliError, ExperimentConfig, Result, ThreadPool};

#[derive(Parser)]
#[command(name = "fedlens", version, about = "Federated averaging simulator with layer-wise feature diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config (or a previous run's manifest).
    Run {
        config: PathBuf,
        /// Output directory; defaults to `output.dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a preset study. `list` prints the available presets.
    Preset {
        name: String,
        /// Parent directory for the preset's runs.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the resolved configs without running them.
        #[arg(long)]
        dry_run: bool,
    },
    /// Recompute metrics from a directory of feature dumps.
    Metrics {
        dump_dir: PathBuf,
        /// Output CSV; defaults to `<dump_dir>/metrics.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a run's metrics for plotting.
    Export {
        /// Write the long-format summary (mean and spread over clients).
        #[arg(long)]
        long: bool,
        run_dir: PathBuf,
        /// Output CSV; defaults to `<run_dir>/long.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run_config(path: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = ExperimentConfig::load(path)?;
    let pool = ThreadPool::from_env()?;
    let dir = runner::run(&cfg, out, &pool)?;
    eprintln!("{}: wrote {}", cfg.name, dir.display());
    Ok(())
}

fn run_preset(name: &str, out: Option<&Path>, seed: u64, dry_run: bool) -> Result<()> {
    if name == "list" {
        let mut stdout = std::io::stdout().lock();
        for (n, summary) in PRESETS {
            // a closed pipe (`| head`) just ends the listing
            if writeln!(stdout, "{n:<28} {summary}").is_err() {
                break;
            }
        }
        return Ok(());
    }
    let p = preset(name, seed)?;
    let pool = if dry_run { ThreadPool::new(1) } else { ThreadPool::from_env()? };
    for cfg in &p.variants {
        let dir = match out {
            Some(parent) => parent.join(&cfg.name),
            None => cfg.output.dir.clone(),
        };
        if dry_run {
            std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            let path = dir.join("config.toml");
            std::fs::write(&path, cfg.to_toml()).map_err(|e| CliError::io(&path, e))?;
            eprintln!("{}: wrote {}", cfg.name, path.display());
        } else {
            runner::run(cfg, Some(&dir), &pool)?;
            eprintln!("{}: wrote {}", cfg.name, dir.display());
        }
    }
    Ok(())
}

fn run_metrics(dir: &Path, out: Option<&Path>) -> Result<()> {
    let report = metrics_from_dumps(dir)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let path = out.map_or_else(|| dir.join(METRICS_FILE), Path::to_path_buf);
    write_metrics_csv(&path, &report.records)?;
    eprintln!("{} pairs, {} warnings; wrote {}", report.pairs, report.warnings.len(), path.display());
    Ok(())
}

fn run_export(long: bool, dir: &Path, out: Option<&Path>) -> Result<()> {
    if !long {
        return Err(CliError::config("export", "only --long is supported"));
    }
    let records = read_metrics_csv(&dir.join(METRICS_FILE))?;
    let path = out.map_or_else(|| dir.join("long.csv"), Path::to_path_buf);
    write_long_csv(&path, &summarize(&records))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out } => run_config(config, out.as_deref()),
        Command::Preset { name, out, seed, dry_run } => run_preset(name, out.as_deref(), *seed, *dry_run),
        Command::Metrics { dump_dir, out } => run_metrics(dump_dir, out.as_deref()),
        Command::Export { long, run_dir, out } => run_export(*long, run_dir, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
