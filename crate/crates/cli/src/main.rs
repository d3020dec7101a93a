use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use progfed_core::config::ExperimentConfig;
use progfed_core::report::{compare, MetricsFile};
use progfed_core::Error;

/// Federated training simulator with progressive model growth.
#[derive(Debug, Parser)]
#[command(name = "progfed", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write its metrics file.
    Run {
        config: PathBuf,
        /// Override a config field, e.g. `--set training.lr=0.05`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Metrics file path; defaults to the config's `output`, then to
        /// `<out-dir>/<config stem>.tsv`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for metrics files without an explicit path.
        #[arg(long, env = "PROGFED_OUT_DIR", default_value = ".")]
        out_dir: PathBuf,
        /// Suppress per-round progress on stderr.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Compare the cost of run A against run B at fixed fractions of B's best metric.
    Compare { a: PathBuf, b: PathBuf },
    /// Check a config and print the resolved document.
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn output_path(cfg: &ExperimentConfig, config: &Path, out: Option<PathBuf>, out_dir: &Path) -> PathBuf {
    if let Some(p) = out {
        return p;
    }
    if let Some(p) = &cfg.output {
        return if p.is_relative() { out_dir.join(p) } else { p.clone() };
    }
    let stem = config
        .file_stem()
        .map_or_else(|| "metrics".into(), |s| s.to_string_lossy().into_owned());
    out_dir.join(format!("{stem}.tsv"))
}

fn run(config: &Path, overrides: &[String], out: Option<PathBuf>, out_dir: &Path, quiet: bool) -> Result<()> {
    let cfg = ExperimentConfig::load(config, overrides)?;
    let mut fed = cfg.build(config.parent())?;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let m = fed.run_round()?;
        if !quiet {
            if let Some(metric) = m.metric {
                eprintln!(
                    "round {:>5}  stage {}  loss {:.4}  metric {:.4}",
                    m.round, m.stage, m.loss, metric
                );
            }
        }
        rounds.push(m);
    }
    let file = MetricsFile::from_rounds(&rounds);
    let path = output_path(&cfg, config, out, out_dir);
    file.write(&path)?;
    if !quiet {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            overrides,
            out,
            out_dir,
            quiet,
        } => run(&config, &overrides, out, &out_dir, quiet),
        Command::Compare { a, b } => (|| {
            let fa = MetricsFile::read(&a)?;
            let fb = MetricsFile::read(&b)?;
            print!("{}", compare(&fa, &fb).context("comparing runs")?);
            Ok(())
        })(),
        Command::Validate { config, overrides } => (|| {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            print!("{}", cfg.emit()?);
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.downcast_ref::<Error>() {
                Some(Error::Config(issues)) => {
                    eprintln!("error: invalid config");
                    for issue in issues {
                        eprintln!("  {issue}");
                    }
                }
                _ => eprintln!("error: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}
