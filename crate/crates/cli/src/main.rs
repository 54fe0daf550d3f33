use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use adagame_core::engine::output::{write_jsonl, write_summary_csv, write_sweep_csv};
use adagame_core::engine::{verify, Game, GameConfig, SweepConfig, VerifyOptions, SUITES};
use adagame_core::partition::{audit_partition, safe_partition, safe_point, DiscreteDistribution};
use adagame_core::value::parse_rational;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "adagame", version, about = "Adaptive data analysis games between curators and analysts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

#[derive(clap::Args)]
struct Common {
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the trials of one game config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Runs every point of a sweep file and prints one summary row per point.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Runs a property suite.
    Verify {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(SUITES))]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of random instances or Monte Carlo draws.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Builds a rounding partition for a distribution given as `position weight` lines.
    Partition {
        /// Distribution file; standard input when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Width parameter, as `p/q` or a decimal.
        #[arg(long)]
        epsilon: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn run(config: &Path, common: &Common) -> Result<()> {
    let mut cfg = GameConfig::from_toml(&read_text(config)?)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.trials = trials;
    }
    let out_path = common.out.clone().or_else(|| cfg.output.as_ref().map(PathBuf::from));
    let game = Game::new(cfg.clone())?;
    let (summary, outcomes) = game.monte_carlo(cfg.trials, cfg.seed)?;
    let mut out = open_out(out_path.as_deref())?;
    match common.format {
        Format::Jsonl => write_jsonl(&mut out, &cfg, &summary, &outcomes)?,
        Format::Csv => write_summary_csv(&mut out, &cfg, &summary)?,
    }
    out.flush()?;
    eprintln!(
        "{} trials, {} curator losses, failure rate {:.4} (95% interval {:.4} to {:.4})",
        summary.trials, summary.failure_count, summary.failure_rate, summary.interval.0, summary.interval.1
    );
    Ok(())
}

fn sweep(config: &Path, common: &Common) -> Result<()> {
    let mut sweep = SweepConfig::from_toml(&read_text(config)?)?;
    if let Some(seed) = common.seed {
        sweep.base.insert("seed".into(), toml::Value::Integer(i64::try_from(seed).context("seed too large for a sweep file")?));
    }
    let rows = sweep.run(common.trials)?;
    let mut out = open_out(common.out.as_deref())?;
    match common.format {
        Format::Csv => write_sweep_csv(&mut out, &rows)?,
        Format::Jsonl => {
            for row in &rows {
                serde_json::to_writer(&mut out, row)?;
                writeln!(out)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, common } => run(&config, &common),
        Command::Sweep { config, common } => sweep(&config, &common),
        Command::Verify { suite, seed, trials, out } => {
            let report = verify(&suite, &VerifyOptions { seed, trials })?;
            let mut w = open_out(out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w)?;
            w.flush()?;
            if !report.passed() {
                bail!("{suite}: {} of {} checks violated", report.violations, report.checks);
            }
            eprintln!("{suite}: {} checks passed", report.checks);
            Ok(())
        }
        Command::Partition { config, epsilon, out } => {
            let text = match config {
                Some(p) => read_text(&p)?,
                None => {
                    let mut s = String::new();
                    io::stdin().read_to_string(&mut s)?;
                    s
                }
            };
            let eps = parse_rational(&epsilon).map_err(|e| anyhow::anyhow!("epsilon: {}", e.0))?;
            let d = DiscreteDistribution::parse(&text)?;
            let p = safe_partition(&d, &eps)?;
            let issues = audit_partition(&d, &p);
            let mut w = open_out(out.as_deref())?;
            writeln!(w, "# safe point {}", safe_point(&d))?;
            for b in p.boundaries() {
                writeln!(w, "{b}")?;
            }
            w.flush()?;
            if !issues.is_empty() {
                bail!("partition audit failed: {}", issues.join("; "));
            }
            Ok(())
        }
    }
}
