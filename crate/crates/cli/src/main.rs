use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use polyseg_cli::commands::{run_parse, run_render, run_schedule, run_score};
use polyseg_cli::config::GenConfig;
use polyseg_cli::dataset::{generate_dataset, validate_dataset, write_atomic, MANIFEST_FILE};
use polyseg_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "polyseg", version, about = "Synthetic few-shot segmentation episodes, instructions and scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a pseudo support/query dataset from a TOML config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a generated dataset against its manifest.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Print curriculum parameters for the given steps.
    Schedule {
        /// Step index; repeatable.
        #[arg(long = "n", required_unless_present = "every")]
        n: Vec<u64>,
        /// Print every k-th step from 0.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        every: Option<u64>,
        /// Read schedule fields from a gen config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Tab-separated output with a header row.
        #[arg(long)]
        tsv: bool,
    },
    /// Render an instruction from a JSON request.
    Render {
        #[arg(long)]
        request: PathBuf,
        /// Print the full record with placeholder spans.
        #[arg(long)]
        json: bool,
    },
    /// Parse a model output file into polygons.
    Parse { file: PathBuf },
    /// Score predictions against a dataset's query masks.
    Score {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// TSV mapping episode to fold.
        #[arg(long)]
        folds: Option<PathBuf>,
        /// Directory for report.json and report.tsv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Gen { config, out } => {
            let cfg = GenConfig::load(&config).map_err(CliError::data)?;
            let m = generate_dataset(&cfg, &out)?;
            Ok(format!("wrote {} pairs and {}\n", m.pairs.len(), out.join(MANIFEST_FILE).display()))
        }
        Command::Validate { dataset } => {
            let m = validate_dataset(&dataset).map_err(CliError::data)?;
            Ok(format!("ok: {} pairs\n", m.pairs.len()))
        }
        Command::Schedule { n, every, config, tsv } => {
            let cfg = match config {
                Some(p) => GenConfig::load(&p).map_err(CliError::data)?.schedule(),
                None => GenConfig::default().schedule(),
            };
            let mut steps = n;
            if let Some(k) = every {
                steps.extend((0..cfg.total_steps).step_by(k as usize));
            }
            run_schedule(&cfg, &steps, tsv)
        }
        Command::Render { request, json } => run_render(&request, json),
        Command::Parse { file } => run_parse(&file),
        Command::Score { dataset, predictions, folds, out } => {
            let scored = run_score(&dataset, &predictions, folds.as_deref())?;
            let tsv = scored.report.to_tsv();
            if let Some(dir) = out {
                (|| -> anyhow::Result<()> {
                    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                    let json = serde_json::to_string_pretty(&scored)? + "\n";
                    write_atomic(&dir.join("report.json"), json.as_bytes())?;
                    write_atomic(&dir.join("report.tsv"), tsv.as_bytes())
                })()
                .map_err(CliError::data)?;
            }
            for ep in &scored.failures {
                eprintln!("warning: episode {ep} has no parseable prediction, scored 0");
            }
            Ok(tsv)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
