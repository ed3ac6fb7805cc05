use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use ctxgen::config::CorpusFormat;
use ctxgen_cli::commands::{cmd_ingest, cmd_report, cmd_run, cmd_selftrain, cmd_sweep, SweepAxis};

#[derive(Parser)]
#[command(
    name = "ctxgen",
    about = "Generative data augmentation for text classification: fine-tune a context \
             generator on QA data, cast your task into question-answer form, synthesize \
             labeled training data, and evaluate under a seeded restart protocol.",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a QA corpus (SQuAD tree or canonical JSONL) into canonical
    /// JSONL plus ingestion stats.
    Ingest {
        /// Input corpus file.
        #[arg(long)]
        input: PathBuf,
        /// Input format: squad or canonical.
        #[arg(long, default_value = "canonical")]
        format: String,
        /// Canonical JSONL output path.
        #[arg(long)]
        output: PathBuf,
        /// Optional stats JSON path (defaults to <output>.stats.json).
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Run the configured experiment end to end and write all artifacts.
    Run {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Overwrite an output directory recorded under a different config.
        #[arg(long)]
        force: bool,
    },
    /// Re-run the experiment across an axis of values and emit the series.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Axis to vary: n_per_label, shots, or k.
        #[arg(long)]
        axis: SweepAxis,
        /// Ascending values, comma separated (e.g. 50,150,450).
        #[arg(long, value_delimiter = ',')]
        values: Vec<u64>,
    },
    /// Continue a finished run with self-training on unlabeled texts.
    Selftrain {
        #[arg(long)]
        config: PathBuf,
        /// Unlabeled texts, JSONL with a "text" field per line.
        #[arg(long)]
        unlabeled: PathBuf,
        #[arg(long, default_value_t = 3)]
        iterations: u32,
        /// Re-initialize the classifier each iteration instead of
        /// continuing from the current state.
        #[arg(long)]
        reinit: bool,
    },
    /// Re-render the results table from a run directory.
    Report {
        /// Run output directory (holds eval.json).
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Ingest {
            input,
            format,
            output,
            stats,
        } => {
            let format: CorpusFormat = format.parse()?;
            let stats_path = stats.unwrap_or_else(|| {
                let mut p = output.as_os_str().to_owned();
                p.push(".stats.json");
                PathBuf::from(p)
            });
            let stats = cmd_ingest(&input, format, &output, Some(&stats_path))?;
            println!(
                "ingested {} triples ({} unanswerable skipped, {} rejected) -> {}",
                stats.accepted,
                stats.skipped_unanswerable,
                stats.rejected.len(),
                output.display()
            );
        }
        Command::Run { config, force } => {
            let summary = cmd_run(&config, force)?;
            println!(
                "{}: micro-F1 {:.3} ± {:.3}, macro-F1 {:.3} ± {:.3} over {} restarts",
                summary.eval.mode,
                summary.eval.mean.micro_f1,
                summary.eval.std.micro_f1,
                summary.eval.mean.macro_f1,
                summary.eval.std.macro_f1,
                summary.eval.per_seed.len()
            );
            println!("artifacts: {}", summary.output_dir.display());
        }
        Command::Sweep {
            config,
            axis,
            values,
        } => {
            let series = cmd_sweep(&config, axis, &values)?;
            for p in &series.points {
                match (p.mean_macro_f1, &p.error) {
                    (Some(mean), _) => {
                        println!("{} = {}: macro-F1 {:.3}", series.axis, p.value, mean)
                    }
                    (None, Some(e)) => println!("{} = {}: FAILED ({e})", series.axis, p.value),
                    _ => {}
                }
            }
        }
        Command::Selftrain {
            config,
            unlabeled,
            iterations,
            reinit,
        } => {
            let report = cmd_selftrain(&config, &unlabeled, iterations, reinit)?;
            for restart in &report.restarts {
                let line: Vec<String> = restart
                    .iterations
                    .iter()
                    .map(|it| format!("it{}: {:.3}", it.iteration, it.macro_f1))
                    .collect();
                println!("seed {}: {}", restart.seed, line.join(", "));
            }
        }
        Command::Report { dir } => {
            print!("{}", cmd_report(&dir)?);
        }
    }
    Ok(())
}
