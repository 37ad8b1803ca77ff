use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use nestbox_cli::commands::{self, CliError, Exit};
use nestbox_cli::{parse_assignment, BlobConfig, RunConfig, KEYS};

#[derive(Parser)]
#[command(
    name = "nestbox",
    version,
    about = "Continual learning with nested interval parameter boxes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a task sequence and write checkpoint, metrics and report.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. `--set seed=1`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE", value_parser = assignment)]
        set: Vec<(String, String)>,
        /// Output directory; shorthand for `--set out_dir=...`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the accuracy matrix and final average accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run config; defaults to the one stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE", value_parser = assignment)]
        set: Vec<(String, String)>,
        /// Where to write the JSON report (default: next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every recorded guarantee; exits 1 on any violation.
    Verify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE", value_parser = assignment)]
        set: Vec<(String, String)>,
        /// Parameter vectors sampled from the final box. 0 keeps only the
        /// structural checks.
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic blob dataset as IDX files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 100)]
        test_per_class: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 4.0)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List the config keys.
    Keys,
}

fn assignment(s: &str) -> Result<(String, String), String> {
    parse_assignment(s).ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))
}

fn run(cli: Cli) -> Result<Exit, CliError> {
    match cli.command {
        Command::Train { config, mut set, out } => {
            if let Some(out) = out {
                set.push(("out_dir".into(), out.display().to_string()));
            }
            let cfg = RunConfig::load(&config, &set)?;
            let done = commands::train(&cfg)?;
            print!("{}", commands::format_matrix(&done.report.accuracy));
            println!("average accuracy {:.4}", done.report.average_accuracy);
            for g in &done.report.guarantees {
                println!(
                    "task {}: guaranteed {:.4} of train acc {:.4}{}",
                    g.task,
                    g.guaranteed_acc,
                    g.train_acc,
                    if g.threshold_met {
                        ""
                    } else {
                        " (threshold not reached)"
                    }
                );
            }
            println!("wrote {}", done.out_dir.display());
            Ok(Exit::Ok)
        }
        Command::Eval {
            checkpoint,
            config,
            set,
            out,
        } => {
            let ck = nestbox_core::Checkpoint::load(&checkpoint).map_err(CliError::from)?;
            let cfg = commands::resolve_config(&ck, config.as_deref(), &set)?;
            let report = commands::eval(&checkpoint, &cfg)?;
            print!("{}", commands::format_matrix(&report.accuracy));
            println!("average accuracy {:.4}", report.average_accuracy);
            let out = out.unwrap_or_else(|| sibling(&checkpoint, commands::EVAL_FILE));
            commands::write_eval(&out, &report)?;
            Ok(Exit::Ok)
        }
        Command::Verify {
            checkpoint,
            config,
            set,
            samples,
            out,
        } => {
            let ck = nestbox_core::Checkpoint::load(&checkpoint).map_err(CliError::from)?;
            let cfg = commands::resolve_config(&ck, config.as_deref(), &set)?;
            let report = commands::verify(&checkpoint, &cfg, samples)?;
            let out = out.unwrap_or_else(|| sibling(&checkpoint, commands::VERIFY_FILE));
            commands::write_verification(&out, &report)?;
            for t in &report.per_task {
                println!(
                    "task {}: guaranteed {:.4} (recorded {:.4}), center {:.4}",
                    t.task, t.guaranteed_acc, t.recorded_guaranteed_acc, t.center_acc
                );
            }
            if report.passed() {
                println!("ok: {} boxes, {} samples, no violations", report.tasks, report.samples);
                Ok(Exit::Ok)
            } else {
                println!("{} violations", report.violations.len());
                for v in report.violations.iter().take(20) {
                    println!("  {}", serde_json::to_string(v).unwrap_or_default());
                }
                Ok(Exit::Violation)
            }
        }
        Command::Synth {
            out,
            classes,
            per_class,
            test_per_class,
            dim,
            separation,
            seed,
        } => {
            let blobs = BlobConfig {
                classes,
                per_class,
                test_per_class,
                dim,
                separation,
                seed,
            };
            commands::synth(&out, &blobs)?;
            println!("wrote {}", out.display());
            Ok(Exit::Ok)
        }
        Command::Keys => {
            for (k, doc) in KEYS {
                println!("{k:22} {doc}");
            }
            Ok(Exit::Ok)
        }
    }
}

fn sibling(path: &std::path::Path, name: &str) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from(name), |p| p.join(name))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let exit = match run(Cli::parse()) {
        Ok(exit) => exit,
        Err(e) => {
            error!("{e}");
            e.exit
        }
    };
    ExitCode::from(exit.code() as u8)
}
