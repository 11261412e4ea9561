use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use reframe::config::{RunConfig, Setting};
use reframe::pipeline::{self, EvalReport};
use reframe::text::StrategySet;

#[derive(Debug, Parser)]
#[command(name = "reframe", version, about = "Positive text reframing at desk scale")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "config/toy.toml")]
    config: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the classifiers, fluency model and generator.
    Train,
    /// Reframe the test split, or a single text given with --input.
    Generate {
        #[arg(long)]
        setting: Option<Setting>,
        /// A single text to reframe instead of the test split.
        #[arg(long)]
        input: Option<String>,
        /// Comma-separated strategy labels for --input in the controlled setting.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long, default_value = "outputs.tsv")]
        out: PathBuf,
    },
    /// Score an outputs file against the test split.
    Evaluate {
        /// Outputs file written by `generate`.
        #[arg(long)]
        input: PathBuf,
        /// Where to write the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the full system with each component disabled.
    Ablate {
        #[arg(long)]
        setting: Option<Setting>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check policy gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        limit: usize,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
    },
}

fn write_json(path: &std::path::Path, json: &str) -> Result<()> {
    std::fs::write(path, format!("{json}\n")).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(&cli.config).with_context(|| format!("[config] {}", cli.config.display()))?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    match cli.command {
        Command::Train => {
            let summary = pipeline::cmd_train(&cfg)?;
            println!("artifacts written to {}", summary.dir.display());
            if let Some(last) = summary.report.as_ref().and_then(|r| r.trace.last()) {
                let l = last.losses;
                println!(
                    "epoch {}: l_cls {:.4}  l_cont {:.4}  l_lm {:.4}  l_final {:.4}",
                    last.epoch, l.l_cls, l.l_cont, l.l_lm, l.l_final
                );
            }
            if !summary.classifiers.is_empty() {
                println!("{:<26} {:>7} {:>7}", "classifier (dev)", "F1", "Acc");
                for r in &summary.classifiers {
                    println!("{:<26} {:>7.4} {:>7.4}", r.name, r.eval.f1, r.eval.accuracy);
                }
            }
        }
        Command::Generate {
            setting,
            input,
            strategy,
            out,
        } => {
            let setting = setting.unwrap_or(cfg.run.setting);
            match input {
                Some(text) => {
                    let set = strategy.as_deref().map(StrategySet::parse).transpose()?;
                    if setting == Setting::Controlled && set.is_none() {
                        bail!("[generate] the controlled setting needs --strategy with --input");
                    }
                    let r = pipeline::generate_single(&cfg, setting, &text, set.as_ref())?;
                    let w = &r.result.winner;
                    println!("{}", w.text);
                    let strategy = w.strategy_score.map_or_else(|| "-".to_string(), |s| format!("{s:.4}"));
                    println!(
                        "strategy {strategy}  similarity {:.4}  fluency {:.4}  final {:.6}  method {}",
                        w.similarity_score, w.fluency, w.final_score, w.generation.method_tag
                    );
                }
                None => {
                    let rows = pipeline::cmd_generate(&cfg, setting, &out)?;
                    println!("{} outputs written to {}", rows.len(), out.display());
                    println!("trace written to {}", pipeline::trace_path(&out).display());
                }
            }
        }
        Command::Evaluate { input, out } => {
            let report = pipeline::cmd_evaluate(&cfg, &input)?;
            println!("{}", EvalReport::header());
            println!("{}", report.table_row(&format!("n={}", report.n)));
            if let Some(path) = out {
                write_json(&path, &report.to_json()?)?;
            }
        }
        Command::Ablate { setting, out } => {
            let setting = setting.unwrap_or(cfg.run.setting);
            let report = pipeline::cmd_ablate(&cfg, setting)?;
            print!("{}", report.table());
            if let Some(path) = out {
                write_json(&path, &serde_json::to_string_pretty(&report)?)?;
            }
        }
        Command::Gradcheck { limit, epsilon } => {
            let r = pipeline::cmd_gradcheck(&cfg, limit, epsilon)?;
            println!(
                "checked {} instances; max relative error {:.3e} (instance {})",
                r.checked, r.max_relative_error, r.worst_instance
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("reframe: {e:#}");
            ExitCode::FAILURE
        }
    }
}
