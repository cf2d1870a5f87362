use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use reselect::experiment::{self, Baseline, ExperimentConfig};

#[derive(Parser)]
#[command(name = "reselect", version, about = "Actor-critic data re-selection experiments")]
struct Cli {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `output_dir` from the configuration.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Built-in preset used when no --config is given.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Default)]
    preset: Preset,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    FullScale,
}

#[derive(Subcommand)]
enum Command {
    /// Write the noisy pool and the clean validation, test and trusted splits.
    Generate,
    /// Train the base model on the pool.
    Pretrain,
    /// Train the selection agent round by round and fine-tune on its picks.
    #[command(name = "run-rl", alias = "run_rl")]
    RunRl,
    /// Score, select and fine-tune with a heuristic baseline.
    #[command(name = "run-baseline", alias = "run_baseline")]
    RunBaseline {
        #[arg(long, value_enum, default_value_t = Method::All)]
        method: Method,
    },
    /// Tabulate base, baseline and agent results.
    Report,
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Sentlen,
    Rarity,
    Denoise,
    All,
}

impl Method {
    fn baselines(self) -> Vec<Baseline> {
        match self {
            Method::Sentlen => vec![Baseline::SentLen],
            Method::Rarity => vec![Baseline::Rarity],
            Method::Denoise => vec![Baseline::Denoise],
            Method::All => Baseline::ALL.to_vec(),
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => match cli.preset {
            Preset::Default => ExperimentConfig::default(),
            Preset::FullScale => ExperimentConfig::full_scale(),
        },
    };
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.clone();
    }
    config.validate().context("invalid configuration")?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    let dir = config.output_dir.display().to_string();
    match cli.command {
        Command::Generate => {
            let s = experiment::generate(&config).context("generate failed")?;
            println!(
                "wrote {} pairs (corruption {:.3}) and splits of {}/{}/{} to {dir}",
                s.size, s.corruption_rate, s.validation, s.test, s.trusted
            );
        }
        Command::Pretrain => {
            let s = experiment::run_pretrain(&config).context("pretrain failed")?;
            let ppl = s.report.val_perplexity.last().copied().unwrap_or(f64::NAN);
            println!(
                "base model: val ppl {ppl:.4}, test bleu {:.4}, test ppl {:.4}",
                s.metrics.bleu, s.metrics.perplexity
            );
        }
        Command::RunRl => {
            for r in experiment::run_rl(&config).context("run-rl failed")? {
                println!(
                    "round {} (b={}): best step {}, |D_S|={}, corruption {:.3}, val ppl {:.4} -> {:.4}, bleu {:.4} -> {:.4}",
                    r.round,
                    r.batch_size,
                    r.best_step,
                    r.subset_size,
                    r.subset_corruption_rate,
                    r.val_perplexity_before,
                    r.val_perplexity_after,
                    r.test_bleu_before,
                    r.test_bleu_after
                );
            }
        }
        Command::RunBaseline { method } => {
            for b in method.baselines() {
                let s = experiment::run_baseline(&config, b).with_context(|| format!("baseline {b} failed"))?;
                println!(
                    "{b}: kept {}, corruption {:.3}, test bleu {:.4}, test ppl {:.4}",
                    s.selected, s.selection_corruption_rate, s.metrics.bleu, s.metrics.perplexity
                );
            }
        }
        Command::Report => {
            let table = experiment::report(&config).context("report failed")?;
            print!("{}", table.to_tsv());
        }
        Command::Config => print!("{}", config.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
