//! `qgen`: ingest data, pretrain the evaluator, train, generate, evaluate,
//! score and compare reports.
//!
//! Exit codes: 0 success, 2 usage, 3 missing or invalid input, 4 contract
//! violation, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use qgen_core::pipeline::{self, IngestSource, DEFAULT_DEV_FRACTION};
use qgen_core::training::RewardMode;
use qgen_core::{Error, ErrorClass};

#[derive(Parser)]
#[command(name = "qgen", version, about = "Answer-aware question generation with reward-weighted training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a SQuAD file or a synthetic corpus into train/dev/test plus a vocabulary.
    Ingest(IngestArgs),
    /// Pretrain the evaluator with replaced-token detection, then freeze it.
    PretrainEvaluator {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the generator.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        evaluator: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// none, bleu or bleu+semantic (overrides the config file).
        #[arg(long, value_parser = parse_mode)]
        reward_mode: Option<RewardMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the greedy-decoded question for a context and answer.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        context: String,
        #[arg(long, value_parser = non_empty)]
        answer: String,
    },
    /// Score a trained model on the test split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        evaluator: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score JSON lines of {"id", "candidate", "reference"}.
    Score {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        evaluator: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two evaluation reports side by side.
    Diff { a: PathBuf, b: PathBuf },
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["squad", "synthetic"])))]
struct IngestArgs {
    /// SQuAD v1.1 training file.
    #[arg(long)]
    squad: Option<PathBuf>,
    /// SQuAD v1.1 file used unchanged as the test set.
    #[arg(long, requires = "squad")]
    squad_test: Option<PathBuf>,
    /// Number of synthetic triples to generate.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    synthetic: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_DEV_FRACTION)]
    dev_fraction: f64,
}

fn parse_mode(s: &str) -> Result<RewardMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn non_empty(s: &str) -> Result<String, String> {
    if s.trim().is_empty() {
        Err("must not be empty".into())
    } else {
        Ok(s.to_string())
    }
}

fn run(command: Command) -> qgen_core::Result<()> {
    match command {
        Command::Ingest(a) => {
            let source = match (a.squad, a.synthetic) {
                (Some(path), None) => IngestSource::Squad { path, test: a.squad_test },
                (None, Some(n)) => IngestSource::Synthetic(n as usize),
                _ => unreachable!("clap enforces exactly one source"),
            };
            let s = pipeline::ingest(&source, &a.out, a.seed, a.dev_fraction)?;
            println!(
                "train {} dev {} test {} vocab {} warnings {}",
                s.train, s.dev, s.test, s.vocab_size, s.warnings
            );
        }
        Command::PretrainEvaluator { data, config, out } => {
            let history = pipeline::pretrain_evaluator(&data, config.as_deref(), &out)?;
            match history.last() {
                Some(e) => println!(
                    "epochs {} heldout loss {:.4} accuracy {:.4}",
                    history.len(),
                    e.heldout_loss,
                    e.heldout_accuracy
                ),
                None => println!("evaluator frozen without pretraining"),
            }
        }
        Command::Train {
            data,
            evaluator,
            config,
            reward_mode,
            out,
        } => {
            let s = pipeline::train(&data, evaluator.as_deref(), config.as_deref(), reward_mode, &out)?;
            print!("epochs {} steps {}", s.epochs, s.steps);
            if let Some(dev) = s.final_dev {
                print!(" dev loss {:.4} dev BLEU {:.2}", dev.l_total, dev.corpus_bleu);
            }
            println!();
        }
        Command::Generate { model, context, answer } => {
            println!("{}", pipeline::generate(&model, &context, &answer)?);
        }
        Command::Evaluate {
            model,
            evaluator,
            data,
            out,
        } => {
            let r = pipeline::evaluate(&model, &evaluator, &data, &out)?;
            println!(
                "examples {} corpus BLEU {:.2} mean cosine {:.4} mean reward {:.4}",
                r.examples, r.corpus_bleu, r.mean_cosine, r.mean_reward
            );
        }
        Command::Score { input, evaluator, out } => {
            println!("scored {}", pipeline::score(&input, &evaluator, &out)?);
        }
        Command::Diff { a, b } => {
            let (ra, rb) = (pipeline::load_report(&a)?, pipeline::load_report(&b)?);
            let name = |p: &PathBuf| p.file_stem().map_or("?".into(), |s| s.to_string_lossy().into_owned());
            print!("{}", pipeline::diff_reports(&ra, &rb, &name(&a), &name(&b)));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::InvalidInput => 3,
                ErrorClass::Contract => 4,
                ErrorClass::Internal => 1,
            })
        }
    }
}
