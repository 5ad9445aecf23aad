//! End-to-end commands: ingest, evaluator pretraining, training,
//! generation, evaluation, batch scoring and report comparison. Every
//! command that writes files also writes one `manifest-<command>.json`
//! beside them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_json, write_file_atomic};
use crate::config::RunConfig;
use crate::corpus::{generate_synthetic, load_squad, split_three_way, split_train_dev, write_squad, QaTriple};
use crate::error::{Error, Result};
use crate::evaluator::EvaluatorModel;
use crate::generator::GeneratorModel;
use crate::metrics::{score_jsonl, QuestionClass};
use crate::tokenizer::{assemble_input, build_vocab, decode, encode, TokenId, Vocab};
use crate::training::{self, prepare_examples, EpochRecord, EvalReport, RewardMode, RewardSource, TrainConfig};

pub const TRAIN_FILE: &str = "train.json";
pub const DEV_FILE: &str = "dev.json";
pub const TEST_FILE: &str = "test.json";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const BEST_DIR: &str = "best";
pub const FINAL_DIR: &str = "final";
/// Fraction cut off as the test set when no test file is given.
pub const TEST_FRACTION: f64 = 0.1;
pub const DEFAULT_DEV_FRACTION: f64 = 0.06;
pub const MAX_VOCAB: usize = 30_000;
pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub duration_secs: f64,
}

impl RunManifest {
    fn new(command: &str, config: Option<&Path>, inputs: &[&Path], outputs: &[PathBuf], seed: Option<u64>, started: Instant) -> Self {
        let show = |p: &Path| p.display().to_string();
        Self {
            command: command.into(),
            config: config.map(show),
            inputs: inputs.iter().map(|p| show(p)).collect(),
            outputs: outputs.iter().map(|p| show(p)).collect(),
            seed,
            version: VERSION.into(),
            duration_secs: started.elapsed().as_secs_f64(),
        }
    }

    pub fn file_name(command: &str) -> String {
        format!("manifest-{command}.json")
    }

    fn bytes(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("manifest serializes");
        v.push(b'\n');
        v
    }

    fn write_in(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(Self::file_name(&self.command));
        write_file_atomic(&path, &self.bytes())?;
        Ok(path)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Vocab::from_tsv(&text)
}

fn load_triples(path: &Path) -> Result<Vec<QaTriple>> {
    Ok(load_squad(path)?.triples)
}

fn jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    out
}

fn pretty(value: &impl Serialize) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("value serializes");
    v.push(b'\n');
    v
}

fn run_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn check_vocab_size(what: &str, got: usize, vocab: &Vocab) -> Result<()> {
    if got != vocab.size() {
        return Err(Error::invalid(format!(
            "{what} was built for a vocabulary of {got} entries, data vocabulary has {}",
            vocab.size()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IngestSource {
    /// SQuAD v1.1 file, plus an optional file used as the test set.
    Squad { path: PathBuf, test: Option<PathBuf> },
    Synthetic(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub vocab_size: usize,
    /// Triples skipped or repaired while loading.
    pub warnings: usize,
}

/// Loads or generates triples, splits them and writes the three SQuAD
/// files and the vocabulary (built from the train split) into `out`.
/// Without a test file, [`TEST_FRACTION`] is cut off first.
pub fn ingest(source: &IngestSource, out: &Path, seed: u64, dev_fraction: f64) -> Result<IngestSummary> {
    let started = Instant::now();
    let mut warnings = 0;
    let mut inputs: Vec<&Path> = Vec::new();
    let split = match source {
        IngestSource::Synthetic(n) => split_three_way(&generate_synthetic(*n, seed)?, TEST_FRACTION, dev_fraction, seed)?,
        IngestSource::Squad { path, test } => {
            let load = load_squad(path)?;
            warnings += load.warnings.total();
            inputs.push(path);
            match test {
                Some(test_path) => {
                    let test_load = load_squad(test_path)?;
                    warnings += test_load.warnings.total();
                    inputs.push(test_path);
                    let (train, dev) = split_train_dev(&load.triples, dev_fraction, seed)?;
                    crate::corpus::DataSplit {
                        train,
                        dev,
                        test: test_load.triples,
                        seed,
                    }
                }
                None => split_three_way(&load.triples, TEST_FRACTION, dev_fraction, seed)?,
            }
        }
    };
    let (vocab, _) = build_vocab(&split.train, 1, MAX_VOCAB)?;
    create_dir(out)?;
    let mut outputs = Vec::new();
    for (name, part) in [(TRAIN_FILE, &split.train), (DEV_FILE, &split.dev), (TEST_FILE, &split.test)] {
        let path = out.join(name);
        write_squad(&path, part, name.trim_end_matches(".json"))?;
        outputs.push(path);
    }
    let vocab_path = out.join(VOCAB_FILE);
    write_file_atomic(&vocab_path, vocab.to_tsv().as_bytes())?;
    outputs.push(vocab_path);
    RunManifest::new("ingest", None, &inputs, &outputs, Some(seed), started).write_in(out)?;
    Ok(IngestSummary {
        train: split.train.len(),
        dev: split.dev.len(),
        test: split.test.len(),
        vocab_size: vocab.size(),
        warnings,
    })
}

/// Encoded contexts and questions of `triples`, the evaluator's pretraining
/// text.
pub fn rtd_corpus(triples: &[QaTriple], vocab: &Vocab) -> Vec<Vec<TokenId>> {
    triples
        .iter()
        .flat_map(|t| [encode(&t.context, vocab), encode(&t.question, vocab)])
        .filter(|ids| !ids.is_empty())
        .collect()
}

/// RTD-pretrains (or, with `evaluator.skip_rtd`, only initialises) an
/// evaluator on the train split, freezes it and writes it with its
/// vocabulary and per-epoch history.
pub fn pretrain_evaluator(data: &Path, config: Option<&Path>, out: &Path) -> Result<Vec<crate::evaluator::RtdEpoch>> {
    let started = Instant::now();
    let cfg = run_config(config)?;
    let vocab_path = data.join(VOCAB_FILE);
    let vocab = load_vocab(&vocab_path)?;
    let train_path = data.join(TRAIN_FILE);
    let triples = load_triples(&train_path)?;
    let mut model = EvaluatorModel::init(cfg.evaluator_config(vocab.size())?)?;
    let history = if cfg.skip_rtd {
        Vec::new()
    } else {
        model.pretrain_rtd(&rtd_corpus(&triples, &vocab), &cfg.rtd)?
    };
    model.freeze();
    let outputs = vec![out.to_path_buf()];
    let manifest = RunManifest::new("pretrain-evaluator", config, &[&vocab_path, &train_path], &outputs, Some(cfg.train.seed), started);
    let manifest_name = RunManifest::file_name("pretrain-evaluator");
    model.save_with(
        out,
        vec![
            (VOCAB_FILE, vocab.to_tsv().into_bytes()),
            (HISTORY_FILE, jsonl(&history)),
            (manifest_name.as_str(), manifest.bytes()),
        ],
    )?;
    Ok(history)
}

/// Loads an evaluator checkpoint and its vocabulary.
pub fn load_evaluator(dir: &Path) -> Result<(EvaluatorModel, Vocab)> {
    let model = EvaluatorModel::load(dir)?;
    let vocab = load_vocab(&dir.join(VOCAB_FILE))?;
    check_vocab_size("evaluator", model.config().vocab_size, &vocab)?;
    Ok((model, vocab))
}

/// Loads a generator checkpoint and its vocabulary.
pub fn load_generator(dir: &Path) -> Result<(GeneratorModel, Vocab)> {
    let model = GeneratorModel::load(dir)?;
    let vocab = load_vocab(&dir.join(VOCAB_FILE))?;
    check_vocab_size("generator", model.config().vocab_size, &vocab)?;
    Ok((model, vocab))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub final_dev: Option<training::DevMetrics>,
}

/// Trains a generator on `data`. After every epoch `out/final` holds the
/// latest parameters, `out/best` the lowest-dev-loss ones and
/// `out/history.jsonl` the records so far, each replaced atomically.
pub fn train(data: &Path, evaluator: Option<&Path>, config: Option<&Path>, reward_mode: Option<RewardMode>, out: &Path) -> Result<TrainSummary> {
    let started = Instant::now();
    let mut cfg = run_config(config)?;
    if let Some(mode) = reward_mode {
        cfg.train.reward_mode = mode;
    }
    let train_cfg: &TrainConfig = &cfg.train;
    let vocab_path = data.join(VOCAB_FILE);
    let vocab = load_vocab(&vocab_path)?;
    let (train_path, dev_path) = (data.join(TRAIN_FILE), data.join(DEV_FILE));
    let train_set = prepare_examples(&load_triples(&train_path)?, &vocab, train_cfg.max_src_len, train_cfg.max_tgt_len)?;
    let dev_set = prepare_examples(&load_triples(&dev_path)?, &vocab, train_cfg.max_src_len, train_cfg.max_tgt_len)?;
    let evaluator_model = match evaluator {
        Some(dir) => {
            let (model, ev_vocab) = load_evaluator(dir)?;
            if ev_vocab != vocab {
                return Err(Error::invalid("evaluator vocabulary differs from the data vocabulary"));
            }
            Some(model)
        }
        None if train_cfg.reward_mode != RewardMode::None => {
            return Err(Error::invalid(format!(
                "reward mode {} needs an evaluator checkpoint",
                train_cfg.reward_mode
            )))
        }
        None => None,
    };
    let mut model = GeneratorModel::init(cfg.generator_config(vocab.size())?)?;
    create_dir(out)?;
    let vocab_bytes = vocab.to_tsv().into_bytes();
    let mut records: Vec<EpochRecord> = Vec::new();
    let outcome = training::train(
        &mut model,
        evaluator_model.as_ref(),
        &train_set,
        &dev_set,
        train_cfg,
        RewardSource::FromConfig,
        |record, m, is_best| {
            records.push(record.clone());
            m.save_with(&out.join(FINAL_DIR), vec![(VOCAB_FILE, vocab_bytes.clone())])?;
            if is_best {
                m.save_with(&out.join(BEST_DIR), vec![(VOCAB_FILE, vocab_bytes.clone())])?;
            }
            write_file_atomic(&out.join(HISTORY_FILE), &jsonl(&records))
        },
    )?;
    if outcome.history.is_empty() {
        for dir in [FINAL_DIR, BEST_DIR] {
            model.save_with(&out.join(dir), vec![(VOCAB_FILE, vocab_bytes.clone())])?;
        }
        write_file_atomic(&out.join(HISTORY_FILE), b"")?;
    }
    let mut inputs: Vec<&Path> = vec![&vocab_path, &train_path, &dev_path];
    if let Some(e) = evaluator {
        inputs.push(e);
    }
    let outputs = [FINAL_DIR, BEST_DIR, HISTORY_FILE].map(|n| out.join(n));
    RunManifest::new("train", config, &inputs, &outputs, Some(train_cfg.seed), started).write_in(out)?;
    Ok(TrainSummary {
        steps: outcome.steps,
        epochs: outcome.history.len(),
        best_epoch: outcome.best.map(|b| b.epoch),
        final_dev: outcome.history.last().and_then(|r| r.dev.clone()),
    })
}

/// Greedy-decodes a question for `answer` in `context`. The answer need
/// not occur in the context.
pub fn generate(model_dir: &Path, context: &str, answer: &str) -> Result<String> {
    let (model, vocab) = load_generator(model_dir)?;
    let answer_ids = encode(answer, &vocab);
    if answer_ids.is_empty() {
        return Err(Error::invalid("answer must contain at least one token"));
    }
    let src = assemble_input(&encode(context, &vocab), &answer_ids, model.config().max_src_len)?;
    decode(&model.greedy_decode(&src, model.max_question_len())?, &vocab)
}

/// Scores the model on `data/test.json` and writes the report to `out`.
pub fn evaluate(model_dir: &Path, evaluator_dir: &Path, data: &Path, out: &Path) -> Result<EvalReport> {
    let started = Instant::now();
    let (model, model_vocab) = load_generator(model_dir)?;
    let (evaluator, ev_vocab) = load_evaluator(evaluator_dir)?;
    let vocab_path = data.join(VOCAB_FILE);
    let vocab = load_vocab(&vocab_path)?;
    if model_vocab != vocab || ev_vocab != vocab {
        return Err(Error::invalid("model, evaluator and data vocabularies differ"));
    }
    let test_path = data.join(TEST_FILE);
    let cfg = model.config();
    let test = prepare_examples(&load_triples(&test_path)?, &vocab, cfg.max_src_len, cfg.max_tgt_len)?;
    let report = training::evaluate(&model, &evaluator, &vocab, &test, TrainConfig::fine_tune().alpha)?;
    let dir = parent_dir(out);
    create_dir(&dir)?;
    write_file_atomic(out, &pretty(&report))?;
    RunManifest::new("evaluate", None, &[model_dir, evaluator_dir, &vocab_path, &test_path], &[out.to_path_buf()], None, started)
        .write_in(&dir)?;
    Ok(report)
}

/// Scores a JSON-lines file of candidate/reference pairs.
pub fn score(input: &Path, evaluator_dir: &Path, out: &Path) -> Result<usize> {
    let started = Instant::now();
    let (evaluator, vocab) = load_evaluator(evaluator_dir)?;
    let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let scored = score_jsonl(&text, &vocab, &evaluator, TrainConfig::fine_tune().alpha)?;
    let dir = parent_dir(out);
    create_dir(&dir)?;
    write_file_atomic(out, scored.as_bytes())?;
    RunManifest::new("score", None, &[input, evaluator_dir], &[out.to_path_buf()], None, started).write_in(&dir)?;
    Ok(scored.lines().count())
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    read_json(path)
}

fn class_row(report: &EvalReport, class: QuestionClass) -> Option<&training::ClassRow> {
    report.classes.iter().find(|x| x.class == class)
}

/// Side-by-side comparison of two reports: headline metrics, then the
/// per-class table.
pub fn diff_reports(a: &EvalReport, b: &EvalReport, label_a: &str, label_b: &str) -> String {
    let mut s = String::new();
    let w = label_a.len().max(label_b.len()).max(10);
    let _ = writeln!(s, "{:<18} {:>w$} {:>w$} {:>9}", "metric", label_a, label_b, "delta");
    let rows = [
        ("corpus BLEU", a.corpus_bleu, b.corpus_bleu),
        ("mean BLEU", 100.0 * a.mean_bleu, 100.0 * b.mean_bleu),
        ("mean cosine", a.mean_cosine, b.mean_cosine),
        ("mean reward", a.mean_reward, b.mean_reward),
        ("match score", a.mean_match_score, b.mean_match_score),
    ];
    for (name, x, y) in rows {
        let _ = writeln!(s, "{name:<18} {x:>w$.4} {y:>w$.4} {:>+9.4}", y - x);
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<12} {:>8} {:>8} {:>9} {:>9} {:>9} {:>9}",
        "class", "freq A", "freq B", "BLEU A", "BLEU B", "cos A", "cos B"
    );
    for class in QuestionClass::ALL {
        let (ra, rb) = (class_row(a, class), class_row(b, class));
        if ra.is_none() && rb.is_none() {
            continue;
        }
        let pct = |r: Option<&training::ClassRow>| r.map_or(0.0, |x| 100.0 * x.frequency);
        let num = |r: Option<&training::ClassRow>, f: fn(&training::ClassRow) -> f64| {
            r.map_or_else(|| "-".to_string(), |x| format!("{:.4}", f(x)))
        };
        let _ = writeln!(
            s,
            "{:<12} {:>7.2}% {:>7.2}% {:>9} {:>9} {:>9} {:>9}",
            class.label(),
            pct(ra),
            pct(rb),
            num(ra, |x| x.mean_bleu),
            num(rb, |x| x.mean_bleu),
            num(ra, |x| x.mean_cosine),
            num(rb, |x| x.mean_cosine),
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_ingest_counts_and_determinism() {
        let root = tempfile::tempdir().unwrap();
        let (a, b) = (root.path().join("a"), root.path().join("b"));
        let s = ingest(&IngestSource::Synthetic(600), &a, 7, DEFAULT_DEV_FRACTION).unwrap();
        assert_eq!(s.train + s.dev + s.test, 600);
        assert_eq!(s.test, 60);
        assert_eq!(s.dev, (0.06 * 540.0f64).floor() as usize);
        ingest(&IngestSource::Synthetic(600), &b, 7, DEFAULT_DEV_FRACTION).unwrap();
        for f in [TRAIN_FILE, DEV_FILE, TEST_FILE, VOCAB_FILE] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
        let m: RunManifest = read_json(&a.join("manifest-ingest.json")).unwrap();
        assert_eq!((m.command.as_str(), m.seed), ("ingest", Some(7)));
    }

    #[test]
    fn diff_lists_both_reports() {
        let report = |bleu: f64| EvalReport {
            examples: 1,
            alpha: 0.197,
            corpus_bleu: bleu,
            mean_bleu: bleu / 100.0,
            mean_cosine: 0.5,
            mean_reward: 0.6,
            mean_match_score: 0.7,
            classes: vec![training::ClassRow {
                class: QuestionClass::Who,
                label: "Who".into(),
                count: 1,
                frequency: 1.0,
                mean_bleu: bleu / 100.0,
                mean_cosine: 0.5,
                mean_reward: 0.6,
                mean_match_score: 0.7,
            }],
        };
        let text = diff_reports(&report(10.0), &report(12.5), "bleu", "bleu+semantic");
        assert!(text.contains("corpus BLEU") && text.contains("+2.5000"));
        assert!(text.lines().any(|l| l.starts_with("Who") && l.contains("100.00%")));
        assert!(!text.contains("Where"));
    }
}
