//! Question-answering triples: SQuAD v1.1 ingestion and export, seeded
//! train/dev/test partitioning, and a templated synthetic corpus.

mod squad;
mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use squad::{load_squad, parse_squad, squad_json, write_squad, LoadWarnings, SquadLoad};
pub use synthetic::{generate_paraphrase_pairs, generate_synthetic, QUESTION_CLASS_COUNT};

use crate::error::{Error, Result};

/// One (context, answer, question) example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaTriple {
    pub id: String,
    pub context: String,
    pub answer: String,
    pub question: String,
    /// Character offset of `answer` inside `context`, when known.
    pub answer_start: Option<usize>,
}

impl QaTriple {
    pub fn validate(&self) -> Result<()> {
        for (name, field) in [
            ("context", &self.context),
            ("answer", &self.answer),
            ("question", &self.question),
        ] {
            if field.trim().is_empty() {
                return Err(Error::invalid(format!("triple {}: empty {name}", self.id)));
            }
        }
        if let Some(start) = self.answer_start {
            if !offset_matches(&self.context, start, &self.answer) {
                return Err(Error::invalid(format!(
                    "triple {}: answer_start {start} does not point at the answer",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Whether the `answer.len()` characters of `context` starting at character
/// `start` equal `answer`.
pub fn offset_matches(context: &str, start: usize, answer: &str) -> bool {
    let n = answer.chars().count();
    let slice: String = context.chars().skip(start).take(n).collect();
    slice.chars().count() == n && slice == answer
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Vec<QaTriple>,
    pub dev: Vec<QaTriple>,
    pub test: Vec<QaTriple>,
    pub seed: u64,
}

fn seeded_permutation<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);
    order.into_iter().map(|i| items[i].clone()).collect()
}

/// Size of the held-out part for `fraction` of `n` items: floor, but at least
/// one when `n >= 2`.
fn holdout_size(n: usize, fraction: f64) -> usize {
    let k = (fraction * n as f64 + 1e-9).floor() as usize;
    if k == 0 && n >= 2 {
        1
    } else {
        k.min(n)
    }
}

/// Seeded shuffle then cut: the last `floor(dev_fraction × N)` items of the
/// permutation form the dev set.
pub fn split_train_dev(
    triples: &[QaTriple],
    dev_fraction: f64,
    seed: u64,
) -> Result<(Vec<QaTriple>, Vec<QaTriple>)> {
    if triples.is_empty() {
        return Err(Error::invalid("cannot split an empty corpus"));
    }
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::invalid(format!("dev_fraction {dev_fraction} outside (0, 1)")));
    }
    let shuffled = seeded_permutation(triples, seed);
    let dev_n = holdout_size(triples.len(), dev_fraction);
    let cut = shuffled.len() - dev_n;
    let dev = shuffled[cut..].to_vec();
    let mut train = shuffled;
    train.truncate(cut);
    Ok((train, dev))
}

/// Cuts `test_fraction` off first (for corpora without a predefined test
/// file), then splits the rest into train/dev.
pub fn split_three_way(
    triples: &[QaTriple],
    test_fraction: f64,
    dev_fraction: f64,
    seed: u64,
) -> Result<DataSplit> {
    if triples.len() < 3 {
        return Err(Error::invalid("need at least three triples for a three-way split"));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test_fraction {test_fraction} outside (0, 1)")));
    }
    let shuffled = seeded_permutation(triples, seed ^ 0x7E57_5EED);
    let test_n = holdout_size(triples.len(), test_fraction);
    let rest = &shuffled[..shuffled.len() - test_n];
    let test = shuffled[shuffled.len() - test_n..].to_vec();
    let (train, dev) = split_train_dev(rest, dev_fraction, seed)?;
    Ok(DataSplit { train, dev, test, seed })
}
