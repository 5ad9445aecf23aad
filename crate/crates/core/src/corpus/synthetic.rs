//! Templated synthetic biographies with one question per triple.
//!
//! Each triple describes one person (birth city and year, job, pets, a
//! journey) in one of two phrasings, and asks about one fact. The question
//! wording follows the context phrasing, so the two phrasings of the same
//! question are paraphrases of each other. Question classes rotate through
//! shuffled blocks of six, keeping their frequencies balanced.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::QaTriple;
use crate::error::{Error, Result};
use crate::metrics::QuestionClass;

pub const QUESTION_CLASS_COUNT: usize = 6;

const CLASSES: [QuestionClass; QUESTION_CLASS_COUNT] = [
    QuestionClass::WhatWhich,
    QuestionClass::WhyHow,
    QuestionClass::Where,
    QuestionClass::When,
    QuestionClass::Who,
    QuestionClass::HowMany,
];

const NAMES: &[&str] = &[
    "Alice", "Bruno", "Carla", "Daniel", "Elena", "Felix", "Greta", "Hugo", "Irene", "Jonas", "Karin", "Leo",
    "Maria", "Nils", "Olga", "Pablo", "Quinn", "Rosa", "Stefan", "Tara", "Umar", "Vera", "Walter", "Xenia",
    "Yusuf", "Zoe", "Amir", "Bianca", "Cedric", "Dora",
];

const CITIES: &[&str] = &[
    "Paris", "Berlin", "Madrid", "Rome", "Vienna", "Lisbon", "Prague", "Dublin", "Oslo", "Warsaw", "Athens",
    "Cairo", "Lima", "Quito", "Tokyo", "Seoul", "Delhi", "Sydney", "Toronto", "Boston", "Chicago", "Denver",
    "Munich", "Milan", "Porto", "Zurich", "Geneva", "Kyoto", "Hanoi", "Nairobi",
];

const JOBS: &[&str] = &[
    "baker", "teacher", "sailor", "painter", "doctor", "farmer", "pilot", "writer", "nurse", "lawyer", "miner",
    "tailor", "singer", "judge", "chemist",
];

const ANIMALS: &[&str] = &[
    "dogs", "cats", "horses", "goats", "sheep", "cows", "ducks", "rabbits", "parrots", "camels",
];

const TRANSPORTS: &[&str] = &["train", "ship", "bus", "bicycle", "plane", "car"];

const FIRST_YEAR: u32 = 1901;
const YEAR_SPAN: u32 = 50;

#[derive(Clone, Debug)]
struct Person {
    name: &'static str,
    city: &'static str,
    year: u32,
    job: &'static str,
    count: u32,
    animal: &'static str,
    destination: &'static str,
    transport: &'static str,
}

impl Person {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let city = *CITIES.choose(rng).expect("non-empty");
        let destination = loop {
            let d = *CITIES.choose(rng).expect("non-empty");
            if d != city {
                break d;
            }
        };
        Self {
            name: NAMES.choose(rng).expect("non-empty"),
            city,
            year: FIRST_YEAR + rng.random_range(0..YEAR_SPAN),
            job: JOBS.choose(rng).expect("non-empty"),
            count: rng.random_range(2..=12),
            animal: ANIMALS.choose(rng).expect("non-empty"),
            destination,
            transport: TRANSPORTS.choose(rng).expect("non-empty"),
        }
    }

    fn context(&self, style: usize) -> String {
        let Person {
            name,
            city,
            year,
            job,
            count,
            animal,
            destination,
            transport,
        } = self;
        match style {
            0 => format!(
                "{name} was born in {city} in {year}. {name} worked as a {job} and owned {count} {animal}. \
                 Later {name} traveled by {transport} to {destination}."
            ),
            _ => format!(
                "The birthplace of {name} is {city}, and the birth year was {year}. The profession of {name} \
                 was {job}, and {count} {animal} belonged to {name}. {name} got to {destination} by {transport}."
            ),
        }
    }

    /// (question, answer) for `class` in the given phrasing.
    fn question(&self, class: QuestionClass, style: usize) -> (String, String) {
        let n = self.name;
        let s0 = style == 0;
        match class {
            QuestionClass::Where => (
                if s0 {
                    format!("Where was {n} born?")
                } else {
                    format!("Where is the birthplace of {n}?")
                },
                self.city.to_string(),
            ),
            QuestionClass::When => (
                if s0 {
                    format!("When was {n} born?")
                } else {
                    format!("When was the birth year of {n}?")
                },
                self.year.to_string(),
            ),
            QuestionClass::Who => (
                if s0 {
                    format!("Who was born in {}?", self.city)
                } else {
                    format!("Who has {} as birthplace?", self.city)
                },
                n.to_string(),
            ),
            QuestionClass::WhatWhich => (
                if s0 {
                    format!("What did {n} work as?")
                } else {
                    format!("Which profession did {n} have?")
                },
                self.job.to_string(),
            ),
            QuestionClass::HowMany => (
                if s0 {
                    format!("How many {} did {n} own?", self.animal)
                } else {
                    format!("How many {} belonged to {n}?", self.animal)
                },
                self.count.to_string(),
            ),
            QuestionClass::WhyHow | QuestionClass::Other => (
                if s0 {
                    format!("How did {n} travel to {}?", self.destination)
                } else {
                    format!("How did {n} get to {}?", self.destination)
                },
                format!("by {}", self.transport),
            ),
        }
    }
}

/// Character offset of the first whole-word occurrence of `needle`.
fn word_offset(haystack: &str, needle: &str) -> Option<usize> {
    let is_word = |c: Option<char>| c.is_some_and(char::is_alphanumeric);
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        if !is_word(haystack[..start].chars().next_back()) && !is_word(haystack[end..].chars().next()) {
            return Some(haystack[..start].chars().count());
        }
        from = start + needle.len().max(1);
    }
    None
}

pub fn generate_synthetic(n: usize, seed: u64) -> Result<Vec<QaTriple>> {
    if n == 0 {
        return Err(Error::invalid("synthetic corpus size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut block = CLASSES;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i % QUESTION_CLASS_COUNT == 0 {
            block.shuffle(&mut rng);
        }
        let class = block[i % QUESTION_CLASS_COUNT];
        let person = Person::sample(&mut rng);
        let style = rng.random_range(0..2);
        let context = person.context(style);
        let (question, answer) = person.question(class, style);
        let answer_start = word_offset(&context, &answer);
        out.push(QaTriple {
            id: format!("syn-{seed}-{i:06}"),
            context,
            answer,
            question,
            answer_start,
        });
    }
    Ok(out)
}

/// `n` pairs of questions with identical meaning and different phrasing.
pub fn generate_paraphrase_pairs(n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let person = Person::sample(&mut rng);
            let class = CLASSES[i % QUESTION_CLASS_COUNT];
            (person.question(class, 0).0, person.question(class, 1).0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::classify_question_type;
    use std::collections::HashMap;

    #[test]
    fn small_corpus_is_valid() {
        let triples = generate_synthetic(6, 3).unwrap();
        assert_eq!(triples.len(), 6);
        for t in &triples {
            t.validate().unwrap();
            assert!(t.answer_start.is_some(), "{t:?}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(generate_synthetic(50, 9).unwrap(), generate_synthetic(50, 9).unwrap());
        assert_ne!(generate_synthetic(50, 9).unwrap(), generate_synthetic(50, 10).unwrap());
        assert!(generate_synthetic(0, 1).is_err());
    }

    #[test]
    fn class_frequencies_are_balanced() {
        let triples = generate_synthetic(600, 11).unwrap();
        let mut counts: HashMap<QuestionClass, usize> = HashMap::new();
        for t in &triples {
            *counts.entry(classify_question_type(&t.question)).or_default() += 1;
        }
        assert_eq!(counts.get(&QuestionClass::Other), None);
        for class in CLASSES {
            let c = counts[&class];
            assert!((80..=120).contains(&c), "{class:?}: {c}");
        }
    }

    #[test]
    fn every_question_opens_with_a_wh_word() {
        for t in generate_synthetic(300, 2).unwrap() {
            assert_ne!(classify_question_type(&t.question), QuestionClass::Other, "{}", t.question);
        }
        for (a, b) in generate_paraphrase_pairs(12, 1) {
            assert_ne!(a, b);
            assert_eq!(classify_question_type(&a), classify_question_type(&b));
        }
    }

    #[test]
    fn word_offset_skips_partial_matches() {
        assert_eq!(word_offset("Romeo met Rome", "Rome"), Some(10));
        assert_eq!(word_offset("née Rome", "Rome"), Some(4));
        assert_eq!(word_offset("abc", "x"), None);
    }
}
