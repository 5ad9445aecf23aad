//! Flat `key=value` run configuration.
//!
//! Bare keys are [`TrainConfig`] fields. `model.*` keys override the
//! generator architecture, `evaluator.*` the evaluator architecture and
//! `rtd.*` the evaluator pretraining. Lines starting with `#` are comments.
//! Unknown and repeated keys are errors.

use std::collections::BTreeSet;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::evaluator::{EvaluatorConfig, RtdConfig};
use crate::generator::GeneratorConfig;
use crate::training::{RewardMode, TrainConfig};

/// Keys fixed by the data or by the top-level `seed`.
const DERIVED: [&str; 7] = [
    "model.vocab_size",
    "model.max_src_len",
    "model.max_tgt_len",
    "model.seed",
    "evaluator.vocab_size",
    "evaluator.seed",
    "rtd.seed",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub rtd: RtdConfig,
    /// Freeze a randomly initialised evaluator instead of pretraining it.
    pub skip_rtd: bool,
    model: Map<String, Value>,
    evaluator: Map<String, Value>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::fine_tune(),
            rtd: RtdConfig::default(),
            skip_rtd: false,
            model: Map::new(),
            evaluator: Map::new(),
        }
    }
}

fn to_map<T: Serialize>(value: &T) -> Map<String, Value> {
    match serde_json::to_value(value).expect("config serializes") {
        Value::Object(m) => m,
        _ => unreachable!("configs serialize to objects"),
    }
}

fn from_map<T: DeserializeOwned>(map: Map<String, Value>, what: &str) -> Result<T> {
    serde_json::from_value(Value::Object(map)).map_err(|e| Error::InvalidConfig(vec![format!("{what}: {e}")]))
}

/// Parses `raw` into the JSON type of `template`.
fn typed(template: &Value, raw: &str) -> std::result::Result<Value, String> {
    match template {
        Value::Bool(_) => raw.parse::<bool>().map(Value::Bool).map_err(|_| "expected true or false".into()),
        Value::Number(n) if n.is_u64() => raw.parse::<u64>().map(Value::from).map_err(|_| "expected a non-negative integer".into()),
        Value::Number(_) => match raw.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Value::from(x)),
            _ => Err("expected a finite number".into()),
        },
        Value::String(_) => Ok(Value::String(raw.into())),
        _ => Err("unsupported field type".into()),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut train = to_map(&config.train);
        let mut rtd = to_map(&config.rtd);
        let model_template = to_map(&GeneratorConfig::desk(0));
        let evaluator_template = to_map(&EvaluatorConfig::desk(0));
        let mut seen = BTreeSet::new();
        let mut problems = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, raw)) = line.split_once('=') else {
                problems.push(format!("line {}: expected key=value", n + 1));
                continue;
            };
            let (key, raw) = (key.trim(), raw.trim());
            if !seen.insert(key.to_string()) {
                problems.push(format!("line {}: duplicate key {key}", n + 1));
                continue;
            }
            if DERIVED.contains(&key) {
                problems.push(format!("line {}: {key} cannot be set (derived from the data or `seed`)", n + 1));
                continue;
            }
            if key == "evaluator.skip_rtd" {
                match raw.parse() {
                    Ok(b) => config.skip_rtd = b,
                    Err(_) => problems.push(format!("line {}: {key}: expected true or false", n + 1)),
                }
                continue;
            }
            let (target, template, field): (&mut Map<String, Value>, Option<&Map<String, Value>>, &str) =
                if let Some(f) = key.strip_prefix("model.") {
                    (&mut config.model, Some(&model_template), f)
                } else if let Some(f) = key.strip_prefix("evaluator.") {
                    (&mut config.evaluator, Some(&evaluator_template), f)
                } else if let Some(f) = key.strip_prefix("rtd.") {
                    (&mut rtd, None, f)
                } else {
                    (&mut train, None, key)
                };
            let current = template.unwrap_or(target).get(field).cloned();
            let Some(current) = current else {
                problems.push(format!("line {}: unknown key {key}", n + 1));
                continue;
            };
            let parsed = if key == "reward_mode" {
                raw.parse::<RewardMode>()
                    .map(|m| serde_json::to_value(m).expect("mode serializes"))
                    .map_err(|e| e.to_string())
            } else {
                typed(&current, raw)
            };
            match parsed {
                Ok(v) => {
                    target.insert(field.to_string(), v);
                }
                Err(e) => problems.push(format!("line {}: {key}: {e}", n + 1)),
            }
        }
        if !problems.is_empty() {
            return Err(Error::InvalidConfig(problems));
        }
        config.train = from_map(train, "train")?;
        config.rtd = from_map(rtd, "rtd")?;
        config.rtd.seed = config.train.seed;
        config.train.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The desk generator with `model.*` overrides; lengths come from the
    /// train config and the seed from `seed`.
    pub fn generator_config(&self, vocab_size: usize) -> Result<GeneratorConfig> {
        let mut map = to_map(&GeneratorConfig::desk(vocab_size));
        map.extend(self.model.clone());
        let mut config: GeneratorConfig = from_map(map, "model")?;
        config.max_src_len = self.train.max_src_len;
        config.max_tgt_len = self.train.max_tgt_len;
        config.seed = self.train.seed;
        config.validate()?;
        Ok(config)
    }

    pub fn evaluator_config(&self, vocab_size: usize) -> Result<EvaluatorConfig> {
        let mut map = to_map(&EvaluatorConfig::desk(vocab_size));
        map.extend(self.evaluator.clone());
        let mut config: EvaluatorConfig = from_map(map, "evaluator")?;
        config.seed = self.train.seed;
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train.lr, 1.17e-5);
    }

    #[test]
    fn keys_override_each_section() {
        let c = RunConfig::parse(
            "lr = 3e-4\nlr_range_override=true\nreward_mode=bleu\nseed=9\nbatch_size=8\naccum_steps=2\n\
             model.d_model=32\nmodel.d_ff=48\nevaluator.n_layers=1\nrtd.epochs=3\nevaluator.skip_rtd=true\n",
        )
        .unwrap();
        assert_eq!(c.train.lr, 3e-4);
        assert_eq!(c.train.reward_mode, RewardMode::BleuOnly);
        assert_eq!((c.rtd.epochs, c.rtd.seed), (3, 9));
        assert!(c.skip_rtd);
        let g = c.generator_config(50).unwrap();
        assert_eq!((g.d_model, g.d_ff, g.seed, g.vocab_size, g.max_tgt_len), (32, 48, 9, 50, 16));
        let e = c.evaluator_config(50).unwrap();
        assert_eq!((e.n_layers, e.d_model, e.seed), (1, 64, 9));
    }

    #[test]
    fn bad_keys_and_values_are_all_reported() {
        let err = RunConfig::parse("nope=1\nbatch_size=-3\nmodel.seed=4\nalpha=0.5\nalpha=0.6\nbroken\n").unwrap_err();
        match err {
            Error::InvalidConfig(v) => assert_eq!(v.len(), 5, "{v:?}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(RunConfig::parse("lr=0.5\n"), Err(Error::InvalidConfig(_))));
        assert!(RunConfig::parse("model.n_heads=3\n").unwrap().generator_config(20).is_err());
    }

    #[test]
    fn shipped_synthetic_config_matches_the_preset() {
        let c = RunConfig::parse(include_str!("../../../configs/synthetic.conf")).unwrap();
        assert_eq!(c.train, TrainConfig::synthetic());
        assert_eq!(c.rtd.epochs, 5);
    }
}
