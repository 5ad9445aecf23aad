//! Transformer encoder pretrained on replaced-token detection (RTD), then
//! frozen and used as the embedding source `E_m(·)` for semantic rewards.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, AdamConfig, AdamState, GradBuffer, Graph, ParamId, ParamSet, Tensor};
use crate::tokenizer::{is_special, TokenId, CLS, NUM_SPECIALS, PAD};
use crate::transformer::{positional_encoding, EncoderLayer, Fwd, LayerNormIds, ParamInit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    /// Longest input, `[CLS]` included.
    pub max_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl EvaluatorConfig {
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 128,
            max_len: 64,
            vocab_size,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            problems.push(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_model == 0 || self.d_model % 2 != 0 {
            problems.push(format!("d_model {} must be even and positive", self.d_model));
        }
        if self.vocab_size <= NUM_SPECIALS {
            problems.push(format!("vocab_size {} must be at least {}", self.vocab_size, NUM_SPECIALS + 1));
        }
        if self.n_layers == 0 || self.d_ff == 0 {
            problems.push("need at least one layer and a positive d_ff".into());
        }
        if self.max_len < 2 {
            problems.push(format!("max_len {} below 2", self.max_len));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }
}

/// Unigram distribution over the non-special tokens of a corpus.
#[derive(Clone, Debug)]
pub struct UnigramSampler {
    ids: Vec<TokenId>,
    dist: WeightedIndex<f64>,
}

impl UnigramSampler {
    pub fn from_corpus<S: AsRef<[TokenId]>>(corpus: &[S]) -> Result<Self> {
        let mut counts: std::collections::BTreeMap<TokenId, f64> = Default::default();
        for seq in corpus {
            for &id in seq.as_ref() {
                if !is_special(id) {
                    *counts.entry(id).or_default() += 1.0;
                }
            }
        }
        Self::from_counts(counts.into_iter().collect())
    }

    pub fn from_counts(counts: Vec<(TokenId, f64)>) -> Result<Self> {
        let (ids, weights): (Vec<TokenId>, Vec<f64>) = counts.into_iter().filter(|(_, w)| *w > 0.0).unzip();
        if ids.iter().any(|&id| is_special(id)) {
            return Err(Error::invalid("unigram distribution must not cover special tokens"));
        }
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| Error::invalid(format!("unigram distribution: {e}")))?;
        Ok(Self { ids, dist })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> TokenId {
        self.ids[rng.sample(&self.dist)]
    }
}

/// Replaces each non-special position with probability `rate` by a unigram
/// draw (redrawn once if it equals the original). `labels[i]` is true iff
/// position `i` now holds a different token.
pub fn corrupt_for_rtd(
    ids: &[TokenId],
    rate: f64,
    sampler: &UnigramSampler,
    seed: u64,
) -> Result<(Vec<TokenId>, Vec<bool>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corrupt_with(ids, rate, sampler, &mut rng)
}

fn corrupt_with(
    ids: &[TokenId],
    rate: f64,
    sampler: &UnigramSampler,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<TokenId>, Vec<bool>)> {
    if !(0.0..=0.5).contains(&rate) {
        return Err(Error::invalid(format!("replacement rate {rate} outside [0, 0.5]")));
    }
    let mut out = ids.to_vec();
    let mut labels = vec![false; ids.len()];
    for (i, &id) in ids.iter().enumerate() {
        if is_special(id) || !rng.random_bool(rate) {
            continue;
        }
        let mut s = sampler.sample(rng);
        if s == id {
            s = sampler.sample(rng);
        }
        if s != id {
            out[i] = s;
            labels[i] = true;
        }
    }
    Ok((out, labels))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RtdConfig {
    pub rate: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Fraction of sequences held out for per-epoch evaluation.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for RtdConfig {
    fn default() -> Self {
        Self {
            rate: 0.15,
            epochs: 20,
            lr: 1e-3,
            batch_size: 16,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Per-token means over non-special positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RtdEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_loss: f64,
    pub heldout_accuracy: f64,
    /// Accuracy restricted to replaced positions.
    pub heldout_replaced_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct EvaluatorModel {
    config: EvaluatorConfig,
    params: ParamSet,
    embedding: ParamId,
    layers: Vec<EncoderLayer>,
    norm: LayerNormIds,
    rtd_head: ParamId,
    frozen_hash: Option<String>,
    pe: Tensor,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: EvaluatorConfig,
    frozen: bool,
    param_hash: String,
}

pub const SIDECAR_FILE: &str = "evaluator.json";

impl EvaluatorModel {
    pub fn init(config: EvaluatorConfig) -> Result<Self> {
        config.validate()?;
        let (d, ff) = (config.d_model, config.d_ff);
        let mut params = ParamSet::new();
        let mut init = ParamInit::new(&mut params, config.seed);
        let embedding = init.normal("embedding".into(), config.vocab_size, d, (d as f64).powf(-0.5));
        let layers = (0..config.n_layers)
            .map(|l| init.encoder_layer(&format!("encoder.{l}"), d, ff))
            .collect();
        let norm = init.layer_norm("encoder.norm", d);
        let rtd_head = init.linear("rtd_head".into(), d, 1);
        let pe = positional_encoding(config.max_len, d)?;
        Ok(Self {
            config,
            params,
            embedding,
            layers,
            norm,
            rtd_head,
            frozen_hash: None,
            pe,
        })
    }

    /// Randomly initialised and frozen; the degraded no-pretraining mode.
    pub fn random_frozen(config: EvaluatorConfig) -> Result<Self> {
        let mut model = Self::init(config)?;
        model.freeze();
        Ok(model)
    }

    pub fn config(&self) -> &EvaluatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> Result<&mut ParamSet> {
        if self.is_frozen() {
            return Err(Error::Frozen);
        }
        Ok(&mut self.params)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen_hash.is_some()
    }

    /// Hash recorded when the model was frozen.
    pub fn frozen_hash(&self) -> Option<&str> {
        self.frozen_hash.as_deref()
    }

    pub fn param_hash(&self) -> String {
        self.params.hash()
    }

    /// Idempotent; the first call records the parameter hash.
    pub fn freeze(&mut self) {
        if self.frozen_hash.is_none() {
            self.frozen_hash = Some(self.params.hash());
        }
    }

    /// Errors unless frozen with parameters matching the recorded hash.
    pub fn verify_frozen(&self) -> Result<()> {
        match &self.frozen_hash {
            None => Err(Error::NotFrozen),
            Some(h) if *h == self.params.hash() => Ok(()),
            Some(_) => Err(Error::Graph("frozen evaluator parameters changed".into())),
        }
    }

    fn with_cls(&self, ids: &[TokenId]) -> Result<Vec<TokenId>> {
        if ids.is_empty() {
            return Err(Error::invalid("evaluator input is empty"));
        }
        let mut v = Vec::with_capacity(ids.len() + 1);
        if ids[0] != CLS {
            v.push(CLS);
        }
        v.extend_from_slice(ids);
        if v.len() > self.config.max_len {
            return Err(Error::LengthOverflow {
                what: "evaluator input",
                len: v.len(),
                max: self.config.max_len,
            });
        }
        if let Some(&id) = v.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                size: self.config.vocab_size,
            });
        }
        Ok(v)
    }

    fn encode<'p>(&self, g: &mut Graph<'p>, params: &'p ParamSet, ids: &[TokenId]) -> Result<crate::numerics::Var> {
        let valid: Vec<bool> = ids.iter().map(|&t| t != PAD).collect();
        let mut f = Fwd {
            g,
            params,
            n_heads: self.config.n_heads,
            dropout: None,
        };
        let x = f.embed(self.embedding, ids, &self.pe, 0)?;
        f.encode(x, &self.layers, self.norm, &valid)
    }

    /// Final hidden state of every position of `[CLS] + ids` (`[CLS]` is not
    /// duplicated when already present).
    pub fn token_embeddings(&self, ids: &[TokenId]) -> Result<Tensor> {
        let ids = self.with_cls(ids)?;
        let mut g = Graph::no_grad();
        let h = self.encode(&mut g, &self.params, &ids)?;
        Ok(g.value(h).clone())
    }

    /// `E_m(ids)`: the final hidden state at `[CLS]`.
    pub fn embed_cls(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        Ok(self.token_embeddings(ids)?.row(0).to_vec())
    }

    /// Summed BCE over non-special positions, and per-position logits.
    fn rtd_loss(
        &self,
        params: &ParamSet,
        ids: &[TokenId],
        labels: &[bool],
        mask: &[bool],
        grads: Option<(&mut GradBuffer, f64)>,
    ) -> Result<(f64, Vec<f64>)> {
        let mut g = if grads.is_some() { Graph::new() } else { Graph::no_grad() };
        let h = self.encode(&mut g, params, ids)?;
        let w = g.param(self.rtd_head, params.get(self.rtd_head));
        let logits = g.matmul(h, w)?;
        let loss = g.bce_with_logits(logits, labels, mask)?;
        let value = g.value(loss).data()[0];
        let z = g.value(logits).data().to_vec();
        if let Some((buf, scale)) = grads {
            g.backward(loss, 1.0)?.accumulate_into(buf, scale)?;
        }
        Ok((value, z))
    }

    /// Trains encoder and head on RTD with Adam. Sequences are truncated to
    /// `max_len` and get `[CLS]` prepended when it is absent.
    pub fn pretrain_rtd<S: AsRef<[TokenId]>>(&mut self, corpus: &[S], config: &RtdConfig) -> Result<Vec<RtdEpoch>> {
        if self.is_frozen() {
            return Err(Error::Frozen);
        }
        if corpus.is_empty() {
            return Err(Error::invalid("RTD corpus is empty"));
        }
        if config.batch_size == 0 {
            return Err(Error::invalid("RTD batch_size must be positive"));
        }
        if config.epochs == 0 {
            return Ok(Vec::new());
        }
        let max_body = self.config.max_len - 1;
        let seqs: Vec<Vec<TokenId>> = corpus
            .iter()
            .filter(|s| !s.as_ref().is_empty())
            .map(|s| {
                let s = s.as_ref();
                let s = if s[0] == CLS { &s[1..] } else { s };
                let mut v = vec![CLS];
                v.extend_from_slice(&s[..s.len().min(max_body)]);
                v
            })
            .collect();
        let sampler = UnigramSampler::from_corpus(&seqs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.shuffle(&mut rng);
        let n_hold = if seqs.len() >= 2 {
            ((config.holdout_fraction * seqs.len() as f64).floor() as usize).clamp(1, seqs.len() - 1)
        } else {
            0
        };
        let (hold_idx, train_idx) = order.split_at(n_hold);
        let hold_idx = if hold_idx.is_empty() { train_idx } else { hold_idx };
        let mut heldout = Vec::with_capacity(hold_idx.len());
        for &i in hold_idx {
            let (c, l) = corrupt_with(&seqs[i], config.rate, &sampler, &mut rng)?;
            let mask: Vec<bool> = seqs[i].iter().map(|&t| !is_special(t)).collect();
            heldout.push((c, l, mask));
        }

        let mut adam = AdamState::new(&self.params, AdamConfig::with_lr(config.lr));
        let mut train_idx = train_idx.to_vec();
        let mut history = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            train_idx.shuffle(&mut rng);
            let (mut loss_sum, mut tokens) = (0.0, 0usize);
            for batch in train_idx.chunks(config.batch_size) {
                let mut examples = Vec::with_capacity(batch.len());
                for &i in batch {
                    let (c, l) = corrupt_with(&seqs[i], config.rate, &sampler, &mut rng)?;
                    let mask: Vec<bool> = seqs[i].iter().map(|&t| !is_special(t)).collect();
                    examples.push((c, l, mask));
                }
                let count: usize = examples.iter().map(|(_, _, m)| m.iter().filter(|&&b| b).count()).sum();
                if count == 0 {
                    continue;
                }
                let mut grads = GradBuffer::zeros_like(&self.params);
                for (c, l, m) in &examples {
                    let (loss, _) = self.rtd_loss(&self.params, c, l, m, Some((&mut grads, 1.0 / count as f64)))?;
                    loss_sum += loss;
                }
                tokens += count;
                if !loss_sum.is_finite() {
                    return Err(Error::NonFinite(format!("RTD loss at epoch {epoch}")));
                }
                adam.step(&mut self.params, &grads)?;
            }
            let (h_loss, h_acc, h_rep) = self.rtd_metrics(&heldout)?;
            history.push(RtdEpoch {
                epoch,
                train_loss: if tokens > 0 { loss_sum / tokens as f64 } else { 0.0 },
                heldout_loss: h_loss,
                heldout_accuracy: h_acc,
                heldout_replaced_accuracy: h_rep,
            });
        }
        Ok(history)
    }

    /// `(mean BCE, accuracy, accuracy on replaced positions)` over the
    /// masked positions of `data`.
    fn rtd_metrics(&self, data: &[(Vec<TokenId>, Vec<bool>, Vec<bool>)]) -> Result<(f64, f64, f64)> {
        let (mut loss, mut n, mut correct, mut rep, mut rep_correct) = (0.0, 0usize, 0usize, 0usize, 0usize);
        for (c, l, m) in data {
            let (value, z) = self.rtd_loss(&self.params, c, l, m, None)?;
            loss += value;
            for i in 0..c.len() {
                if !m[i] {
                    continue;
                }
                n += 1;
                let predicted = sigmoid(z[i]) > 0.5;
                if predicted == l[i] {
                    correct += 1;
                }
                if l[i] {
                    rep += 1;
                    if predicted {
                        rep_correct += 1;
                    }
                }
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Ok((if n == 0 { 0.0 } else { loss / n as f64 }, ratio(correct, n), ratio(rep_correct, rep)))
    }

    /// Writes parameters and a sidecar holding config, frozen flag and the
    /// hash of the stored (f32-rounded) parameters.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.save_with(dir, Vec::new())
    }

    /// Like [`save`](Self::save), with `extra` files in the same atomic write.
    pub fn save_with(&self, dir: &Path, extra: Vec<(&str, Vec<u8>)>) -> Result<()> {
        let sidecar = Sidecar {
            config: self.config.clone(),
            frozen: self.is_frozen(),
            param_hash: self.params.rounded_to_f32().hash(),
        };
        let mut files = vec![
            (crate::generator::PARAMS_FILE, checkpoint::params_bytes(&self.params)),
            (SIDECAR_FILE, serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes")),
        ];
        files.extend(extra);
        checkpoint::write_dir_atomic(dir, &files)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let sidecar: Sidecar = checkpoint::read_json(&dir.join(SIDECAR_FILE))?;
        let mut model = Self::init(sidecar.config)?;
        let params = checkpoint::read_params_file(&dir.join(crate::generator::PARAMS_FILE))?;
        let bad = |message: String| Error::Checkpoint {
            path: dir.display().to_string(),
            message,
        };
        model.params.load_from(&params).map_err(|e| bad(e.to_string()))?;
        let hash = model.params.hash();
        if hash != sidecar.param_hash {
            return Err(bad(format!("parameter hash {hash} does not match sidecar {}", sidecar.param_hash)));
        }
        if sidecar.frozen {
            model.freeze();
        }
        Ok(model)
    }
}
