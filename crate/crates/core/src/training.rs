//! Mixed likelihood / reward-weighted training of the generator.
//!
//! Per example, `L_base = −Σ_t log P(y_t | y_<t)`, `L_rl = (1 − r)·L_base`
//! and `L = γ·L_base + (1 − γ)·L_rl`. The reward `r` is a constant for
//! differentiation, so the gradient of `L` is `γ + (1 − γ)(1 − r)` times the
//! likelihood gradient.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::QaTriple;
use crate::error::{Error, Result};
use crate::evaluator::EvaluatorModel;
use crate::generator::GeneratorModel;
use crate::metrics::{
    bleu_corpus, bleu_reward, bleu_sentence, classify_question_type, cosine, embedding_match_score, reward,
    weight_in_range, QuestionClass, RewardBreakdown, BLEU_MAX_N,
};
use crate::numerics::{AdamConfig, AdamState, GradBuffer, ParamSet};
use crate::tokenizer::{assemble_input, assemble_target, decode, encode, TokenId, TokenSeq, Vocab, CLS};
use crate::transformer::Dropout;

pub fn loss_base(sum_log_prob: f64) -> Result<f64> {
    if sum_log_prob > 0.0 || sum_log_prob.is_nan() {
        return Err(Error::invalid(format!("sum_log_prob {sum_log_prob} must be <= 0")));
    }
    Ok(-sum_log_prob)
}

pub fn loss_rl(sum_log_prob: f64, r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::invalid(format!("reward {r} outside [0, 1]")));
    }
    Ok((1.0 - r) * loss_base(sum_log_prob)?)
}

pub fn loss_total(l_base: f64, l_rl: f64, gamma: f64) -> Result<f64> {
    if !weight_in_range(gamma) {
        return Err(Error::invalid(format!("gamma = {gamma} outside (0.05, 1]")));
    }
    Ok(gamma * l_base + (1.0 - gamma) * l_rl)
}

/// `∂L/∂θ = gradient_weight(r, γ) · ∂L_base/∂θ`.
pub fn gradient_weight(r: f64, gamma: f64) -> f64 {
    gamma + (1.0 - gamma) * (1.0 - r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Pure likelihood; equivalent to `γ = 1`.
    None,
    /// `r = r1`.
    BleuOnly,
    /// `r = ((α·r1 + (1−α)·r2) + 1 − α)/(2 − α)`.
    BleuPlusSemantic,
}

impl FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RewardMode::None),
            "bleu" | "bleu_only" => Ok(RewardMode::BleuOnly),
            "bleu+semantic" | "bleu_plus_semantic" => Ok(RewardMode::BleuPlusSemantic),
            other => Err(Error::invalid(format!(
                "unknown reward mode {other:?} (expected none, bleu or bleu+semantic)"
            ))),
        }
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardMode::None => "none",
            RewardMode::BleuOnly => "bleu",
            RewardMode::BleuPlusSemantic => "bleu+semantic",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub lr: f64,
    /// Examples per optimizer step.
    pub batch_size: usize,
    /// Micro-batches each batch is split into.
    pub accum_steps: usize,
    pub epochs: usize,
    pub seed: u64,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub reward_mode: RewardMode,
    /// Stop after this many optimizer steps (0 = no limit).
    pub max_steps: usize,
    /// Linear warmup length in optimizer steps (0 = constant lr).
    pub warmup_steps: usize,
    /// Permit `lr` outside `[1e-6, 1e-4]`.
    pub lr_range_override: bool,
}

pub const LR_RANGE: (f64, f64) = (1e-6, 1e-4);

impl TrainConfig {
    /// The best hyperparameters reported for fine-tuning.
    pub fn fine_tune() -> Self {
        Self {
            alpha: 0.197,
            gamma: 0.09,
            lr: 1.17e-5,
            batch_size: 32,
            accum_steps: 4,
            epochs: 3,
            seed: 0,
            max_src_len: 64,
            max_tgt_len: 16,
            reward_mode: RewardMode::BleuPlusSemantic,
            max_steps: 0,
            warmup_steps: 0,
            lr_range_override: false,
        }
    }

    /// From-scratch training on the synthetic corpus: same blend weights,
    /// larger learning rate.
    pub fn synthetic() -> Self {
        Self {
            lr: 3e-4,
            epochs: 10,
            lr_range_override: true,
            ..Self::fine_tune()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !weight_in_range(self.alpha) {
            problems.push(format!("alpha {} outside (0.05, 1]", self.alpha));
        }
        if !weight_in_range(self.gamma) {
            problems.push(format!("gamma {} outside (0.05, 1]", self.gamma));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("lr {} must be positive", self.lr));
        } else if !self.lr_range_override && !(LR_RANGE.0..=LR_RANGE.1).contains(&self.lr) {
            problems.push(format!(
                "lr {} outside [{}, {}] (set lr_range_override to allow)",
                self.lr, LR_RANGE.0, LR_RANGE.1
            ));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".into());
        }
        if self.accum_steps == 0 || self.accum_steps > self.batch_size.max(1) {
            problems.push(format!(
                "accum_steps {} must be in 1..=batch_size ({})",
                self.accum_steps, self.batch_size
            ));
        }
        if self.max_src_len < 4 {
            problems.push(format!("max_src_len {} below 4", self.max_src_len));
        }
        if self.max_tgt_len < 3 {
            problems.push(format!("max_tgt_len {} below 3", self.max_tgt_len));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    /// Micro-batch size: `ceil(batch_size / accum_steps)`.
    pub fn micro_batch_size(&self) -> usize {
        self.batch_size.div_ceil(self.accum_steps)
    }
}

/// An encoded training pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub src: TokenSeq,
    pub tgt: TokenSeq,
}

impl Example {
    /// Reference question ids (the target without BOS/EOS).
    pub fn reference(&self) -> &[TokenId] {
        self.tgt.question_ids()
    }
}

/// Encodes triples; context is truncated and questions cut to fit.
pub fn prepare_examples(triples: &[QaTriple], vocab: &Vocab, max_src_len: usize, max_tgt_len: usize) -> Result<Vec<Example>> {
    triples
        .iter()
        .map(|t| {
            let answer = encode(&t.answer, vocab);
            let question = encode(&t.question, vocab);
            Ok(Example {
                id: t.id.clone(),
                src: assemble_input(&encode(&t.context, vocab), &answer, max_src_len)
                    .map_err(|e| Error::invalid(format!("triple {}: {e}", t.id)))?,
                tgt: assemble_target(&question, max_tgt_len)
                    .map_err(|e| Error::invalid(format!("triple {}: {e}", t.id)))?,
            })
        })
        .collect()
}

/// Where the per-example reward comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RewardSource {
    /// Decode, then score per the configured [`RewardMode`].
    FromConfig,
    /// Every example gets reward `c` with no decoding.
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleLoss {
    pub l_base: f64,
    pub l_rl: f64,
    pub l_total: f64,
    /// Absent in [`RewardMode::None`], where `r` is taken as 0.
    pub reward: Option<RewardBreakdown>,
}

/// Batch means plus the per-example terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_base: f64,
    pub l_rl: f64,
    pub l_total: f64,
    pub examples: Vec<ExampleLoss>,
}

impl LossBreakdown {
    fn from_examples(examples: Vec<ExampleLoss>) -> Self {
        let n = examples.len().max(1) as f64;
        let mean = |f: fn(&ExampleLoss) -> f64| examples.iter().map(f).sum::<f64>() / n;
        Self {
            l_base: mean(|e| e.l_base),
            l_rl: mean(|e| e.l_rl),
            l_total: mean(|e| e.l_total),
            examples,
        }
    }
}

/// Reward scoring against a frozen evaluator, caching reference
/// embeddings.
pub struct RewardScorer<'e> {
    evaluator: Option<&'e EvaluatorModel>,
    mode: RewardMode,
    alpha: f64,
    reference_cache: HashMap<Vec<TokenId>, Vec<f64>>,
}

fn with_cls(ids: &[TokenId]) -> Vec<TokenId> {
    let mut v = Vec::with_capacity(ids.len() + 1);
    v.push(CLS);
    v.extend_from_slice(ids);
    v
}

impl<'e> RewardScorer<'e> {
    /// Errors unless `evaluator` is present and frozen when `mode` is not
    /// [`RewardMode::None`].
    pub fn new(evaluator: Option<&'e EvaluatorModel>, mode: RewardMode, alpha: f64) -> Result<Self> {
        if mode != RewardMode::None {
            evaluator.ok_or(Error::NotFrozen)?.verify_frozen()?;
        }
        Ok(Self {
            evaluator,
            mode,
            alpha,
            reference_cache: HashMap::new(),
        })
    }

    pub fn mode(&self) -> RewardMode {
        self.mode
    }

    /// `E_m` of a reference question, memoised.
    fn reference_embedding(&mut self, evaluator: &EvaluatorModel, reference: &[TokenId]) -> Result<Vec<f64>> {
        if let Some(v) = self.reference_cache.get(reference) {
            return Ok(v.clone());
        }
        let v = evaluator.embed_cls(&with_cls(reference))?;
        self.reference_cache.insert(reference.to_vec(), v.clone());
        Ok(v)
    }

    /// Cosine of `[CLS]` embeddings; an empty candidate is just `[CLS]`.
    pub fn semantic(&mut self, candidate: &[TokenId], reference: &[TokenId]) -> Result<f64> {
        let evaluator = self.evaluator.ok_or(Error::NotFrozen)?;
        let r = self.reference_embedding(evaluator, reference)?;
        cosine(&evaluator.embed_cls(&with_cls(candidate))?, &r)
    }

    /// Reward of `candidate` for `reference`; `None` in [`RewardMode::None`].
    pub fn score(&mut self, candidate: &[TokenId], reference: &[TokenId]) -> Result<Option<RewardBreakdown>> {
        let r1 = bleu_sentence(candidate, reference, BLEU_MAX_N);
        match self.mode {
            RewardMode::None => Ok(None),
            RewardMode::BleuOnly => bleu_reward(r1).map(Some),
            RewardMode::BleuPlusSemantic => {
                let r2 = self.semantic(candidate, reference)?;
                reward(r1, r2, self.alpha).map(Some)
            }
        }
    }
}

/// Reward-weighted likelihood gradient of one micro-batch, added into
/// `grads` unnormalised (the caller divides by the effective batch size).
pub fn train_step(
    model: &GeneratorModel,
    scorer: &mut RewardScorer<'_>,
    micro_batch: &[Example],
    config: &TrainConfig,
    source: RewardSource,
    grads: &mut GradBuffer,
    mut dropout: Option<&mut Dropout>,
) -> Result<LossBreakdown> {
    let mut examples = Vec::with_capacity(micro_batch.len());
    for ex in micro_batch {
        let breakdown = match (scorer.mode(), source) {
            (RewardMode::None, _) => None,
            (_, RewardSource::Constant(c)) => Some(bleu_reward(c)?),
            (_, RewardSource::FromConfig) => {
                let generated = model.greedy_decode(&ex.src, model.max_question_len())?;
                scorer.score(&generated, ex.reference())?
            }
        };
        let r = breakdown.map_or(0.0, |b| b.r);
        let weight = if scorer.mode() == RewardMode::None {
            1.0
        } else {
            gradient_weight(r, config.gamma)
        };
        let slp = model.accumulate_nll_gradient(ex.src.ids(), ex.tgt.ids(), weight, grads, dropout.as_deref_mut())?;
        let l_base = loss_base(slp)?;
        let l_rl = loss_rl(slp, r)?;
        let l_total = if scorer.mode() == RewardMode::None {
            l_base
        } else {
            loss_total(l_base, l_rl, config.gamma)?
        };
        examples.push(ExampleLoss {
            l_base,
            l_rl,
            l_total,
            reward: breakdown,
        });
    }
    Ok(LossBreakdown::from_examples(examples))
}

/// Optimizer-step gradient for one batch split into micro-batches, each
/// accumulated into its own buffer and merged in order; divided by the
/// batch size.
pub fn batch_gradient(
    model: &GeneratorModel,
    scorer: &mut RewardScorer<'_>,
    batch: &[Example],
    config: &TrainConfig,
    source: RewardSource,
    mut dropout: Option<&mut Dropout>,
) -> Result<(GradBuffer, LossBreakdown)> {
    let mut total = GradBuffer::zeros_like(model.params());
    let mut examples = Vec::with_capacity(batch.len());
    for micro in batch.chunks(config.micro_batch_size()) {
        let mut g = GradBuffer::zeros_like(model.params());
        let loss = train_step(model, scorer, micro, config, source, &mut g, dropout.as_deref_mut())?;
        total.merge(&g)?;
        examples.extend(loss.examples);
    }
    total.scale(1.0 / batch.len() as f64);
    Ok((total, LossBreakdown::from_examples(examples)))
}

/// Dev-set metrics recorded after each epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevMetrics {
    pub l_base: f64,
    pub l_total: f64,
    pub corpus_bleu: f64,
    /// Mean of `r` (0 in [`RewardMode::None`]).
    pub mean_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub steps: usize,
    pub train_l_base: f64,
    pub train_l_rl: f64,
    pub train_l_total: f64,
    pub train_mean_reward: f64,
    pub dev: Option<DevMetrics>,
}

#[derive(Clone, Debug)]
pub struct BestCheckpoint {
    pub epoch: usize,
    pub dev_l_total: f64,
    pub params: ParamSet,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best: Option<BestCheckpoint>,
    pub steps: usize,
}

pub fn dev_metrics(model: &GeneratorModel, scorer: &mut RewardScorer<'_>, dev: &[Example], config: &TrainConfig) -> Result<DevMetrics> {
    if dev.is_empty() {
        return Err(Error::invalid("dev set is empty"));
    }
    let (mut l_base, mut l_total, mut reward_sum) = (0.0, 0.0, 0.0);
    let mut candidates = Vec::with_capacity(dev.len());
    let mut references = Vec::with_capacity(dev.len());
    for ex in dev {
        let generated = model.greedy_decode(&ex.src, model.max_question_len())?;
        let r = scorer.score(&generated, ex.reference())?.map_or(0.0, |b| b.r);
        let slp = model.forward_teacher_forced(&ex.src, &ex.tgt)?.sum_log_prob;
        let base = loss_base(slp)?;
        l_base += base;
        l_total += if scorer.mode() == RewardMode::None {
            base
        } else {
            loss_total(base, loss_rl(slp, r)?, config.gamma)?
        };
        reward_sum += r;
        candidates.push(generated);
        references.push(ex.reference().to_vec());
    }
    let n = dev.len() as f64;
    Ok(DevMetrics {
        l_base: l_base / n,
        l_total: l_total / n,
        corpus_bleu: bleu_corpus(&candidates, &references, BLEU_MAX_N)?,
        mean_reward: reward_sum / n,
    })
}

fn learning_rate(config: &TrainConfig, step: usize) -> f64 {
    if config.warmup_steps == 0 {
        config.lr
    } else {
        config.lr * ((step + 1) as f64 / config.warmup_steps as f64).min(1.0)
    }
}

/// Trains for `config.epochs` epochs (or `max_steps` optimizer steps),
/// shuffling with a seeded permutation each epoch. After each epoch the
/// dev set is scored and `on_epoch(record, model, is_best)` is called; the
/// best epoch is the one with the lowest dev `l_total`.
pub fn train<F>(
    model: &mut GeneratorModel,
    evaluator: Option<&EvaluatorModel>,
    train_set: &[Example],
    dev_set: &[Example],
    config: &TrainConfig,
    source: RewardSource,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, &GeneratorModel, bool) -> Result<()>,
{
    config.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::invalid("train and dev sets must be non-empty"));
    }
    let mut scorer = RewardScorer::new(evaluator, config.reward_mode, config.alpha)?;
    let evaluator_hash = evaluator.map(|e| e.param_hash());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout = match model.config().dropout {
        rate if rate > 0.0 => Some(Dropout::new(rate, config.seed ^ 0xD80D_0F5E)?),
        _ => None,
    };
    let mut adam = AdamState::new(model.params(), AdamConfig::with_lr(config.lr));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<BestCheckpoint> = None;
    let mut steps = 0usize;
    let mut batch_index = 0usize;

    'epochs: for epoch in 0..config.epochs {
        if config.max_steps > 0 && steps >= config.max_steps {
            break;
        }
        order.shuffle(&mut rng);
        let (mut base, mut rl, mut total, mut rsum, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (grads, loss) = batch_gradient(model, &mut scorer, &batch, config, source, dropout.as_mut())
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::NonFiniteLoss { batch_index },
                    other => other,
                })?;
            if !loss.l_total.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss { batch_index });
            }
            adam.step_with_lr(model.params_mut(), &grads, learning_rate(config, steps))?;
            steps += 1;
            batch_index += 1;
            for e in &loss.examples {
                base += e.l_base;
                rl += e.l_rl;
                total += e.l_total;
                rsum += e.reward.map_or(0.0, |b| b.r);
                n += 1;
            }
            if config.max_steps > 0 && steps >= config.max_steps {
                let record = finish_epoch(model, &mut scorer, dev_set, config, epoch, steps, (base, rl, total, rsum, n))?;
                let is_best = note_best(&mut best, &record, model);
                on_epoch(&record, model, is_best)?;
                history.push(record);
                break 'epochs;
            }
        }
        let record = finish_epoch(model, &mut scorer, dev_set, config, epoch, steps, (base, rl, total, rsum, n))?;
        let is_best = note_best(&mut best, &record, model);
        on_epoch(&record, model, is_best)?;
        history.push(record);
    }
    if let (Some(e), Some(h)) = (evaluator, evaluator_hash) {
        if e.param_hash() != h {
            return Err(Error::Graph("evaluator parameters changed during training".into()));
        }
    }
    Ok(TrainOutcome { history, best, steps })
}

fn finish_epoch(
    model: &GeneratorModel,
    scorer: &mut RewardScorer<'_>,
    dev_set: &[Example],
    config: &TrainConfig,
    epoch: usize,
    steps: usize,
    (base, rl, total, rsum, n): (f64, f64, f64, f64, usize),
) -> Result<EpochRecord> {
    let n = n.max(1) as f64;
    Ok(EpochRecord {
        epoch,
        steps,
        train_l_base: base / n,
        train_l_rl: rl / n,
        train_l_total: total / n,
        train_mean_reward: rsum / n,
        dev: Some(dev_metrics(model, scorer, dev_set, config)?),
    })
}

fn note_best(best: &mut Option<BestCheckpoint>, record: &EpochRecord, model: &GeneratorModel) -> bool {
    let Some(dev) = &record.dev else { return false };
    let better = best.as_ref().is_none_or(|b| dev.l_total < b.dev_l_total);
    if better {
        *best = Some(BestCheckpoint {
            epoch: record.epoch,
            dev_l_total: dev.l_total,
            params: model.params().clone(),
        });
    }
    better
}

/// Anything that turns a source into question ids.
pub trait QuestionGenerator {
    fn generate(&self, src: &TokenSeq) -> Result<Vec<TokenId>>;
}

impl QuestionGenerator for GeneratorModel {
    fn generate(&self, src: &TokenSeq) -> Result<Vec<TokenId>> {
        self.greedy_decode(src, self.max_question_len())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: QuestionClass,
    pub label: String,
    pub count: usize,
    pub frequency: f64,
    pub mean_bleu: f64,
    pub mean_cosine: f64,
    pub mean_reward: f64,
    pub mean_match_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub examples: usize,
    /// Blend weight used for `mean_reward`.
    pub alpha: f64,
    /// Unsmoothed corpus BLEU, 0-100.
    pub corpus_bleu: f64,
    pub mean_bleu: f64,
    pub mean_cosine: f64,
    /// Mean of the blended reward at the configured `alpha`.
    pub mean_reward: f64,
    pub mean_match_score: f64,
    /// By class of the generated question.
    pub classes: Vec<ClassRow>,
}

#[derive(Default, Clone, Copy)]
struct Sums {
    n: usize,
    bleu: f64,
    cosine: f64,
    reward: f64,
    matching: f64,
}

impl Sums {
    fn add(&mut self, bleu: f64, cosine: f64, reward: f64, matching: f64) {
        self.n += 1;
        self.bleu += bleu;
        self.cosine += cosine;
        self.reward += reward;
        self.matching += matching;
    }
}

/// Greedy-decodes every example and scores it against its reference. An
/// empty generation gets match score 0.
pub fn evaluate(
    generator: &dyn QuestionGenerator,
    evaluator: &EvaluatorModel,
    vocab: &Vocab,
    test_set: &[Example],
    alpha: f64,
) -> Result<EvalReport> {
    if test_set.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let mut scorer = RewardScorer::new(Some(evaluator), RewardMode::BleuPlusSemantic, alpha)?;
    let mut overall = Sums::default();
    let mut by_class: std::collections::BTreeMap<QuestionClass, Sums> = Default::default();
    let mut candidates = Vec::with_capacity(test_set.len());
    let mut references = Vec::with_capacity(test_set.len());
    for ex in test_set {
        let generated = generator.generate(&ex.src)?;
        let reference = ex.reference();
        let r = scorer.score(&generated, reference)?.expect("semantic mode yields a reward");
        let matching = if generated.is_empty() {
            0.0
        } else {
            embedding_match_score(&generated, reference, evaluator)?
        };
        let class = classify_question_type(&decode(&generated, vocab)?);
        overall.add(r.r1, r.r2, r.r, matching);
        by_class.entry(class).or_default().add(r.r1, r.r2, r.r, matching);
        candidates.push(generated);
        references.push(reference.to_vec());
    }
    let n = test_set.len() as f64;
    let classes = by_class
        .into_iter()
        .map(|(class, s)| {
            let k = s.n as f64;
            ClassRow {
                class,
                label: class.label().to_string(),
                count: s.n,
                frequency: k / n,
                mean_bleu: s.bleu / k,
                mean_cosine: s.cosine / k,
                mean_reward: s.reward / k,
                mean_match_score: s.matching / k,
            }
        })
        .collect();
    Ok(EvalReport {
        examples: test_set.len(),
        alpha,
        corpus_bleu: bleu_corpus(&candidates, &references, BLEU_MAX_N)?,
        mean_bleu: overall.bleu / n,
        mean_cosine: overall.cosine / n,
        mean_reward: overall.reward / n,
        mean_match_score: overall.matching / n,
        classes,
    })
}

/// Teacher-forced next-token accuracy over non-PAD target steps.
pub fn teacher_forced_accuracy(model: &GeneratorModel, examples: &[Example]) -> Result<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for ex in examples {
        let out = model.forward_teacher_forced(&ex.src, &ex.tgt)?;
        let targets = &ex.tgt.ids()[1..];
        for (t, &target) in targets.iter().enumerate() {
            if target == crate::tokenizer::PAD {
                continue;
            }
            total += 1;
            if crate::numerics::Tensor::argmax(out.logits.row(t)) == Some(target) {
                correct += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}
