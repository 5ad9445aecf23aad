//! Transformer encoder-decoder question generator.
//!
//! The source is `[CLS] context [SEP] answer [SEP]` and the target
//! `[BOS] question [EOS]`. Training runs the decoder over the target shifted
//! right; decoding is greedy with per-layer key/value caches.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::numerics::{GradBuffer, Graph, ParamId, ParamSet, Tensor, Var};
use crate::tokenizer::{TokenId, TokenSeq, BOS, EOS, NUM_SPECIALS, PAD};
use crate::transformer::{
    causal_mask, positional_encoding, DecoderLayer, Dropout, EncoderLayer, Fwd, LayerNormIds, ParamInit,
};

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub seed: u64,
    /// Share the token embedding with the output projection.
    #[serde(default = "default_true")]
    pub tie_embeddings: bool,
}

impl GeneratorConfig {
    /// Desk-scale default for a given vocabulary.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 128,
            max_src_len: 64,
            max_tgt_len: 16,
            vocab_size,
            dropout: 0.0,
            seed: 0,
            tie_embeddings: true,
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
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.vocab_size <= NUM_SPECIALS {
            problems.push(format!("vocab_size {} must be at least {}", self.vocab_size, NUM_SPECIALS + 1));
        }
        if self.d_ff == 0 {
            problems.push("d_ff must be positive".into());
        }
        if self.n_enc_layers == 0 || self.n_dec_layers == 0 {
            problems.push("need at least one encoder and one decoder layer".into());
        }
        if self.max_src_len < 3 {
            problems.push(format!("max_src_len {} below 3", self.max_src_len));
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
}

/// Teacher-forced pass with its graph kept alive for backpropagation.
pub struct TeacherForcedPass<'p> {
    pub graph: Graph<'p>,
    /// `(T−1) × V`.
    pub logits: Var,
    /// Summed NLL over non-PAD target steps.
    pub nll: Var,
    pub per_step_nll: Vec<f64>,
    pub step_mask: Vec<bool>,
}

impl TeacherForcedPass<'_> {
    pub fn sum_log_prob(&self) -> f64 {
        -self.graph.value(self.nll).data()[0]
    }
}

#[derive(Clone, Debug)]
pub struct TeacherForcedOutput {
    pub logits: Tensor,
    /// `log P(tgt[t+1] | tgt[..=t], src)`; 0 at PAD steps.
    pub step_log_probs: Vec<f64>,
    pub sum_log_prob: f64,
}

#[derive(Clone, Debug)]
pub struct GeneratorModel {
    config: GeneratorConfig,
    params: ParamSet,
    embedding: ParamId,
    output: Option<ParamId>,
    encoder: Vec<EncoderLayer>,
    encoder_norm: LayerNormIds,
    decoder: Vec<DecoderLayer>,
    decoder_norm: LayerNormIds,
    pe: Tensor,
}

pub const PARAMS_FILE: &str = "params.qgf";
pub const CONFIG_FILE: &str = "config.json";

impl GeneratorModel {
    pub fn init(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let (d, ff) = (config.d_model, config.d_ff);
        let mut params = ParamSet::new();
        let mut init = ParamInit::new(&mut params, config.seed);
        let embedding = init.normal("embedding".into(), config.vocab_size, d, (d as f64).powf(-0.5));
        let encoder = (0..config.n_enc_layers)
            .map(|l| init.encoder_layer(&format!("encoder.{l}"), d, ff))
            .collect();
        let encoder_norm = init.layer_norm("encoder.norm", d);
        let decoder = (0..config.n_dec_layers)
            .map(|l| init.decoder_layer(&format!("decoder.{l}"), d, ff))
            .collect();
        let decoder_norm = init.layer_norm("decoder.norm", d);
        let output = (!config.tie_embeddings)
            .then(|| init.normal("output".into(), config.vocab_size, d, (d as f64).powf(-0.5)));
        let pe = positional_encoding(config.max_src_len.max(config.max_tgt_len), d)?;
        Ok(Self {
            config,
            params,
            embedding,
            output,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            pe,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Id of the output projection table (the embedding when tied).
    pub fn output_table(&self) -> ParamId {
        self.output.unwrap_or(self.embedding)
    }

    /// Longest question a target sequence can hold.
    pub fn max_question_len(&self) -> usize {
        self.config.max_tgt_len - 2
    }

    fn check_ids(&self, ids: &[TokenId], what: &'static str, max: usize) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::invalid(format!("empty {what} sequence")));
        }
        if ids.len() > max {
            return Err(Error::LengthOverflow {
                what,
                len: ids.len(),
                max,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn fwd<'a, 'p>(&self, g: &'a mut Graph<'p>, params: &'p ParamSet, dropout: Option<&'a mut Dropout>) -> Fwd<'a, 'p> {
        Fwd {
            g,
            params,
            n_heads: self.config.n_heads,
            dropout,
        }
    }

    /// Teacher-forced pass at `params` (which must share this model's layout).
    pub fn teacher_forced_pass<'p>(
        &self,
        params: &'p ParamSet,
        src: &[TokenId],
        tgt: &[TokenId],
        dropout: Option<&mut Dropout>,
        grad: bool,
    ) -> Result<TeacherForcedPass<'p>> {
        self.check_ids(src, "source", self.config.max_src_len)?;
        self.check_ids(tgt, "target", self.config.max_tgt_len)?;
        if tgt.len() < 2 {
            return Err(Error::invalid("target needs at least BOS and one more token"));
        }
        let mut graph = if grad { Graph::new() } else { Graph::no_grad() };
        let src_valid: Vec<bool> = src.iter().map(|&t| t != PAD).collect();
        let dec_in = &tgt[..tgt.len() - 1];
        let targets = &tgt[1..];
        let dec_valid: Vec<bool> = dec_in.iter().map(|&t| t != PAD).collect();
        let step_mask: Vec<bool> = targets.iter().map(|&t| t != PAD).collect();

        let mut f = self.fwd(&mut graph, params, dropout);
        let x = f.embed(self.embedding, src, &self.pe, 0)?;
        let memory = f.encode(x, &self.encoder, self.encoder_norm, &src_valid)?;
        let mut y = f.embed(self.embedding, dec_in, &self.pe, 0)?;
        let self_mask = causal_mask(&dec_valid);
        let cross_mask = crate::transformer::key_padding_mask(dec_in.len(), &src_valid);
        for layer in &self.decoder {
            y = f.decoder_layer(y, memory, layer, &self_mask, &cross_mask)?;
        }
        let y = f.layer_norm(y, self.decoder_norm)?;
        let table = f.p(self.output_table());
        let logits = f.g.matmul_bt(y, table)?;
        let (nll, per_step_nll) = graph.cross_entropy(logits, targets, &step_mask)?;
        Ok(TeacherForcedPass {
            graph,
            logits,
            nll,
            per_step_nll,
            step_mask,
        })
    }

    pub fn forward_teacher_forced(&self, src: &TokenSeq, tgt: &TokenSeq) -> Result<TeacherForcedOutput> {
        let pass = self.teacher_forced_pass(&self.params, src.ids(), tgt.ids(), None, false)?;
        let step_log_probs = pass.per_step_nll.iter().map(|nll| if *nll == 0.0 { 0.0 } else { -nll }).collect();
        Ok(TeacherForcedOutput {
            logits: pass.graph.value(pass.logits).clone(),
            step_log_probs,
            sum_log_prob: pass.sum_log_prob(),
        })
    }

    /// Adds `weight × ∇(−sum_log_prob)` into `grads` and returns the summed
    /// log-probability of the target.
    pub fn accumulate_nll_gradient(
        &self,
        src: &[TokenId],
        tgt: &[TokenId],
        weight: f64,
        grads: &mut GradBuffer,
        dropout: Option<&mut Dropout>,
    ) -> Result<f64> {
        let pass = self.teacher_forced_pass(&self.params, src, tgt, dropout, true)?;
        let sum_log_prob = pass.sum_log_prob();
        if !sum_log_prob.is_finite() {
            return Err(Error::NonFinite("teacher-forced log-likelihood".into()));
        }
        pass.graph.backward(pass.nll, 1.0)?.accumulate_into(grads, weight)?;
        Ok(sum_log_prob)
    }

    /// Greedy decoding from BOS. The output holds neither BOS nor EOS, only
    /// ids in `[NUM_SPECIALS, vocab_size)`, and at most
    /// `min(max_len, max_question_len())` tokens.
    pub fn greedy_decode(&self, src: &TokenSeq, max_len: usize) -> Result<Vec<TokenId>> {
        Ok(self.greedy_decode_traced(src.ids(), max_len, false)?.0)
    }

    /// Greedy decoding that also returns each step's logits when `trace` is
    /// set.
    pub fn greedy_decode_traced(
        &self,
        src: &[TokenId],
        max_len: usize,
        trace: bool,
    ) -> Result<(Vec<TokenId>, Vec<Vec<f64>>)> {
        self.check_ids(src, "source", self.config.max_src_len)?;
        let max_len = max_len.min(self.max_question_len());
        let d = self.config.d_model;
        let src_valid: Vec<bool> = src.iter().map(|&t| t != PAD).collect();

        let mut cross_kv = Vec::with_capacity(self.decoder.len());
        {
            let mut g = Graph::no_grad();
            let mut f = self.fwd(&mut g, &self.params, None);
            let x = f.embed(self.embedding, src, &self.pe, 0)?;
            let memory = f.encode(x, &self.encoder, self.encoder_norm, &src_valid)?;
            for layer in &self.decoder {
                let k = f.linear(memory, layer.cross_attn.wk)?;
                let v = f.linear(memory, layer.cross_attn.wv)?;
                cross_kv.push((f.g.value(k).clone(), f.g.value(v).clone()));
            }
        }

        let mut self_k: Vec<Vec<f64>> = vec![Vec::new(); self.decoder.len()];
        let mut self_v: Vec<Vec<f64>> = vec![Vec::new(); self.decoder.len()];
        let mut out = Vec::new();
        let mut traces = Vec::new();
        let mut token = BOS;
        while out.len() < max_len {
            let pos = out.len();
            let mut g = Graph::no_grad();
            let mut f = self.fwd(&mut g, &self.params, None);
            let mut x = f.embed(self.embedding, &[token], &self.pe, pos)?;
            for (l, layer) in self.decoder.iter().enumerate() {
                let h = f.layer_norm(x, layer.ln_self)?;
                let q = f.linear(h, layer.self_attn.wq)?;
                let k = f.linear(h, layer.self_attn.wk)?;
                let v = f.linear(h, layer.self_attn.wv)?;
                self_k[l].extend_from_slice(f.g.value(k).data());
                self_v[l].extend_from_slice(f.g.value(v).data());
                let kc = f.g.constant(Tensor::matrix(pos + 1, d, self_k[l].clone())?);
                let vc = f.g.constant(Tensor::matrix(pos + 1, d, self_v[l].clone())?);
                let a = f.attend(q, kc, vc, &vec![true; pos + 1])?;
                let a = f.linear(a, layer.self_attn.wo)?;
                x = f.g.add(x, a)?;

                let h = f.layer_norm(x, layer.ln_cross)?;
                let q = f.linear(h, layer.cross_attn.wq)?;
                let kc = f.g.constant(cross_kv[l].0.clone());
                let vc = f.g.constant(cross_kv[l].1.clone());
                let c = f.attend(q, kc, vc, &src_valid)?;
                let c = f.linear(c, layer.cross_attn.wo)?;
                x = f.g.add(x, c)?;

                let h = f.layer_norm(x, layer.ln_ff)?;
                let ff = f.feed_forward(h, layer.ff)?;
                x = f.g.add(x, ff)?;
            }
            let y = f.layer_norm(x, self.decoder_norm)?;
            let table = f.p(self.output_table());
            let logits = f.g.matmul_bt(y, table)?;
            let row = g.value(logits).data();
            let next = pick_next(row);
            if trace {
                traces.push(row.to_vec());
            }
            if next == EOS {
                break;
            }
            out.push(next);
            token = next;
        }
        Ok((out, traces))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.save_with(dir, Vec::new())
    }

    /// Like [`save`](Self::save), with `extra` files in the same atomic write.
    pub fn save_with(&self, dir: &Path, extra: Vec<(&str, Vec<u8>)>) -> Result<()> {
        let config = serde_json::to_vec_pretty(&self.config).expect("config serializes");
        let mut files = vec![
            (PARAMS_FILE, checkpoint::params_bytes(&self.params)),
            (CONFIG_FILE, config),
        ];
        files.extend(extra);
        checkpoint::write_dir_atomic(dir, &files)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config: GeneratorConfig = checkpoint::read_json(&dir.join(CONFIG_FILE))?;
        let mut model = Self::init(config)?;
        let params = checkpoint::read_params_file(&dir.join(PARAMS_FILE))?;
        model.params.load_from(&params).map_err(|e| Error::Checkpoint {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(model)
    }
}

/// Argmax over EOS and the non-special ids; ties go to the lowest id.
fn pick_next(logits: &[f64]) -> TokenId {
    let mut best = EOS;
    let mut best_value = logits[EOS];
    for (id, &v) in logits.iter().enumerate().skip(NUM_SPECIALS) {
        if v > best_value {
            best = id;
            best_value = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;
    use crate::tokenizer::{assemble_input, assemble_target, SeqKind};

    fn small_config() -> GeneratorConfig {
        GeneratorConfig {
            d_model: 16,
            n_heads: 2,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 24,
            max_src_len: 12,
            max_tgt_len: 8,
            vocab_size: 20,
            dropout: 0.0,
            seed: 3,
            tie_embeddings: true,
        }
    }

    fn pair() -> (TokenSeq, TokenSeq) {
        (
            assemble_input(&[6, 7, 8, 9], &[8], 12).unwrap(),
            assemble_target(&[10, 11, 12], 8).unwrap(),
        )
    }

    #[test]
    fn init_is_deterministic() {
        let a = GeneratorModel::init(small_config()).unwrap();
        let b = GeneratorModel::init(small_config()).unwrap();
        assert_eq!(a.params().hash(), b.params().hash());
        assert!(a.params().is_finite());
        let mut other = small_config();
        other.seed = 4;
        assert_ne!(a.params().hash(), GeneratorModel::init(other).unwrap().params().hash());
    }

    #[test]
    fn invalid_config_lists_violations() {
        let mut c = small_config();
        c.d_model = 8;
        c.n_heads = 3;
        c.vocab_size = 5;
        match GeneratorModel::init(c) {
            Err(Error::InvalidConfig(v)) => assert_eq!(v.len(), 2, "{v:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn untrained_greedy_output_is_valid() {
        let model = GeneratorModel::init(small_config()).unwrap();
        let (src, _) = pair();
        let out = model.greedy_decode(&src, 100).unwrap();
        assert!(out.len() <= model.max_question_len());
        assert!(out.iter().all(|&id| (NUM_SPECIALS..20).contains(&id)));
        assert_eq!(out, model.greedy_decode(&src, 100).unwrap());
    }

    #[test]
    fn eos_bias_gives_empty_output() {
        let mut config = small_config();
        config.tie_embeddings = false;
        let mut model = GeneratorModel::init(config).unwrap();
        // constant final hidden state of ones; only the EOS row scores it
        let norm = model.decoder_norm;
        model.params_mut().get_mut(norm.gain).data_mut().fill(0.0);
        model.params_mut().get_mut(norm.bias).data_mut().fill(1.0);
        let table = model.output_table();
        let out = model.params_mut().get_mut(table);
        out.data_mut().fill(0.0);
        let d = out.cols() as f64;
        out.row_mut(EOS).fill(10.0 / d);
        let (src, _) = pair();
        assert!(model.greedy_decode(&src, 6).unwrap().is_empty());
    }

    #[test]
    fn sum_log_prob_is_non_positive_and_pad_invariant() {
        let model = GeneratorModel::init(small_config()).unwrap();
        let (src, tgt) = pair();
        let out = model.forward_teacher_forced(&src, &tgt).unwrap();
        assert!(out.sum_log_prob <= 0.0);
        assert_eq!(out.step_log_probs.len(), tgt.len() - 1);
        let total: f64 = out.step_log_probs.iter().sum();
        assert!((total - out.sum_log_prob).abs() < 1e-12);

        let padded_tgt = tgt.padded_to(8);
        let padded = model.forward_teacher_forced(&src, &padded_tgt).unwrap();
        assert!((padded.sum_log_prob - out.sum_log_prob).abs() < 1e-12);

        let padded_src = src.padded_to(12);
        let a = model.forward_teacher_forced(&padded_src, &tgt).unwrap();
        assert!(a.logits.sub(&out.logits).unwrap().data().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn causality_of_decoder() {
        let model = GeneratorModel::init(small_config()).unwrap();
        let (src, _) = pair();
        let a = TokenSeq::new(vec![BOS, 10, 11, 12, 13, EOS], SeqKind::Target).unwrap();
        let b = TokenSeq::new(vec![BOS, 10, 15, 12, 13, EOS], SeqKind::Target).unwrap();
        let la = model.forward_teacher_forced(&src, &a).unwrap().logits;
        let lb = model.forward_teacher_forced(&src, &b).unwrap().logits;
        // decoder input position 2 changed: rows 0 and 1 are untouched
        for r in 0..la.rows() {
            let diff: f64 = la.row(r).iter().zip(lb.row(r)).map(|(x, y)| (x - y).abs()).sum();
            if r < 2 {
                assert_eq!(diff, 0.0, "row {r}");
            } else {
                assert!(diff > 0.0, "row {r}");
            }
        }
    }

    #[test]
    fn cached_decoding_matches_teacher_forcing() {
        let mut config = small_config();
        config.tie_embeddings = false;
        let model = GeneratorModel::init(config).unwrap();
        let (src, _) = pair();
        let (out, traces) = model.greedy_decode_traced(src.ids(), 6, true).unwrap();
        let mut tgt = vec![BOS];
        tgt.extend(&out);
        tgt.push(EOS);
        let pass = model.teacher_forced_pass(model.params(), src.ids(), &tgt, None, false).unwrap();
        let logits = pass.graph.value(pass.logits);
        for (t, row) in traces.iter().enumerate() {
            for (a, b) in row.iter().zip(logits.row(t)) {
                assert!((a - b).abs() < 1e-10, "step {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn full_model_gradient_check() {
        let model = GeneratorModel::init(small_config()).unwrap();
        let (src, tgt) = pair();
        let mut grads = GradBuffer::zeros_like(model.params());
        model.accumulate_nll_gradient(src.ids(), tgt.ids(), 1.0, &mut grads, None).unwrap();
        let report = finite_diff_check(
            |p| {
                let pass = model.teacher_forced_pass(p, src.ids(), tgt.ids(), None, false)?;
                Ok(-pass.sum_log_prob())
            },
            model.params(),
            &grads,
            1e-5,
            3,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn length_overflow_is_reported() {
        let model = GeneratorModel::init(small_config()).unwrap();
        let mut ids = vec![crate::tokenizer::CLS];
        ids.extend([6; 9]);
        ids.extend([crate::tokenizer::SEP, 7, crate::tokenizer::SEP]);
        let long = TokenSeq::new(ids, SeqKind::Source).unwrap();
        assert!(matches!(
            model.forward_teacher_forced(&long, &pair().1),
            Err(Error::LengthOverflow { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = GeneratorModel::init(small_config()).unwrap();
        let path = dir.path().join("gen");
        model.save(&path).unwrap();
        let back = GeneratorModel::load(&path).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.params().hash(), model.params().rounded_to_f32().hash());
    }
}
