//! Pre-layer-norm transformer blocks shared by the generator and evaluator.
//!
//! Layers hold [`ParamId`]s only; every forward pass receives the
//! [`ParamSet`] explicitly so the same layout can be evaluated at perturbed
//! parameters. Linear maps carry no bias.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamSet, Tensor, Var};

/// Sinusoidal table: `PE(pos, 2i) = sin(pos / 10000^(2i/d))`,
/// `PE(pos, 2i+1) = cos(pos / 10000^(2i/d))`.
pub fn positional_encoding(length: usize, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(Error::invalid(format!("positional encoding needs an even width, got {d_model}")));
    }
    let mut data = vec![0.0; length * d_model];
    for pos in 0..length {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = angle.sin();
            data[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::matrix(length, d_model, data)
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForwardIds {
    pub w1: ParamId,
    pub w2: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderLayer {
    pub ln_attn: LayerNormIds,
    pub attn: AttentionIds,
    pub ln_ff: LayerNormIds,
    pub ff: FeedForwardIds,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderLayer {
    pub ln_self: LayerNormIds,
    pub self_attn: AttentionIds,
    pub ln_cross: LayerNormIds,
    pub cross_attn: AttentionIds,
    pub ln_ff: LayerNormIds,
    pub ff: FeedForwardIds,
}

/// Deterministic parameter registration.
pub struct ParamInit<'a> {
    params: &'a mut ParamSet,
    rng: ChaCha8Rng,
}

impl<'a> ParamInit<'a> {
    pub fn new(params: &'a mut ParamSet, seed: u64) -> Self {
        Self {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self, name: String, rows: usize, cols: usize, std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| dist.sample(&mut self.rng)).collect();
        let t = Tensor::matrix(rows, cols, data).expect("shape matches data");
        self.params.add(name, t)
    }

    /// `fan_in × fan_out` weight with std `fan_in^-1/2`.
    pub fn linear(&mut self, name: String, fan_in: usize, fan_out: usize) -> ParamId {
        self.normal(name, fan_in, fan_out, (fan_in as f64).powf(-0.5))
    }

    pub fn layer_norm(&mut self, prefix: &str, d: usize) -> LayerNormIds {
        LayerNormIds {
            gain: self.params.add(format!("{prefix}.gain"), Tensor::full(&[d], 1.0)),
            bias: self.params.add(format!("{prefix}.bias"), Tensor::zeros(&[d])),
        }
    }

    pub fn attention(&mut self, prefix: &str, d: usize) -> AttentionIds {
        AttentionIds {
            wq: self.linear(format!("{prefix}.wq"), d, d),
            wk: self.linear(format!("{prefix}.wk"), d, d),
            wv: self.linear(format!("{prefix}.wv"), d, d),
            wo: self.linear(format!("{prefix}.wo"), d, d),
        }
    }

    pub fn feed_forward(&mut self, prefix: &str, d: usize, d_ff: usize) -> FeedForwardIds {
        FeedForwardIds {
            w1: self.linear(format!("{prefix}.w1"), d, d_ff),
            w2: self.linear(format!("{prefix}.w2"), d_ff, d),
        }
    }

    pub fn encoder_layer(&mut self, prefix: &str, d: usize, d_ff: usize) -> EncoderLayer {
        EncoderLayer {
            ln_attn: self.layer_norm(&format!("{prefix}.ln_attn"), d),
            attn: self.attention(&format!("{prefix}.attn"), d),
            ln_ff: self.layer_norm(&format!("{prefix}.ln_ff"), d),
            ff: self.feed_forward(&format!("{prefix}.ff"), d, d_ff),
        }
    }

    pub fn decoder_layer(&mut self, prefix: &str, d: usize, d_ff: usize) -> DecoderLayer {
        DecoderLayer {
            ln_self: self.layer_norm(&format!("{prefix}.ln_self"), d),
            self_attn: self.attention(&format!("{prefix}.self_attn"), d),
            ln_cross: self.layer_norm(&format!("{prefix}.ln_cross"), d),
            cross_attn: self.attention(&format!("{prefix}.cross_attn"), d),
            ln_ff: self.layer_norm(&format!("{prefix}.ln_ff"), d),
            ff: self.feed_forward(&format!("{prefix}.ff"), d, d_ff),
        }
    }
}

/// Inverted dropout driven by its own seeded stream.
pub struct Dropout {
    rng: ChaCha8Rng,
    keep: Bernoulli,
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout {rate} outside [0, 1)")));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            keep: Bernoulli::new(1.0 - rate).expect("probability in range"),
            rate,
        })
    }

    fn apply(&mut self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        let mask: Vec<bool> = (0..g.value(x).len()).map(|_| self.keep.sample(&mut self.rng)).collect();
        g.dropout(x, &mask, self.rate)
    }
}

/// `true` where query `i` may attend key `j`, row-major `tq × tk`.
pub fn key_padding_mask(tq: usize, key_valid: &[bool]) -> Vec<bool> {
    let mut m = Vec::with_capacity(tq * key_valid.len());
    for _ in 0..tq {
        m.extend_from_slice(key_valid);
    }
    m
}

/// Causal mask combined with key validity: query `i` sees keys `j ≤ i`.
pub fn causal_mask(key_valid: &[bool]) -> Vec<bool> {
    let t = key_valid.len();
    let mut m = vec![false; t * t];
    for i in 0..t {
        for j in 0..=i {
            m[i * t + j] = key_valid[j];
        }
    }
    m
}

/// Forward-pass context over one graph.
pub struct Fwd<'a, 'p> {
    pub g: &'a mut Graph<'p>,
    pub params: &'p ParamSet,
    pub n_heads: usize,
    pub dropout: Option<&'a mut Dropout>,
}

impl<'a, 'p> Fwd<'a, 'p> {
    pub fn p(&mut self, id: ParamId) -> Var {
        self.g.param(id, self.params.get(id))
    }

    fn drop(&mut self, x: Var) -> Result<Var> {
        match self.dropout.as_deref_mut() {
            Some(d) => d.apply(self.g, x),
            None => Ok(x),
        }
    }

    pub fn linear(&mut self, x: Var, w: ParamId) -> Result<Var> {
        let w = self.p(w);
        self.g.matmul(x, w)
    }

    pub fn layer_norm(&mut self, x: Var, ids: LayerNormIds) -> Result<Var> {
        let (gain, bias) = (self.p(ids.gain), self.p(ids.bias));
        self.g.layer_norm(x, gain, bias)
    }

    /// `sqrt(d)·E[ids] + PE[start..start + len]`.
    pub fn embed(&mut self, table: ParamId, ids: &[usize], pe: &Tensor, start: usize) -> Result<Var> {
        let d = self.params.get(table).cols();
        if start + ids.len() > pe.rows() {
            return Err(Error::LengthOverflow {
                what: "sequence",
                len: start + ids.len(),
                max: pe.rows(),
            });
        }
        let t = self.p(table);
        let e = self.g.gather(t, ids)?;
        let e = self.g.scale(e, (d as f64).sqrt());
        let pos = Tensor::matrix(ids.len(), d, pe.data()[start * d..(start + ids.len()) * d].to_vec())?;
        let pos = self.g.constant(pos);
        let x = self.g.add(e, pos)?;
        self.drop(x)
    }

    /// Multi-head scaled dot-product attention over already projected
    /// queries, keys and values; `mask` is `tq × tk`.
    pub fn attend(&mut self, q: Var, k: Var, v: Var, mask: &[bool]) -> Result<Var> {
        let d = self.g.value(q).cols();
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = self.g.slice_cols(q, h * dh, dh)?;
            let kh = self.g.slice_cols(k, h * dh, dh)?;
            let vh = self.g.slice_cols(v, h * dh, dh)?;
            let s = self.g.matmul_bt(qh, kh)?;
            let s = self.g.scale(s, scale);
            let a = self.g.softmax(s, Some(mask))?;
            heads.push(self.g.matmul(a, vh)?);
        }
        if heads.len() == 1 {
            Ok(heads[0])
        } else {
            self.g.concat_cols(&heads)
        }
    }

    pub fn attention(&mut self, xq: Var, xkv: Var, ids: AttentionIds, mask: &[bool]) -> Result<Var> {
        let q = self.linear(xq, ids.wq)?;
        let k = self.linear(xkv, ids.wk)?;
        let v = self.linear(xkv, ids.wv)?;
        let o = self.attend(q, k, v, mask)?;
        self.linear(o, ids.wo)
    }

    pub fn feed_forward(&mut self, x: Var, ids: FeedForwardIds) -> Result<Var> {
        let h = self.linear(x, ids.w1)?;
        let h = self.g.gelu(h);
        self.linear(h, ids.w2)
    }

    /// `x + drop(sublayer)`.
    fn residual(&mut self, x: Var, sub: Var) -> Result<Var> {
        let sub = self.drop(sub)?;
        self.g.add(x, sub)
    }

    pub fn encoder_layer(&mut self, x: Var, layer: &EncoderLayer, mask: &[bool]) -> Result<Var> {
        let h = self.layer_norm(x, layer.ln_attn)?;
        let a = self.attention(h, h, layer.attn, mask)?;
        let x = self.residual(x, a)?;
        let h = self.layer_norm(x, layer.ln_ff)?;
        let f = self.feed_forward(h, layer.ff)?;
        self.residual(x, f)
    }

    pub fn decoder_layer(
        &mut self,
        x: Var,
        memory: Var,
        layer: &DecoderLayer,
        self_mask: &[bool],
        cross_mask: &[bool],
    ) -> Result<Var> {
        let h = self.layer_norm(x, layer.ln_self)?;
        let a = self.attention(h, h, layer.self_attn, self_mask)?;
        let x = self.residual(x, a)?;
        let h = self.layer_norm(x, layer.ln_cross)?;
        let c = self.attention(h, memory, layer.cross_attn, cross_mask)?;
        let x = self.residual(x, c)?;
        let h = self.layer_norm(x, layer.ln_ff)?;
        let f = self.feed_forward(h, layer.ff)?;
        self.residual(x, f)
    }

    /// Encoder stack followed by its final layer norm.
    pub fn encode(&mut self, x: Var, layers: &[EncoderLayer], ln_final: LayerNormIds, key_valid: &[bool]) -> Result<Var> {
        let t = self.g.value(x).rows();
        let mask = key_padding_mask(t, key_valid);
        let mut x = x;
        for layer in layers {
            x = self.encoder_layer(x, layer, &mask)?;
        }
        self.layer_norm(x, ln_final)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, GradBuffer};

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding(5, 8).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(pe.data().iter().all(|x| (-1.0..=1.0).contains(x)));
        for pos in 1..=3 {
            assert_eq!(pe.get(pos, 0), (pos as f64).sin());
            assert_eq!(pe.get(pos, 1), (pos as f64).cos());
        }
        assert!(positional_encoding(4, 7).is_err());
    }

    #[test]
    fn causal_mask_shape() {
        let m = causal_mask(&[true, true, false]);
        assert_eq!(m, vec![true, false, false, true, true, false, true, true, false]);
        assert_eq!(key_padding_mask(2, &[true, false]), vec![true, false, true, false]);
    }

    struct Tiny {
        params: ParamSet,
        emb: ParamId,
        enc: EncoderLayer,
        dec: DecoderLayer,
        ln: LayerNormIds,
    }

    fn tiny() -> Tiny {
        let mut params = ParamSet::new();
        let mut init = ParamInit::new(&mut params, 5);
        let emb = init.normal("emb".into(), 9, 8, 0.5);
        let enc = init.encoder_layer("enc.0", 8, 12);
        let dec = init.decoder_layer("dec.0", 8, 12);
        let ln = init.layer_norm("ln", 8);
        // non-trivial norms so their gradients are exercised
        for id in params.ids().collect::<Vec<_>>() {
            if params.name(id).ends_with("gain") || params.name(id).ends_with("bias") {
                for (i, x) in params.get_mut(id).data_mut().iter_mut().enumerate() {
                    *x += 0.1 * ((i % 3) as f64 - 1.0);
                }
            }
        }
        Tiny { params, emb, enc, dec, ln }
    }

    fn loss(m: &Tiny, params: &ParamSet, grads: Option<&mut GradBuffer>) -> Result<f64> {
        let pe = positional_encoding(8, 8)?;
        let mut g = Graph::new();
        let mut f = Fwd {
            g: &mut g,
            params,
            n_heads: 2,
            dropout: None,
        };
        let src = f.embed(m.emb, &[1, 4, 6, 0], &pe, 0)?;
        let mem = f.encode(src, &[m.enc], m.ln, &[true, true, true, false])?;
        let tgt = f.embed(m.emb, &[2, 7, 3], &pe, 0)?;
        let self_mask = causal_mask(&[true; 3]);
        let cross = key_padding_mask(3, &[true, true, true, false]);
        let y = f.decoder_layer(tgt, mem, &m.dec, &self_mask, &cross)?;
        let e = f.p(m.emb);
        let logits = f.g.matmul_bt(y, e)?;
        let (nll, _) = f.g.cross_entropy(logits, &[7, 3, 5], &[true; 3])?;
        if let Some(buf) = grads {
            g.backward(nll, 1.0)?.accumulate_into(buf, 1.0)?;
        }
        Ok(g.value(nll).data()[0])
    }

    #[test]
    fn blocks_pass_gradient_check() {
        let m = tiny();
        let mut grads = GradBuffer::zeros_like(&m.params);
        loss(&m, &m.params, Some(&mut grads)).unwrap();
        let report = finite_diff_check(|p| loss(&m, p, None), &m.params, &grads, 1e-5, 1).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn dropout_rate_zero_is_identity_and_rate_validated() {
        assert!(Dropout::new(1.0, 0).is_err());
        let mut d = Dropout::new(0.0, 0).unwrap();
        let mut g = Graph::new();
        let x = g.variable(Tensor::full(&[2, 2], 3.0));
        assert_eq!(d.apply(&mut g, x).unwrap(), x);
    }
}
