//! Causal transformer decoder with cross-attention over encoder states.

use ndarray::{Array2, Axis};
use rand::Rng;

use super::bert::{layer_norm, linear, BertConfig, INIT_STD};
use super::ops::{Attention, AttentionCache, FeedForward, FeedForwardCache, LayerNorm, LayerNormCache};
use super::{Grads, Init, ParamId, ParamSet};

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: Attention,
    self_ln: LayerNorm,
    cross_attn: Attention,
    cross_ln: LayerNorm,
    ff: FeedForward,
    out_ln: LayerNorm,
}

#[derive(Debug, Clone)]
struct LayerCache {
    self_attn: AttentionCache,
    self_ln: LayerNormCache,
    cross_attn: AttentionCache,
    cross_ln: LayerNormCache,
    ff: FeedForwardCache,
    out_ln: LayerNormCache,
}

/// Decoder sharing the encoder's word embeddings for input and output.
#[derive(Debug, Clone)]
pub struct Decoder {
    word_embeddings: ParamId,
    position_embeddings: ParamId,
    emb_ln: LayerNorm,
    layers: Vec<DecoderLayer>,
    lm_bias: ParamId,
    hidden: usize,
}

#[derive(Debug, Clone)]
pub struct DecoderCache {
    ids: Vec<usize>,
    emb_ln: LayerNormCache,
    layers: Vec<LayerCache>,
    top: Array2<f64>,
}

impl Decoder {
    pub fn build<R: Rng>(config: &BertConfig, word_embeddings: ParamId, p: &mut ParamSet, rng: &mut R) -> Self {
        let h = config.hidden_size;
        let eps = config.layer_norm_eps;
        let attn = |p: &mut ParamSet, l: &str, rng: &mut R, causal: bool| Attention {
            query: linear(p, &format!("{l}.query"), h, h, rng),
            key: linear(p, &format!("{l}.key"), h, h, rng),
            value: linear(p, &format!("{l}.value"), h, h, rng),
            output: linear(p, &format!("{l}.output"), h, h, rng),
            heads: config.num_attention_heads,
            causal,
        };
        let position_embeddings = p.add(
            "decoder.embeddings.position_embeddings.weight",
            &[config.max_position_embeddings, h],
            Init::Normal(INIT_STD),
            rng,
        );
        let emb_ln = layer_norm(p, "decoder.embeddings.LayerNorm", h, eps, rng);
        let layers = (0..config.num_hidden_layers)
            .map(|i| {
                let l = format!("decoder.layer.{i}");
                DecoderLayer {
                    self_attn: attn(p, &format!("{l}.self_attention"), rng, true),
                    self_ln: layer_norm(p, &format!("{l}.self_attention.LayerNorm"), h, eps, rng),
                    cross_attn: attn(p, &format!("{l}.cross_attention"), rng, false),
                    cross_ln: layer_norm(p, &format!("{l}.cross_attention.LayerNorm"), h, eps, rng),
                    ff: FeedForward {
                        inner: linear(p, &format!("{l}.intermediate.dense"), config.intermediate_size, h, rng),
                        outer: linear(p, &format!("{l}.output.dense"), h, config.intermediate_size, rng),
                    },
                    out_ln: layer_norm(p, &format!("{l}.output.LayerNorm"), h, eps, rng),
                }
            })
            .collect();
        let lm_bias = p.add("decoder.lm_head.bias", &[config.vocab_size], Init::Zeros, rng);
        Self {
            word_embeddings,
            position_embeddings,
            emb_ln,
            layers,
            lm_bias,
            hidden: h,
        }
    }

    /// Next-token logits `[T, V]` for decoder inputs `ids` given encoder output `memory`.
    pub fn forward(&self, p: &ParamSet, ids: &[usize], memory: &Array2<f64>) -> (Array2<f64>, DecoderCache) {
        let words = p.m(self.word_embeddings);
        let positions = p.m(self.position_embeddings);
        let mut x = Array2::zeros((ids.len(), self.hidden));
        for (t, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(t);
            row += &words.row(id);
            row += &positions.row(t);
        }
        let (mut x, emb_ln) = self.emb_ln.forward(p, &x);
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (a, self_attn) = l.self_attn.forward(p, &x, &x);
            let (h1, self_ln) = l.self_ln.forward(p, &(&x + &a));
            let (c, cross_attn) = l.cross_attn.forward(p, &h1, memory);
            let (h2, cross_ln) = l.cross_ln.forward(p, &(&h1 + &c));
            let (f, ff) = l.ff.forward(p, &h2);
            let (h3, out_ln) = l.out_ln.forward(p, &(&h2 + &f));
            layers.push(LayerCache {
                self_attn,
                self_ln,
                cross_attn,
                cross_ln,
                ff,
                out_ln,
            });
            x = h3;
        }
        let mut logits = x.dot(&words.t());
        logits += &p.v(self.lm_bias);
        (
            logits,
            DecoderCache {
                ids: ids.to_vec(),
                emb_ln,
                layers,
                top: x,
            },
        )
    }

    /// Backpropagates `dlogits`; returns the gradient for `memory`.
    pub fn backward(&self, p: &ParamSet, g: &mut Grads, cache: &DecoderCache, dlogits: &Array2<f64>) -> Array2<f64> {
        g.v(self.lm_bias).scaled_add(1.0, &dlogits.sum_axis(Axis(0)));
        ndarray::linalg::general_mat_mul(1.0, &dlogits.t(), &cache.top, 1.0, &mut g.m(self.word_embeddings));
        let mut dx = dlogits.dot(&p.m(self.word_embeddings));
        let mut dmem: Option<Array2<f64>> = None;
        for (l, c) in self.layers.iter().zip(&cache.layers).rev() {
            let dres3 = l.out_ln.backward(p, g, &c.out_ln, &dx);
            let dh2 = &dres3 + &l.ff.backward(p, g, &c.ff, &dres3);
            let dres2 = l.cross_ln.backward(p, g, &c.cross_ln, &dh2);
            let (dq, dm) = l.cross_attn.backward(p, g, &c.cross_attn, &dres2);
            dmem = Some(match dmem {
                Some(acc) => acc + dm,
                None => dm,
            });
            let dh1 = dres2 + dq;
            let dres1 = l.self_ln.backward(p, g, &c.self_ln, &dh1);
            let (dq, dkv) = l.self_attn.backward(p, g, &c.self_attn, &dres1);
            dx = dres1 + dq + dkv;
        }
        let demb = self.emb_ln.backward(p, g, &cache.emb_ln, &dx);
        let h = self.hidden;
        for (t, &id) in cache.ids.iter().enumerate() {
            let row = demb.row(t);
            for (slot, r) in [(self.word_embeddings, id), (self.position_embeddings, t)] {
                let dst = &mut g.raw_mut(slot)[r * h..(r + 1) * h];
                for (d, s) in dst.iter_mut().zip(row.iter()) {
                    *d += s;
                }
            }
        }
        dmem.expect("decoder has at least one layer")
    }
}
