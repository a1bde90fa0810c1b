//! Post-LayerNorm transformer encoder with the BERT parameter layout.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{gelu, gelu_grad, Attention, AttentionCache, FeedForward, FeedForwardCache, LayerNorm, LayerNormCache, Linear};
use super::{Grads, Init, ParamId, ParamSet};

fn default_type_vocab() -> usize {
    2
}

fn default_ln_eps() -> f64 {
    1e-12
}

/// Subset of a Hugging Face `config.json` for BERT-family encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BertConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
}

impl BertConfig {
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden_size: 64,
            num_hidden_layers: 2,
            num_attention_heads: 4,
            intermediate_size: 128,
            max_position_embeddings: 128,
            type_vocab_size: 2,
            layer_norm_eps: 1e-12,
        }
    }
}

pub const INIT_STD: f64 = 0.02;

pub(crate) fn linear<R: Rng>(p: &mut ParamSet, name: &str, out: usize, inp: usize, rng: &mut R) -> Linear {
    Linear {
        weight: p.add(&format!("{name}.weight"), &[out, inp], Init::Normal(INIT_STD), rng),
        bias: p.add(&format!("{name}.bias"), &[out], Init::Zeros, rng),
    }
}

pub(crate) fn layer_norm<R: Rng>(p: &mut ParamSet, name: &str, dim: usize, eps: f64, rng: &mut R) -> LayerNorm {
    LayerNorm {
        gamma: p.add(&format!("{name}.weight"), &[dim], Init::Ones, rng),
        beta: p.add(&format!("{name}.bias"), &[dim], Init::Zeros, rng),
        eps,
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: Attention,
    attn_ln: LayerNorm,
    ff: FeedForward,
    out_ln: LayerNorm,
}

#[derive(Debug, Clone)]
struct LayerCache {
    attn: AttentionCache,
    attn_ln: LayerNormCache,
    ff: FeedForwardCache,
    out_ln: LayerNormCache,
}

#[derive(Debug, Clone)]
pub struct BertEncoder {
    pub config: BertConfig,
    pub word_embeddings: ParamId,
    position_embeddings: ParamId,
    token_type_embeddings: ParamId,
    emb_ln: LayerNorm,
    layers: Vec<EncoderLayer>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    ids: Vec<usize>,
    emb_ln: LayerNormCache,
    layers: Vec<LayerCache>,
}

impl EncoderCache {
    /// Attention probabilities as `[layer][head]` matrices of shape `[T, T]`.
    pub fn attention(&self) -> Vec<Vec<Array2<f64>>> {
        self.layers.iter().map(|l| l.attn.probs.clone()).collect()
    }
}

impl BertEncoder {
    /// Registers all encoder parameters under `prefix` (e.g. `bert.`).
    pub fn build<R: Rng>(config: &BertConfig, prefix: &str, p: &mut ParamSet, rng: &mut R) -> Self {
        let h = config.hidden_size;
        let eps = config.layer_norm_eps;
        let emb = |n: &str| format!("{prefix}embeddings.{n}");
        let word_embeddings = p.add(&emb("word_embeddings.weight"), &[config.vocab_size, h], Init::Normal(INIT_STD), rng);
        let position_embeddings = p.add(
            &emb("position_embeddings.weight"),
            &[config.max_position_embeddings, h],
            Init::Normal(INIT_STD),
            rng,
        );
        let token_type_embeddings = p.add(
            &emb("token_type_embeddings.weight"),
            &[config.type_vocab_size, h],
            Init::Normal(INIT_STD),
            rng,
        );
        let emb_ln = layer_norm(p, &emb("LayerNorm"), h, eps, rng);
        let layers = (0..config.num_hidden_layers)
            .map(|i| {
                let l = format!("{prefix}encoder.layer.{i}");
                EncoderLayer {
                    attn: Attention {
                        query: linear(p, &format!("{l}.attention.self.query"), h, h, rng),
                        key: linear(p, &format!("{l}.attention.self.key"), h, h, rng),
                        value: linear(p, &format!("{l}.attention.self.value"), h, h, rng),
                        output: linear(p, &format!("{l}.attention.output.dense"), h, h, rng),
                        heads: config.num_attention_heads,
                        causal: false,
                    },
                    attn_ln: layer_norm(p, &format!("{l}.attention.output.LayerNorm"), h, eps, rng),
                    ff: FeedForward {
                        inner: linear(p, &format!("{l}.intermediate.dense"), config.intermediate_size, h, rng),
                        outer: linear(p, &format!("{l}.output.dense"), h, config.intermediate_size, rng),
                    },
                    out_ln: layer_norm(p, &format!("{l}.output.LayerNorm"), h, eps, rng),
                }
            })
            .collect();
        Self {
            config: config.clone(),
            word_embeddings,
            position_embeddings,
            token_type_embeddings,
            emb_ln,
            layers,
        }
    }

    pub fn forward(&self, p: &ParamSet, ids: &[usize]) -> (Array2<f64>, EncoderCache) {
        let h = self.config.hidden_size;
        let words = p.m(self.word_embeddings);
        let positions = p.m(self.position_embeddings);
        let types = p.m(self.token_type_embeddings);
        let mut x = Array2::zeros((ids.len(), h));
        for (t, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(t);
            row += &words.row(id);
            row += &positions.row(t);
            row += &types.row(0);
        }
        let (mut x, emb_ln) = self.emb_ln.forward(p, &x);
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (a, attn) = layer.attn.forward(p, &x, &x);
            let (h1, attn_ln) = layer.attn_ln.forward(p, &(&x + &a));
            let (f, ff) = layer.ff.forward(p, &h1);
            let (h2, out_ln) = layer.out_ln.forward(p, &(&h1 + &f));
            layers.push(LayerCache { attn, attn_ln, ff, out_ln });
            x = h2;
        }
        (x, EncoderCache { ids: ids.to_vec(), emb_ln, layers })
    }

    pub fn backward(&self, p: &ParamSet, g: &mut Grads, cache: &EncoderCache, dout: Array2<f64>) {
        let mut dx = dout;
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            let dres2 = layer.out_ln.backward(p, g, &c.out_ln, &dx);
            let dh1 = &dres2 + &layer.ff.backward(p, g, &c.ff, &dres2);
            let dres1 = layer.attn_ln.backward(p, g, &c.attn_ln, &dh1);
            let (dq, dkv) = layer.attn.backward(p, g, &c.attn, &dres1);
            dx = dres1 + dq + dkv;
        }
        let demb = self.emb_ln.backward(p, g, &cache.emb_ln, &dx);
        let h = self.config.hidden_size;
        for (t, &id) in cache.ids.iter().enumerate() {
            let row = demb.row(t);
            for (slot, tensor_row) in [
                (self.word_embeddings, id),
                (self.position_embeddings, t),
                (self.token_type_embeddings, 0),
            ] {
                let dst = &mut g.raw_mut(slot)[tensor_row * h..(tensor_row + 1) * h];
                for (d, s) in dst.iter_mut().zip(row.iter()) {
                    *d += s;
                }
            }
        }
    }
}

/// Pooler (`tanh` dense over the first position) followed by a linear classifier.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pooler: Linear,
    classifier: Linear,
}

#[derive(Debug, Clone)]
pub struct ClassifierHeadCache {
    first: Array2<f64>,
    pooled: Array2<f64>,
    seq_len: usize,
}

impl ClassifierHead {
    pub fn build<R: Rng>(config: &BertConfig, prefix: &str, num_labels: usize, p: &mut ParamSet, rng: &mut R) -> Self {
        let h = config.hidden_size;
        Self {
            pooler: linear(p, &format!("{prefix}pooler.dense"), h, h, rng),
            classifier: linear(p, "classifier", num_labels, h, rng),
        }
    }

    pub fn forward(&self, p: &ParamSet, hidden: &Array2<f64>) -> (Array1<f64>, ClassifierHeadCache) {
        let first = hidden.slice(ndarray::s![0..1, ..]).to_owned();
        let pooled = self.pooler.forward(p, &first).mapv(f64::tanh);
        let logits = self.classifier.forward(p, &pooled).row(0).to_owned();
        (
            logits,
            ClassifierHeadCache {
                first,
                pooled,
                seq_len: hidden.nrows(),
            },
        )
    }

    /// Returns the gradient with respect to the full hidden-state matrix.
    pub fn backward(&self, p: &ParamSet, g: &mut Grads, c: &ClassifierHeadCache, dlogits: &Array1<f64>) -> Array2<f64> {
        let dl = dlogits.view().insert_axis(Axis(0)).to_owned();
        let dpooled = self.classifier.backward(p, g, &c.pooled, &dl);
        let dpre = dpooled * &c.pooled.mapv(|t| 1.0 - t * t);
        let dfirst = self.pooler.backward(p, g, &c.first, &dpre);
        let mut dh = Array2::zeros((c.seq_len, dfirst.ncols()));
        dh.row_mut(0).assign(&dfirst.row(0));
        dh
    }
}

/// Masked-LM head: dense + GELU + LayerNorm, then a decoder tied to the word embeddings.
#[derive(Debug, Clone)]
pub struct MlmHead {
    transform: Linear,
    ln: LayerNorm,
    bias: ParamId,
    word_embeddings: ParamId,
}

#[derive(Debug, Clone)]
pub struct MlmHeadCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    ln: LayerNormCache,
    t: Array2<f64>,
}

impl MlmHead {
    pub fn build<R: Rng>(config: &BertConfig, word_embeddings: ParamId, p: &mut ParamSet, rng: &mut R) -> Self {
        let h = config.hidden_size;
        Self {
            transform: linear(p, "cls.predictions.transform.dense", h, h, rng),
            ln: layer_norm(p, "cls.predictions.transform.LayerNorm", h, config.layer_norm_eps, rng),
            bias: p.add("cls.predictions.bias", &[config.vocab_size], Init::Zeros, rng),
            word_embeddings,
        }
    }

    /// Vocabulary logits for each row of `x`.
    pub fn forward(&self, p: &ParamSet, x: &Array2<f64>) -> (Array2<f64>, MlmHeadCache) {
        let pre = self.transform.forward(p, x);
        let (t, ln) = self.ln.forward(p, &pre.mapv(gelu));
        let mut logits = t.dot(&p.m(self.word_embeddings).t());
        logits += &p.v(self.bias);
        (logits, MlmHeadCache { x: x.clone(), pre, ln, t })
    }

    pub fn backward(&self, p: &ParamSet, g: &mut Grads, c: &MlmHeadCache, dlogits: &Array2<f64>) -> Array2<f64> {
        g.v(self.bias).scaled_add(1.0, &dlogits.sum_axis(Axis(0)));
        ndarray::linalg::general_mat_mul(1.0, &dlogits.t(), &c.t, 1.0, &mut g.m(self.word_embeddings));
        let dt = dlogits.dot(&p.m(self.word_embeddings));
        let dact = self.ln.backward(p, g, &c.ln, &dt);
        let dpre = dact * &c.pre.mapv(gelu_grad);
        self.transform.backward(p, g, &c.x, &dpre)
    }
}

/// Softmax cross-entropy: returns `(loss, dlogits)` for one target.
pub fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let logp = super::ops::log_softmax(logits);
    let grad = logp
        .iter()
        .enumerate()
        .map(|(i, lp)| lp.exp() - f64::from(u8::from(i == target)))
        .collect();
    (-logp[target], grad)
}
