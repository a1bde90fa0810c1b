//! Fine-tuned transformer encoder with a sequence-classification head.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::EncoderSpec;
use crate::corpus::TokenizedSentence;
use crate::error::{Error, Result};
use crate::nn::bert::{cross_entropy, BertConfig, BertEncoder, ClassifierHead};
use crate::nn::ops::softmax_in_place;
use crate::nn::train::{fit, TrainSpec};
use crate::nn::vocab::{Encoded, Vocab, VocabKind};
use crate::nn::{load_pretrained, safetensors, ParamSet};
use crate::par::ExecutionMode;
use crate::rng::substream;

pub const SCRATCH: &str = "scratch";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    vocab_kind: VocabKind,
    lowercase: bool,
    max_length: usize,
    source_model: String,
}

#[derive(Debug, Clone)]
pub struct EncoderClassifier {
    pub config: BertConfig,
    pub vocab: Vocab,
    params: ParamSet,
    encoder: BertEncoder,
    head: ClassifierHead,
    max_length: usize,
    source_model: String,
}

fn structure(config: &BertConfig, seed: u64) -> (ParamSet, BertEncoder, ClassifierHead) {
    let mut rng = substream(seed, "encoder-init");
    let mut params = ParamSet::new();
    let encoder = BertEncoder::build(config, "bert.", &mut params, &mut rng);
    let head = ClassifierHead::build(config, "bert.", 2, &mut params, &mut rng);
    (params, encoder, head)
}

/// Resolves a model identifier to a directory, relative ids against `model_root`.
pub fn model_dir(model: &str, model_root: Option<&Path>) -> PathBuf {
    let p = PathBuf::from(model);
    match model_root {
        Some(root) if p.is_relative() => root.join(p),
        _ => p,
    }
}

impl EncoderClassifier {
    /// Initializes from a pretrained directory, or from scratch with a
    /// word-level vocabulary over `train` when the model id is `scratch`.
    pub fn init(spec: &EncoderSpec, train: &[TokenizedSentence]) -> Result<Self> {
        if spec.model == SCRATCH {
            let vocab = Vocab::word_level(train.iter().map(|s| s.tokens.as_slice()), 1);
            let config = spec.scratch.config(vocab.len());
            let (params, encoder, head) = structure(&config, spec.seed);
            return Ok(Self {
                max_length: spec.max_length.min(config.max_position_embeddings),
                config,
                vocab,
                params,
                encoder,
                head,
                source_model: SCRATCH.into(),
            });
        }
        let dir = model_dir(&spec.model, spec.model_root.as_deref());
        let pre = load_pretrained(&dir)?;
        let (mut params, encoder, head) = structure(&pre.config, spec.seed);
        let missing = safetensors::load_into(&mut params, pre.tensors)?;
        let encoder_missing: Vec<&String> = missing.iter().filter(|n| n.starts_with("bert.embeddings") || n.starts_with("bert.encoder")).collect();
        if !encoder_missing.is_empty() {
            return Err(Error::Resource(format!(
                "{}: checkpoint lacks encoder tensors such as {}",
                dir.display(),
                encoder_missing[0]
            )));
        }
        if !missing.is_empty() {
            log::info!("freshly initialized: {}", missing.join(", "));
        }
        Ok(Self {
            max_length: spec.max_length.min(pre.config.max_position_embeddings),
            config: pre.config,
            vocab: pre.vocab,
            params,
            encoder,
            head,
            source_model: spec.model.clone(),
        })
    }

    pub fn encode(&self, tokens: &[String]) -> Encoded {
        self.vocab.encode(tokens, self.max_length)
    }

    pub fn fine_tune(&mut self, train: &[TokenizedSentence], spec: &EncoderSpec, mode: ExecutionMode) -> Vec<f64> {
        let examples: Vec<(Vec<usize>, usize)> = train
            .iter()
            .map(|s| (self.encode(&s.tokens).ids, usize::from(s.is_metaphorical())))
            .collect();
        let train_spec = TrainSpec {
            epochs: spec.epochs,
            batch_size: spec.batch_size,
            learning_rate: spec.learning_rate,
            adam_epsilon: spec.adam_epsilon,
            seed: spec.seed,
            ..TrainSpec::default()
        };
        let (encoder, head) = (&self.encoder, &self.head);
        fit(&mut self.params, &examples, &train_spec, mode, |p, (ids, y), g| {
            let (h, cache) = encoder.forward(p, ids);
            let (logits, hc) = head.forward(p, &h);
            let (loss, dl) = cross_entropy(logits.as_slice().expect("contiguous"), *y);
            let dh = head.backward(p, g, &hc, &Array1::from(dl));
            encoder.backward(p, g, &cache, dh);
            loss
        })
    }

    /// Probability of the metaphorical class.
    pub fn prob(&self, tokens: &[String]) -> f64 {
        let ids = self.encode(tokens).ids;
        let (h, _) = self.encoder.forward(&self.params, &ids);
        let (logits, _) = self.head.forward(&self.params, &h);
        let mut p = logits.to_vec();
        softmax_in_place(&mut p);
        p[1]
    }

    /// Attention probabilities `[layer][head]` and the subword alignment.
    pub fn attention(&self, tokens: &[String]) -> (Vec<Vec<Array2<f64>>>, Encoded) {
        let enc = self.encode(tokens);
        let (_, cache) = self.encoder.forward(&self.params, &enc.ids);
        (cache.attention(), enc)
    }

    /// Mean of the final hidden states over word positions.
    pub fn embed(&self, tokens: &[String]) -> Vec<f64> {
        let enc = self.encode(tokens);
        let (h, _) = self.encoder.forward(&self.params, &enc.ids);
        let rows: Vec<usize> = enc
            .word_of
            .iter()
            .enumerate()
            .filter_map(|(i, w)| w.map(|_| i))
            .collect();
        let mut v = vec![0.0; h.ncols()];
        for &r in &rows {
            v.iter_mut().zip(h.row(r)).for_each(|(a, b)| *a += b);
        }
        let n = rows.len().max(1) as f64;
        v.iter_mut().for_each(|a| *a /= n);
        v
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write_json = |name: &str, value: serde_json::Value| {
            let path = dir.join(name);
            fs::write(&path, serde_json::to_string_pretty(&value)?).map_err(|e| Error::io(&path, e))
        };
        write_json("config.json", serde_json::to_value(&self.config)?)?;
        write_json(
            "encoder.json",
            serde_json::to_value(Meta {
                vocab_kind: self.vocab.kind,
                lowercase: self.vocab.lowercase,
                max_length: self.max_length,
                source_model: self.source_model.clone(),
            })?,
        )?;
        self.vocab.write(&dir.join("vocab.txt"))?;
        safetensors::write(&dir.join("model.safetensors"), &self.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
        };
        let config: BertConfig = serde_json::from_str(&read("config.json")?)?;
        let meta: Meta = serde_json::from_str(&read("encoder.json")?)?;
        let vocab = Vocab::read(&dir.join("vocab.txt"), meta.vocab_kind, meta.lowercase)?;
        let (mut params, encoder, head) = structure(&config, 0);
        let missing = safetensors::load_into(&mut params, safetensors::read(&dir.join("model.safetensors"))?)?;
        if let Some(m) = missing.first() {
            return Err(Error::Format(format!("{}: saved model lacks tensor {m}", dir.display())));
        }
        Ok(Self {
            config,
            vocab,
            params,
            encoder,
            head,
            max_length: meta.max_length,
            source_model: meta.source_model,
        })
    }
}
