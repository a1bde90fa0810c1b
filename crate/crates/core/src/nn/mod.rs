//! Small transformer toolkit with hand-written backpropagation.
//!
//! Parameters live in a flat [`ParamSet`] addressed by [`ParamId`]; every
//! forward pass returns a cache that its backward pass consumes, writing
//! into a [`Grads`] buffer laid out like the parameter set. Weight names
//! follow the Hugging Face BERT layout so checkpoints can be exchanged
//! through [`safetensors`].

pub mod bert;
pub mod decoder;
pub mod ops;
pub mod optim;
pub mod safetensors;
pub mod train;
pub mod vocab;

use std::collections::HashMap;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng>(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut R) -> ParamId {
        let mut t = Tensor::zeros(shape);
        match init {
            Init::Zeros => {}
            Init::Ones => t.data.iter_mut().for_each(|v| *v = 1.0),
            Init::Normal(std) => t.data.iter_mut().for_each(|v| *v = std * standard_normal(rng)),
        }
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn m(&self, id: ParamId) -> ArrayView2<'_, f64> {
        let t = &self.tensors[id.0];
        ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("2-d parameter")
    }

    pub fn v(&self, id: ParamId) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.tensors[id.0].data[..])
    }

    /// Overwrites a parameter by name, checking the shape.
    pub fn assign(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Format(format!("unknown parameter `{name}`")))?;
        let t = &mut self.tensors[id.0];
        if t.shape != shape {
            return Err(Error::Format(format!(
                "parameter `{name}` has shape {:?}, checkpoint has {shape:?}",
                t.shape
            )));
        }
        t.data = data;
        Ok(())
    }
}

/// Gradient buffer shaped like a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    data: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
}

impl Grads {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            data: params.tensors.iter().map(|t| vec![0.0; t.numel()]).collect(),
            shapes: params.tensors.iter().map(|t| t.shape.clone()).collect(),
        }
    }

    pub fn m(&mut self, id: ParamId) -> ArrayViewMut2<'_, f64> {
        let s = &self.shapes[id.0];
        ArrayViewMut2::from_shape((s[0], s[1]), &mut self.data[id.0]).expect("2-d gradient")
    }

    pub fn v(&mut self, id: ParamId) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.data[id.0][..])
    }

    pub fn raw(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn raw_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().flatten().for_each(|x| *x *= k);
    }

    pub fn global_norm(&self) -> f64 {
        self.data.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// A Hugging Face style model directory: `config.json`, `vocab.txt`,
/// `model.safetensors` and an optional `tokenizer_config.json`.
pub struct Pretrained {
    pub config: bert::BertConfig,
    pub vocab: vocab::Vocab,
    pub tensors: Vec<safetensors::NamedTensor>,
}

pub fn load_pretrained(dir: &std::path::Path) -> Result<Pretrained> {
    let need = ["config.json", "vocab.txt", "model.safetensors"];
    if let Some(missing) = need.iter().find(|f| !dir.join(f).is_file()) {
        return Err(Error::Resource(format!(
            "encoder weights unavailable: {} has no {missing} (expected {})",
            dir.display(),
            need.join(", ")
        )));
    }
    let cfg_path = dir.join("config.json");
    let raw = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let config: bert::BertConfig = serde_json::from_str(&raw)?;
    let tok_path = dir.join("tokenizer_config.json");
    let lowercase = std::fs::read_to_string(&tok_path)
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .and_then(|v| v.get("do_lower_case").and_then(serde_json::Value::as_bool))
        .unwrap_or(true);
    let vocab = vocab::Vocab::from_vocab_txt(&dir.join("vocab.txt"), lowercase)?;
    if vocab.len() != config.vocab_size {
        return Err(Error::Format(format!(
            "{}: vocab.txt has {} entries, config declares {}",
            dir.display(),
            vocab.len(),
            config.vocab_size
        )));
    }
    let tensors = safetensors::read(&dir.join("model.safetensors"))?;
    Ok(Pretrained { config, vocab, tensors })
}
