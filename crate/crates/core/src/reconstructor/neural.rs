//! Fine-tunable reconstructors: masked-token prediction and seq2seq infilling.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{mask_metaphor, Candidate, MaskedSentence, Reconstruct, MASK_TOKEN};
use crate::classifier::{model_dir, Fingerprint, ScratchSpec, SCRATCH};
use crate::corpus::TokenizedSentence;
use crate::error::{Error, Result};
use crate::nn::bert::{cross_entropy, BertConfig, BertEncoder, MlmHead};
use crate::nn::decoder::Decoder;
use crate::nn::ops::softmax_in_place;
use crate::nn::train::{fit, TrainSpec};
use crate::nn::vocab::{Encoded, Vocab, VocabKind};
use crate::nn::{load_pretrained, safetensors, ParamSet};
use crate::par::ExecutionMode;
use crate::rng::substream;

const MAX_CONTINUATION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReconstructorBackend {
    MaskedTokenPrediction,
    Seq2seqInfilling,
}

impl std::str::FromStr for ReconstructorBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "masked-token-prediction" | "mlm" | "bert" => Ok(Self::MaskedTokenPrediction),
            "seq2seq-infilling" | "seq2seq" | "infilling" => Ok(Self::Seq2seqInfilling),
            other => Err(Error::invalid(format!("unknown reconstructor backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructorConfig {
    pub backend: ReconstructorBackend,
    /// `scratch`, or a model directory whose encoder weights seed the model.
    pub model: String,
    pub model_root: Option<std::path::PathBuf>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub max_length: usize,
    pub scratch: ScratchSpec,
}

impl Default for ReconstructorConfig {
    fn default() -> Self {
        Self {
            backend: ReconstructorBackend::MaskedTokenPrediction,
            model: SCRATCH.into(),
            model_root: None,
            batch_size: 32,
            learning_rate: 2e-5,
            epochs: 10,
            adam_epsilon: 1e-8,
            seed: 42,
            max_length: 128,
            scratch: ScratchSpec::default(),
        }
    }
}

impl ReconstructorConfig {
    /// Settings that let a randomly initialized tiny model learn on a CPU.
    pub fn scratch_preset(backend: ReconstructorBackend) -> Self {
        Self {
            backend,
            learning_rate: 1e-3,
            epochs: 30,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
enum Head {
    Mlm(MlmHead),
    Seq2seq(Decoder),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructorManifest {
    pub format: String,
    pub config: ReconstructorConfig,
    pub fingerprint: Fingerprint,
    /// Fingerprint of the classifier whose true positives formed the training set.
    pub classifier_lineage: Option<Fingerprint>,
    pub input_convention: String,
    pub bert: BertConfig,
    pub vocab_kind: VocabKind,
    pub lowercase: bool,
}

const FORMAT: &str = "metaphor-reconstructor/1";
const CONVENTION_MLM: &str = "one [MASK] per masked word; training masks every subword of each metaphor word";
const CONVENTION_S2S: &str = "source: text with one [MASK] per masked word; target: original text; copy-constrained greedy decoding";

#[derive(Debug, Clone)]
pub struct TrainedReconstructor {
    pub manifest: ReconstructorManifest,
    vocab: Vocab,
    params: ParamSet,
    encoder: BertEncoder,
    head: Head,
    max_length: usize,
}

fn structure(backend: ReconstructorBackend, config: &BertConfig, seed: u64) -> (ParamSet, BertEncoder, Head) {
    let mut rng = substream(seed, "reconstructor-init");
    let mut params = ParamSet::new();
    let encoder = BertEncoder::build(config, "bert.", &mut params, &mut rng);
    let head = match backend {
        ReconstructorBackend::MaskedTokenPrediction => Head::Mlm(MlmHead::build(config, encoder.word_embeddings, &mut params, &mut rng)),
        ReconstructorBackend::Seq2seqInfilling => Head::Seq2seq(Decoder::build(config, encoder.word_embeddings, &mut params, &mut rng)),
    };
    (params, encoder, head)
}

fn masked_words(m: &MaskedSentence) -> Vec<Option<&str>> {
    let masked: BTreeSet<usize> = m.masked_positions.iter().copied().collect();
    m.tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (!masked.contains(&i)).then_some(t.as_str()))
        .collect()
}

enum Example {
    Mlm { ids: Vec<usize>, targets: Vec<(usize, usize)> },
    Seq2seq { src: Vec<usize>, tgt: Vec<usize> },
}

/// Fine-tunes a reconstructor on metaphor-annotated sentences (normally the
/// classifier's true positives), masking only their metaphor positions.
pub fn train_reconstructor(
    sentences: &[TokenizedSentence],
    classifier_lineage: Option<&Fingerprint>,
    config: &ReconstructorConfig,
    mode: ExecutionMode,
) -> Result<TrainedReconstructor> {
    if sentences.is_empty() {
        return Err(Error::invalid("reconstructor training set is empty"));
    }
    if let Some(s) = sentences.iter().find(|s| s.metaphor_indices.is_empty()) {
        return Err(Error::invalid(format!("training sentence {} has no metaphor indices", s.id)));
    }
    if config.batch_size == 0 || config.max_length < 3 {
        return Err(Error::invalid("reconstructor needs batch_size ≥ 1 and max_length ≥ 3"));
    }
    let (bert, vocab, mut params, encoder, head) = if config.model == SCRATCH {
        let vocab = Vocab::word_level(sentences.iter().map(|s| s.tokens.as_slice()), 1);
        let bert = config.scratch.config(vocab.len());
        let (p, e, h) = structure(config.backend, &bert, config.seed);
        (bert, vocab, p, e, h)
    } else {
        let dir = model_dir(&config.model, config.model_root.as_deref());
        let pre = load_pretrained(&dir)?;
        let (mut p, e, h) = structure(config.backend, &pre.config, config.seed);
        let missing = safetensors::load_into(&mut p, pre.tensors)?;
        if let Some(m) = missing.iter().find(|n| n.starts_with("bert.")) {
            return Err(Error::Resource(format!("{}: checkpoint lacks encoder tensor {m}", dir.display())));
        }
        if !missing.is_empty() {
            log::info!("freshly initialized {} reconstructor tensors", missing.len());
        }
        (pre.config, pre.vocab, p, e, h)
    };
    let max_length = config.max_length.min(bert.max_position_embeddings);
    let mut examples = Vec::with_capacity(sentences.len());
    for s in sentences {
        let masked = mask_metaphor(s)?;
        match config.backend {
            ReconstructorBackend::MaskedTokenPrediction => {
                let enc = vocab.encode(&s.tokens, max_length);
                let mut ids = enc.ids.clone();
                let mut targets = Vec::new();
                for &w in &masked.masked_positions {
                    for pos in enc.pieces[w].clone() {
                        targets.push((pos, ids[pos]));
                        ids[pos] = vocab.mask;
                    }
                }
                if !targets.is_empty() {
                    examples.push(Example::Mlm { ids, targets });
                }
            }
            ReconstructorBackend::Seq2seqInfilling => {
                let src = vocab.encode_masked(&masked_words(&masked), max_length).ids;
                let tgt = vocab.encode(&s.tokens, max_length).ids;
                examples.push(Example::Seq2seq { src, tgt });
            }
        }
    }
    let spec = TrainSpec {
        epochs: config.epochs,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        adam_epsilon: config.adam_epsilon,
        seed: config.seed,
        ..TrainSpec::default()
    };
    let history = {
        let (encoder, head) = (&encoder, &head);
        fit(&mut params, &examples, &spec, mode, |p, ex, g| match (ex, head) {
            (Example::Mlm { ids, targets }, Head::Mlm(mlm)) => {
                let (h, cache) = encoder.forward(p, ids);
                let rows: Vec<usize> = targets.iter().map(|t| t.0).collect();
                let (logits, mc) = mlm.forward(p, &h.select(Axis(0), &rows));
                let n = targets.len() as f64;
                let mut dl = Array2::zeros(logits.raw_dim());
                let mut loss = 0.0;
                for (i, &(_, y)) in targets.iter().enumerate() {
                    let (l, d) = cross_entropy(logits.row(i).as_slice().expect("contiguous"), y);
                    loss += l / n;
                    dl.row_mut(i).iter_mut().zip(d).for_each(|(a, b)| *a = b / n);
                }
                let drows = mlm.backward(p, g, &mc, &dl);
                let mut dh = Array2::zeros(h.raw_dim());
                for (i, &r) in rows.iter().enumerate() {
                    let mut row = dh.row_mut(r);
                    row += &drows.row(i);
                }
                encoder.backward(p, g, &cache, dh);
                loss
            }
            (Example::Seq2seq { src, tgt }, Head::Seq2seq(dec)) => {
                let (mem, ec) = encoder.forward(p, src);
                let (logits, dc) = dec.forward(p, &tgt[..tgt.len() - 1], &mem);
                let n = (tgt.len() - 1) as f64;
                let mut dl = Array2::zeros(logits.raw_dim());
                let mut loss = 0.0;
                for t in 0..tgt.len() - 1 {
                    let (l, d) = cross_entropy(logits.row(t).as_slice().expect("contiguous"), tgt[t + 1]);
                    loss += l / n;
                    dl.row_mut(t).iter_mut().zip(d).for_each(|(a, b)| *a = b / n);
                }
                let dmem = dec.backward(p, g, &dc, &dl);
                encoder.backward(p, g, &ec, dmem);
                loss
            }
            _ => unreachable!("examples match the head"),
        })
    };
    log::info!("reconstructor training loss by epoch: {history:?}");
    let manifest = ReconstructorManifest {
        format: FORMAT.into(),
        config: config.clone(),
        fingerprint: Fingerprint::of("reconstructor-train", "true-positives", config.seed, sentences),
        classifier_lineage: classifier_lineage.cloned(),
        input_convention: match config.backend {
            ReconstructorBackend::MaskedTokenPrediction => CONVENTION_MLM,
            ReconstructorBackend::Seq2seqInfilling => CONVENTION_S2S,
        }
        .into(),
        bert,
        vocab_kind: vocab.kind,
        lowercase: vocab.lowercase,
    };
    Ok(TrainedReconstructor {
        manifest,
        vocab,
        params,
        encoder,
        head,
        max_length,
    })
}

impl TrainedReconstructor {
    /// Ids that may start a predicted word.
    fn allowed(&self, id: usize) -> bool {
        self.vocab.is_word_start(id) && self.vocab.token(id).chars().any(char::is_alphanumeric)
    }

    fn top_k(&self, probs: &[f64], k: usize, filter: impl Fn(usize) -> bool) -> Vec<(usize, f64)> {
        let mut ids: Vec<(usize, f64)> = probs.iter().copied().enumerate().filter(|(i, _)| filter(*i)).collect();
        ids.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ids.truncate(k);
        ids
    }

    fn mlm_probs(&self, mlm: &MlmHead, ids: &[usize], rows: &[usize]) -> Vec<Vec<f64>> {
        let (h, _) = self.encoder.forward(&self.params, ids);
        let (logits, _) = mlm.forward(&self.params, &h.select(Axis(0), rows));
        logits
            .rows()
            .into_iter()
            .map(|r| {
                let mut p = r.to_vec();
                softmax_in_place(&mut p);
                p
            })
            .collect()
    }

    /// Greedily appends `##` pieces after `first` at `pos` while the model prefers them.
    fn mlm_extend(&self, mlm: &MlmHead, ids: &[usize], pos: usize, first: usize) -> Vec<usize> {
        let mut word = vec![first];
        if self.vocab.kind != VocabKind::WordPiece {
            return word;
        }
        let mut seq = ids.to_vec();
        seq[pos] = first;
        for step in 0..MAX_CONTINUATION {
            let at = pos + 1 + step;
            if seq.len() + 1 > self.max_length {
                break;
            }
            seq.insert(at, self.vocab.mask);
            let probs = &self.mlm_probs(mlm, &seq, &[at])[0];
            let best = self.top_k(probs, 1, |i| !self.vocab.is_special(i))[0].0;
            if !self.vocab.token(best).starts_with("##") {
                break;
            }
            seq[at] = best;
            word.push(best);
        }
        word
    }

    fn decode_probs(&self, dec: &Decoder, memory: &Array2<f64>, prefix: &[usize]) -> Vec<f64> {
        let (logits, _) = dec.forward(&self.params, prefix, memory);
        let mut p = logits.row(logits.nrows() - 1).to_vec();
        softmax_in_place(&mut p);
        p
    }

    fn s2s_candidates(&self, dec: &Decoder, masked: &MaskedSentence, k: usize) -> Vec<Vec<Candidate>> {
        let words = masked_words(masked);
        let src = self.vocab.encode_masked(&words, self.max_length);
        let (memory, _) = self.encoder.forward(&self.params, &src.ids);
        let forced: Vec<Vec<usize>> = words
            .iter()
            .map(|w| w.map(|w| self.vocab.word_pieces(w)).unwrap_or_default())
            .collect();
        let budget = self.max_length.min(self.manifest.bert.max_position_embeddings);
        let mut prefix = vec![self.vocab.cls];
        let mut out = Vec::new();
        for (w, word) in words.iter().enumerate() {
            if word.is_some() {
                for &id in &forced[w] {
                    if prefix.len() < budget {
                        prefix.push(id);
                    }
                }
                continue;
            }
            if prefix.len() >= budget {
                out.push(vec![self.unk_candidate()]);
                continue;
            }
            let next_forced = forced[w + 1..].iter().find_map(|f| f.first().copied()).unwrap_or(self.vocab.sep);
            let probs = self.decode_probs(dec, &memory, &prefix);
            let firsts = self.top_k(&probs, k, |i| self.allowed(i));
            let mut cands = Vec::with_capacity(firsts.len());
            let mut best_pieces = Vec::new();
            for (rank, &(id, p)) in firsts.iter().enumerate() {
                let mut pieces = vec![id];
                if self.vocab.kind == VocabKind::WordPiece {
                    let mut pre = prefix.clone();
                    pre.push(id);
                    while pieces.len() <= MAX_CONTINUATION && pre.len() < budget {
                        let probs = self.decode_probs(dec, &memory, &pre);
                        let cont = self.top_k(&probs, 1, |i| self.vocab.token(i).starts_with("##"));
                        match cont.first() {
                            Some(&(c, pc)) if pc > probs[next_forced] => {
                                pieces.push(c);
                                pre.push(c);
                            }
                            _ => break,
                        }
                    }
                }
                if rank == 0 {
                    best_pieces = pieces.clone();
                }
                cands.push(Candidate {
                    token: self.vocab.join_pieces(&pieces),
                    prob: p,
                });
            }
            for id in best_pieces {
                if prefix.len() < budget {
                    prefix.push(id);
                }
            }
            out.push(cands);
        }
        out
    }

    fn unk_candidate(&self) -> Candidate {
        Candidate {
            token: self.vocab.token(self.vocab.unk).to_string(),
            prob: 0.0,
        }
    }

    fn mlm_candidates(&self, mlm: &MlmHead, masked: &MaskedSentence, k: usize) -> Vec<Vec<Candidate>> {
        let enc: Encoded = self.vocab.encode_masked(&masked_words(masked), self.max_length);
        let rows: Vec<Option<usize>> = masked
            .masked_positions
            .iter()
            .map(|&w| {
                let r = &enc.pieces[w];
                (!r.is_empty()).then_some(r.start)
            })
            .collect();
        let live: Vec<usize> = rows.iter().flatten().copied().collect();
        let probs = if live.is_empty() { Vec::new() } else { self.mlm_probs(mlm, &enc.ids, &live) };
        let mut it = probs.iter();
        rows.iter()
            .map(|row| match row {
                None => vec![self.unk_candidate()],
                Some(pos) => {
                    let p = it.next().expect("one distribution per live row");
                    self.top_k(p, k, |i| self.allowed(i))
                        .into_iter()
                        .map(|(id, prob)| Candidate {
                            token: self.vocab.join_pieces(&self.mlm_extend(mlm, &enc.ids, *pos, id)),
                            prob,
                        })
                        .collect()
                }
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&self.manifest)?).map_err(|e| Error::io(&path, e))?;
        self.vocab.write(&dir.join("vocab.txt"))?;
        safetensors::write(&dir.join("model.safetensors"), &self.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ReconstructorManifest = serde_json::from_str(&raw)?;
        if manifest.format != FORMAT {
            return Err(Error::Format(format!("{}: unknown format {}", path.display(), manifest.format)));
        }
        let vocab = Vocab::read(&dir.join("vocab.txt"), manifest.vocab_kind, manifest.lowercase)?;
        let (mut params, encoder, head) = structure(manifest.config.backend, &manifest.bert, 0);
        let missing = safetensors::load_into(&mut params, safetensors::read(&dir.join("model.safetensors"))?)?;
        if let Some(m) = missing.first() {
            return Err(Error::Format(format!("{}: saved model lacks tensor {m}", dir.display())));
        }
        let max_length = manifest.config.max_length.min(manifest.bert.max_position_embeddings);
        Ok(Self {
            manifest,
            vocab,
            params,
            encoder,
            head,
            max_length,
        })
    }
}

impl Reconstruct for TrainedReconstructor {
    fn candidates(&self, masked: &MaskedSentence, k: usize) -> Vec<Vec<Candidate>> {
        debug_assert!(masked.masked_positions.iter().all(|&p| masked.tokens[p] == MASK_TOKEN));
        let k = k.max(1);
        match &self.head {
            Head::Mlm(mlm) => self.mlm_candidates(mlm, masked, k),
            Head::Seq2seq(dec) => self.s2s_candidates(dec, masked, k),
        }
    }
}
