//! Metaphorical/literal sentence classifiers and the scoring contract used by both transfer gates.

mod classical;
mod encoder;
mod features;
mod lbfgs;
mod metrics;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Label, TokenizedSentence};
use crate::error::{Error, Result};
use crate::nn::bert::BertConfig;
use crate::par::{self, ExecutionMode};

pub use classical::ClassicalModel;
pub use encoder::{model_dir, EncoderClassifier, SCRATCH};
pub use features::{BowVectorizer, SparseBinary};
pub use metrics::{ClassificationMetrics, Confusion, MetricDeltas};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    NaiveBayes,
    RandomForest,
    Knn,
    Svm,
    LogisticRegression,
    Mlp,
    EncoderFinetune,
}

impl Backend {
    pub const ALL: [Backend; 7] = [
        Backend::NaiveBayes,
        Backend::RandomForest,
        Backend::Knn,
        Backend::Svm,
        Backend::LogisticRegression,
        Backend::Mlp,
        Backend::EncoderFinetune,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Backend::NaiveBayes => "naive-bayes",
            Backend::RandomForest => "random-forest",
            Backend::Knn => "knn",
            Backend::Svm => "svm",
            Backend::LogisticRegression => "logistic-regression",
            Backend::Mlp => "mlp",
            Backend::EncoderFinetune => "encoder-finetune",
        }
    }

    pub fn is_feature_based(self) -> bool {
        self != Backend::EncoderFinetune
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase().replace('_', "-");
        Backend::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .or(match s.as_str() {
                "nb" => Some(Backend::NaiveBayes),
                "rf" => Some(Backend::RandomForest),
                "lr" | "logreg" => Some(Backend::LogisticRegression),
                "encoder" | "bert" => Some(Backend::EncoderFinetune),
                _ => None,
            })
            .ok_or_else(|| Error::invalid(format!("unknown classifier backend `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSpec {
    pub max_vocab: usize,
    pub min_df: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            max_vocab: 20_000,
            min_df: 2,
        }
    }
}

/// Architecture of a randomly initialized encoder (model id `scratch`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScratchSpec {
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
}

impl Default for ScratchSpec {
    fn default() -> Self {
        let t = BertConfig::tiny(0);
        Self {
            hidden_size: t.hidden_size,
            num_hidden_layers: t.num_hidden_layers,
            num_attention_heads: t.num_attention_heads,
            intermediate_size: t.intermediate_size,
            max_position_embeddings: t.max_position_embeddings,
        }
    }
}

impl ScratchSpec {
    pub fn config(&self, vocab_size: usize) -> BertConfig {
        BertConfig {
            vocab_size,
            hidden_size: self.hidden_size,
            num_hidden_layers: self.num_hidden_layers,
            num_attention_heads: self.num_attention_heads,
            intermediate_size: self.intermediate_size,
            max_position_embeddings: self.max_position_embeddings,
            type_vocab_size: 2,
            layer_norm_eps: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    /// `scratch`, or a model directory (relative ids resolve against `model_root`).
    pub model: String,
    pub model_root: Option<PathBuf>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: String,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub max_length: usize,
    pub scratch: ScratchSpec,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            model: SCRATCH.into(),
            model_root: None,
            batch_size: 32,
            learning_rate: 2e-5,
            epochs: 10,
            optimizer: "adamw".into(),
            adam_epsilon: 1e-8,
            seed: 42,
            max_length: 128,
            scratch: ScratchSpec::default(),
        }
    }
}

impl EncoderSpec {
    /// Settings that let a randomly initialized tiny encoder learn on a CPU.
    pub fn scratch_preset() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 20,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub backend: Backend,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_spec: Option<FeatureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_spec: Option<EncoderSpec>,
    #[serde(default = "default_threshold")]
    pub threshold_h: f64,
    /// Seed for stochastic feature-based backends.
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_seed() -> u64 {
    42
}

impl ClassifierConfig {
    pub fn new(backend: Backend) -> Self {
        Self {
            backend,
            feature_spec: backend.is_feature_based().then(FeatureSpec::default),
            encoder_spec: (!backend.is_feature_based()).then(EncoderSpec::default),
            threshold_h: DEFAULT_THRESHOLD,
            seed: default_seed(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_h > 0.0 && self.threshold_h < 1.0) {
            return Err(Error::invalid(format!(
                "threshold_h must lie strictly between 0 and 1, got {}",
                self.threshold_h
            )));
        }
        match (self.backend.is_feature_based(), &self.feature_spec, &self.encoder_spec) {
            (true, Some(f), None) => {
                if f.max_vocab == 0 {
                    return Err(Error::invalid("feature_spec.max_vocab must be positive"));
                }
            }
            (false, None, Some(e)) => {
                if !e.optimizer.eq_ignore_ascii_case("adamw") {
                    return Err(Error::invalid(format!("unsupported optimizer `{}`; only adamw is implemented", e.optimizer)));
                }
                if e.batch_size == 0 || e.max_length < 3 {
                    return Err(Error::invalid("encoder_spec needs batch_size ≥ 1 and max_length ≥ 3"));
                }
            }
            _ => {
                return Err(Error::invalid(format!(
                    "backend {} needs exactly its matching spec ({})",
                    self.backend,
                    if self.backend.is_feature_based() { "feature_spec" } else { "encoder_spec" }
                )))
            }
        }
        Ok(())
    }
}

/// Label under threshold `h`: strictly above is metaphorical, ties are literal.
pub fn label_for(score: f64, h: f64) -> Label {
    Label::from_flag(score > h)
}

/// Anything that maps a token sequence to a metaphoricity score in `[0, 1]`.
///
/// Implementations must be deterministic and callable from many threads.
pub trait Scorer: Send + Sync {
    /// Raw score of a non-empty token sequence.
    fn score_tokens(&self, tokens: &[String]) -> f64;

    fn score(&self, tokens: &[String]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(Error::invalid("cannot score an empty token sequence"));
        }
        let s = self.score_tokens(tokens);
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Contract(format!("scorer returned {s}, outside [0, 1]")));
        }
        Ok(s)
    }
}

/// Dataset, split, seed and content digest of the data a model was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub dataset: String,
    pub split: String,
    pub seed: u64,
    pub records: usize,
    pub digest: String,
}

impl Fingerprint {
    pub fn of(dataset: &str, split: &str, seed: u64, records: &[TokenizedSentence]) -> Self {
        let mut h = Sha256::new();
        for r in records {
            h.update(r.id.as_bytes());
            h.update([0]);
            h.update(r.text.as_bytes());
            h.update([0]);
            h.update(format!("{:?}{:?}", r.label, r.metaphor_indices).as_bytes());
            h.update(b"\n");
        }
        let digest = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Self {
            dataset: dataset.into(),
            split: split.into(),
            seed,
            records: records.len(),
            digest,
        }
    }
}

#[derive(Debug, Clone)]
enum Model {
    Classical {
        vectorizer: BowVectorizer,
        model: ClassicalModel,
    },
    Encoder(Box<EncoderClassifier>),
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub config: ClassifierConfig,
    pub fingerprint: Fingerprint,
    model: Model,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierManifest {
    pub format: String,
    pub backend: Backend,
    pub config: ClassifierConfig,
    pub fingerprint: Fingerprint,
    pub metrics: Option<ClassificationMetrics>,
}

const MANIFEST_FORMAT: &str = "metaphor-classifier/1";

/// Trains a classifier on labeled records tagged with their dataset and split names.
pub fn train_classifier(
    train: &[TokenizedSentence],
    dataset: &str,
    split: &str,
    config: &ClassifierConfig,
    mode: ExecutionMode,
) -> Result<TrainedClassifier> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some(r) = train.iter().find(|r| r.label.is_none()) {
        return Err(Error::invalid(format!("training record {} has no label", r.id)));
    }
    let (met, lit) = crate::corpus::count_labels(train);
    if met == 0 || lit == 0 {
        return Err(Error::invalid(format!(
            "training set needs both labels, got {met} metaphorical and {lit} literal"
        )));
    }
    let (model, seed) = match config.backend {
        Backend::EncoderFinetune => {
            let spec = config.encoder_spec.as_ref().expect("validated");
            let mut enc = EncoderClassifier::init(spec, train)?;
            enc.fine_tune(train, spec, mode);
            (Model::Encoder(Box::new(enc)), spec.seed)
        }
        backend => {
            let spec = config.feature_spec.as_ref().expect("validated");
            let vectorizer = BowVectorizer::fit(train.iter().map(|r| r.tokens.as_slice()), spec);
            let xs: Vec<SparseBinary> = train.iter().map(|r| vectorizer.transform(&r.tokens)).collect();
            let ys: Vec<bool> = train.iter().map(TokenizedSentence::is_metaphorical).collect();
            let data = classical::Data {
                xs: &xs,
                ys: &ys,
                dim: vectorizer.dim(),
            };
            let model = classical::fit(backend, &data, config.seed, mode);
            (Model::Classical { vectorizer, model }, config.seed)
        }
    };
    Ok(TrainedClassifier {
        config: config.clone(),
        fingerprint: Fingerprint::of(dataset, split, seed, train),
        model,
    })
}

impl Scorer for TrainedClassifier {
    fn score_tokens(&self, tokens: &[String]) -> f64 {
        match &self.model {
            Model::Classical { vectorizer, model } => model.prob(&vectorizer.transform(tokens)),
            Model::Encoder(e) => e.prob(tokens),
        }
    }
}

impl TrainedClassifier {
    pub fn backend(&self) -> Backend {
        self.config.backend
    }

    pub fn threshold(&self) -> f64 {
        self.config.threshold_h
    }

    /// The encoder, when this classifier is encoder-backed.
    pub fn encoder(&self) -> Option<&EncoderClassifier> {
        match &self.model {
            Model::Encoder(e) => Some(e),
            Model::Classical { .. } => None,
        }
    }

    pub fn save(&self, dir: &Path, metrics: Option<&ClassificationMetrics>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = ClassifierManifest {
            format: MANIFEST_FORMAT.into(),
            backend: self.config.backend,
            config: self.config.clone(),
            fingerprint: self.fingerprint.clone(),
            metrics: metrics.copied(),
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        match &self.model {
            Model::Classical { vectorizer, model } => {
                let path = dir.join("state.json");
                let state = serde_json::json!({ "vocabulary": vectorizer.terms(), "model": model });
                fs::write(&path, serde_json::to_vec(&state)?).map_err(|e| Error::io(&path, e))
            }
            Model::Encoder(e) => e.save(&dir.join("encoder")),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ClassifierManifest = serde_json::from_str(&raw)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!("{}: unknown format {}", path.display(), manifest.format)));
        }
        let model = if manifest.backend.is_feature_based() {
            #[derive(Deserialize)]
            struct State {
                vocabulary: Vec<String>,
                model: ClassicalModel,
            }
            let path = dir.join("state.json");
            let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let state: State = serde_json::from_slice(&raw)?;
            Model::Classical {
                vectorizer: BowVectorizer::from_terms(state.vocabulary),
                model: state.model,
            }
        } else {
            Model::Encoder(Box::new(EncoderClassifier::load(&dir.join("encoder"))?))
        };
        Ok(Self {
            config: manifest.config,
            fingerprint: manifest.fingerprint,
            model,
        })
    }
}

/// Reads only the manifest of a saved classifier.
pub fn read_manifest(dir: &Path) -> Result<ClassifierManifest> {
    let path = dir.join("manifest.json");
    let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&raw)?)
}

/// Scores every record, preserving order.
pub fn score_all<S: Scorer + ?Sized>(scorer: &S, records: &[TokenizedSentence], mode: ExecutionMode) -> Result<Vec<f64>> {
    par::map(mode, records, |_, r| scorer.score(&r.tokens))
        .into_iter()
        .collect()
}

/// Precision, recall, F1 and accuracy with METAPHORICAL as the positive class.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    records: &[TokenizedSentence],
    h: f64,
    mode: ExecutionMode,
) -> Result<ClassificationMetrics> {
    if records.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let scores = score_all(scorer, records, mode)?;
    let mut c = Confusion::default();
    for (r, s) in records.iter().zip(scores) {
        let gold = r
            .label
            .ok_or_else(|| Error::invalid(format!("evaluation record {} has no label", r.id)))?;
        c.record(gold, label_for(s, h));
    }
    Ok(ClassificationMetrics::from_confusion(c))
}

/// Metaphorical records the scorer also places strictly above `h`.
pub fn true_positives<S: Scorer + ?Sized>(
    scorer: &S,
    records: &[TokenizedSentence],
    h: f64,
    mode: ExecutionMode,
) -> Result<Vec<TokenizedSentence>> {
    let met: Vec<TokenizedSentence> = records.iter().filter(|r| r.is_metaphorical()).cloned().collect();
    let scores = score_all(scorer, &met, mode)?;
    Ok(met
        .into_iter()
        .zip(scores)
        .filter(|(_, s)| label_for(*s, h).is_metaphorical())
        .map(|(r, _)| r)
        .collect())
}
