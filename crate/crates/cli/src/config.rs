use std::path::{Path, PathBuf};

use metaphor_core::classifier::{Backend, ClassifierConfig, EncoderSpec, FeatureSpec};
use metaphor_core::corpus::{DatasetName, SplitRatios};
use metaphor_core::locator::LocatorConfig;
use metaphor_core::par::ExecutionMode;
use metaphor_core::reconstructor::ReconstructorConfig;
use metaphor_core::transfer::TransferConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::usage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Propagated to every seeded component.
    pub seed: u64,
    /// Abort on the first malformed row instead of skipping it.
    pub strict: bool,
    pub execution: ExecutionMode,
    pub paths: Paths,
    pub ingest: IngestSection,
    pub classifier: ClassifierConfig,
    pub reconstructor: ReconstructorConfig,
    pub transfer: TransferSection,
    pub locator: LocatorSection,
    pub augment: AugmentSection,
    pub eval: EvalSection,
    pub serve: ServeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            strict: false,
            execution: ExecutionMode::Parallel,
            paths: Paths::default(),
            ingest: IngestSection::default(),
            classifier: ClassifierConfig::new(Backend::LogisticRegression),
            reconstructor: ReconstructorConfig::default(),
            transfer: TransferSection::default(),
            locator: LocatorSection::default(),
            augment: AugmentSection::default(),
            eval: EvalSection::default(),
            serve: ServeSection::default(),
        }
    }
}

/// Inputs and the output directory. Classifier and reconstructor entries are
/// model directories or `mock:` specs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub classifier: Option<String>,
    pub reconstructor: Option<String>,
    pub transfers: Option<PathBuf>,
    pub attempts: Option<PathBuf>,
    pub packet_dir: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub model_root: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub dataset: Option<DatasetName>,
    /// Raw dataset file (CSV for the benchmarks, JSON lines for `custom`).
    pub input: Option<PathBuf>,
    pub ratios: SplitRatios,
    /// Plain-text literal corpus, one sentence per line.
    pub plaintext: Option<PathBuf>,
    pub source: String,
    pub wikipedia_topics: Vec<String>,
    pub wikipedia_per_topic: usize,
    pub wikipedia_endpoint: String,
    pub cache_dir: Option<PathBuf>,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            dataset: None,
            input: None,
            ratios: SplitRatios::default(),
            plaintext: None,
            source: "gutenberg".into(),
            wikipedia_topics: Vec::new(),
            wikipedia_per_topic: 100,
            wikipedia_endpoint: "https://en.wikipedia.org/w/api.php".into(),
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityKind {
    #[default]
    None,
    Lexical,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferSection {
    #[serde(flatten)]
    pub config: TransferConfig,
    pub similarity: SimilarityKind,
}

impl Default for TransferSection {
    fn default() -> Self {
        Self {
            config: TransferConfig::default(),
            similarity: SimilarityKind::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocatorSection {
    #[serde(flatten)]
    pub config: LocatorConfig,
    pub split: String,
    /// Heatmaps written for the first N evaluated sentences.
    pub heatmaps: usize,
}

impl Default for LocatorSection {
    fn default() -> Self {
        Self {
            config: LocatorConfig::default(),
            split: "test".into(),
            heatmaps: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub k_per_class: usize,
    pub eval_split: String,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self {
            k_per_class: 214,
            eval_split: "test".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub packet_id: String,
    pub per_origin: usize,
    pub human_split: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            packet_id: "packet".into(),
            per_origin: 100,
            human_split: "test".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub addr: String,
    /// Origins allowed to call the API from a browser; empty allows any.
    pub allowed_origins: Vec<String>,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            allowed_origins: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&raw).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.rebase(base);
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut().filter(|x| x.is_relative()) {
                *x = base.join(&*x);
            }
        };
        let fix_spec = |s: &mut Option<String>| {
            if let Some(x) = s.as_mut().filter(|x| !x.starts_with("mock:") && Path::new(x.as_str()).is_relative()) {
                *x = base.join(&*x).to_string_lossy().into_owned();
            }
        };
        let p = &mut self.paths;
        for x in [
            &mut p.dataset,
            &mut p.corpus,
            &mut p.transfers,
            &mut p.attempts,
            &mut p.packet_dir,
            &mut p.scores,
            &mut p.model_root,
            &mut p.out,
        ] {
            fix(x);
        }
        fix_spec(&mut p.classifier);
        fix_spec(&mut p.reconstructor);
        fix(&mut self.ingest.input);
        fix(&mut self.ingest.plaintext);
        fix(&mut self.ingest.cache_dir);
    }

    /// Pushes the global seed into every seeded section and fills in the
    /// backend spec a partially written classifier section left out.
    pub fn normalize(&mut self) {
        let seed = self.seed;
        let c = &mut self.classifier;
        c.seed = seed;
        if c.backend.is_feature_based() {
            c.encoder_spec = None;
            c.feature_spec.get_or_insert_with(FeatureSpec::default);
        } else {
            c.feature_spec = None;
            let spec = c.encoder_spec.get_or_insert_with(EncoderSpec::default);
            spec.seed = seed;
            if spec.model_root.is_none() {
                spec.model_root.clone_from(&self.paths.model_root);
            }
        }
        self.reconstructor.seed = seed;
        if self.reconstructor.model_root.is_none() {
            self.reconstructor.model_root.clone_from(&self.paths.model_root);
        }
        self.transfer.config.seed = seed;
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.classifier.validate()?;
        self.transfer.config.validate()?;
        if self.augment.k_per_class == 0 || self.eval.per_origin == 0 {
            return Err(usage("augment.k_per_class and eval.per_origin must be positive"));
        }
        if self.eval.packet_id.is_empty() || self.eval.packet_id.contains(['/', '\\']) {
            return Err(usage(format!("invalid packet id `{}`", self.eval.packet_id)));
        }
        Ok(())
    }

    pub fn mode(&self) -> ExecutionMode {
        self.execution
    }

    /// Digest of everything that shapes an artifact: the subcommand, the
    /// effective config without locations, and the digests of the inputs.
    pub fn manifest_hash(&self, subcommand: &str, inputs: &[(String, String)]) -> String {
        let mut shape = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = shape.as_object_mut() {
            obj.remove("paths");
            obj.remove("serve");
            obj.remove("execution");
        }
        let doc = serde_json::json!({
            "subcommand": subcommand,
            "config": shape,
            "inputs": inputs,
        });
        hex(&Sha256::digest(serde_json::to_vec(&doc).expect("json")))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
