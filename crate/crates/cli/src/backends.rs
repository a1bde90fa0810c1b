//! Model handles built from a directory or a `mock:` spec.
//!
//! Scorer specs: `mock:marker:w1,w2`, `mock:constant:0.3`, `mock:uniform:L,H`.
//! Reconstructor specs: `mock:constant:word`, `mock:oracle`.

use std::path::Path;

use metaphor_core::classifier::{Scorer, TrainedClassifier};
use metaphor_core::locator::{AttentionMap, AttentionSource};
use metaphor_core::mock::{ConstantReconstructor, ConstantScorer, MarkerScorer, OracleReconstructor, UniformAttention};
use metaphor_core::reconstructor::{Candidate, MaskedSentence, Reconstruct, TrainedReconstructor};

use crate::error::usage;

pub enum ScorerHandle {
    Trained(Box<TrainedClassifier>),
    Marker(MarkerScorer),
    Constant(ConstantScorer),
    Uniform(UniformAttention),
}

impl ScorerHandle {
    pub fn open(spec: &str) -> anyhow::Result<Self> {
        let Some(mock) = spec.strip_prefix("mock:") else {
            return Ok(Self::Trained(Box::new(TrainedClassifier::load(Path::new(spec))?)));
        };
        let (kind, arg) = mock.split_once(':').unwrap_or((mock, ""));
        match kind {
            "marker" => {
                let words: Vec<&str> = arg.split(',').filter(|w| !w.is_empty()).collect();
                if words.is_empty() {
                    return Err(usage("mock:marker needs at least one marker word"));
                }
                Ok(Self::Marker(MarkerScorer::new(words)))
            }
            "constant" => {
                let v: f64 = arg.parse().map_err(|_| usage(format!("mock:constant needs a score, got `{arg}`")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(usage("mock:constant score must lie in [0, 1]"));
                }
                Ok(Self::Constant(ConstantScorer(v)))
            }
            "uniform" => {
                let dims: Vec<usize> = arg.split(',').filter_map(|x| x.parse().ok()).collect();
                let [layers, heads] = dims[..] else {
                    return Err(usage("mock:uniform needs `layers,heads`"));
                };
                Ok(Self::Uniform(UniformAttention { layers, heads, score: 0.9 }))
            }
            other => Err(usage(format!("unknown mock scorer `{other}`"))),
        }
    }

    pub fn trained(&self) -> Option<&TrainedClassifier> {
        match self {
            Self::Trained(c) => Some(c),
            _ => None,
        }
    }

    /// Threshold the model was trained with; mocks use the configured one.
    pub fn threshold(&self, fallback: f64) -> f64 {
        self.trained().map_or(fallback, |c| c.threshold())
    }
}

impl Scorer for ScorerHandle {
    fn score_tokens(&self, tokens: &[String]) -> f64 {
        match self {
            Self::Trained(c) => c.score_tokens(tokens),
            Self::Marker(m) => m.score_tokens(tokens),
            Self::Constant(c) => c.score_tokens(tokens),
            Self::Uniform(u) => u.score_tokens(tokens),
        }
    }
}

impl AttentionSource for ScorerHandle {
    fn attention_dims(&self) -> Option<(usize, usize)> {
        match self {
            Self::Trained(c) => c.attention_dims(),
            Self::Uniform(u) => u.attention_dims(),
            _ => None,
        }
    }

    fn attention_for(&self, tokens: &[String]) -> metaphor_core::Result<AttentionMap> {
        match self {
            Self::Trained(c) => c.attention_for(tokens),
            Self::Uniform(u) => u.attention_for(tokens),
            _ => Err(metaphor_core::Error::UnsupportedBackend("mock".into())),
        }
    }
}

pub enum ReconstructorHandle {
    Trained(Box<TrainedReconstructor>),
    Constant(ConstantReconstructor),
    Oracle,
}

impl ReconstructorHandle {
    pub fn open(spec: &str) -> anyhow::Result<Self> {
        let Some(mock) = spec.strip_prefix("mock:") else {
            return Ok(Self::Trained(Box::new(TrainedReconstructor::load(Path::new(spec))?)));
        };
        match mock.split_once(':').unwrap_or((mock, "")) {
            ("constant", w) if !w.is_empty() => Ok(Self::Constant(ConstantReconstructor(w.into()))),
            ("oracle", _) => Ok(Self::Oracle),
            (other, _) => Err(usage(format!("unknown mock reconstructor `{other}`"))),
        }
    }
}

impl Reconstruct for ReconstructorHandle {
    fn candidates(&self, masked: &MaskedSentence, k: usize) -> Vec<Vec<Candidate>> {
        match self {
            Self::Trained(r) => r.candidates(masked, k),
            Self::Constant(c) => c.candidates(masked, k),
            Self::Oracle => OracleReconstructor.candidates(masked, k),
        }
    }
}
