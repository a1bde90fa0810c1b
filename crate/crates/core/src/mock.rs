//! Deterministic stand-ins for classifiers, reconstructors and attention.

use std::collections::BTreeSet;

use crate::classifier::Scorer;
use crate::error::{Error, Result};
use crate::locator::{AttentionMap, AttentionSource};
use crate::reconstructor::{Candidate, MaskedSentence, Reconstruct};
use crate::text::normalize;

/// Scores `hit` when any marker word occurs, `miss` otherwise.
#[derive(Debug, Clone)]
pub struct MarkerScorer {
    markers: BTreeSet<String>,
    pub hit: f64,
    pub miss: f64,
}

impl MarkerScorer {
    pub fn new<S: AsRef<str>>(markers: impl IntoIterator<Item = S>) -> Self {
        Self {
            markers: markers.into_iter().map(|m| normalize(m.as_ref())).collect(),
            hit: 0.95,
            miss: 0.05,
        }
    }
}

impl Scorer for MarkerScorer {
    fn score_tokens(&self, tokens: &[String]) -> f64 {
        if tokens.iter().any(|t| self.markers.contains(&normalize(t))) {
            self.hit
        } else {
            self.miss
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn score_tokens(&self, _: &[String]) -> f64 {
        self.0
    }
}

pub struct FnScorer<F>(pub F);

impl<F: Fn(&[String]) -> f64 + Send + Sync> Scorer for FnScorer<F> {
    fn score_tokens(&self, tokens: &[String]) -> f64 {
        (self.0)(tokens)
    }
}

/// Fills every mask with the same token.
#[derive(Debug, Clone)]
pub struct ConstantReconstructor(pub String);

impl Reconstruct for ConstantReconstructor {
    fn candidates(&self, masked: &MaskedSentence, _k: usize) -> Vec<Vec<Candidate>> {
        masked
            .masked_positions
            .iter()
            .map(|_| {
                vec![Candidate {
                    token: self.0.clone(),
                    prob: 1.0,
                }]
            })
            .collect()
    }
}

/// Restores the gold tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleReconstructor;

impl Reconstruct for OracleReconstructor {
    fn candidates(&self, masked: &MaskedSentence, _k: usize) -> Vec<Vec<Candidate>> {
        masked
            .gold_tokens
            .iter()
            .map(|g| {
                vec![Candidate {
                    token: g.clone(),
                    prob: 1.0,
                }]
            })
            .collect()
    }
}

/// Ranked candidates from a fixed list, the same for every position.
#[derive(Debug, Clone)]
pub struct ListReconstructor(pub Vec<Candidate>);

impl Reconstruct for ListReconstructor {
    fn candidates(&self, masked: &MaskedSentence, k: usize) -> Vec<Vec<Candidate>> {
        masked
            .masked_positions
            .iter()
            .map(|_| self.0.iter().take(k).cloned().collect())
            .collect()
    }
}

/// One word per token, framed by two special positions.
fn framed(n: usize) -> Vec<Option<usize>> {
    std::iter::once(None)
        .chain((0..n).map(Some))
        .chain(std::iter::once(None))
        .collect()
}

fn fill(layers: usize, heads: usize, row: Vec<f64>) -> Vec<Vec<Vec<f64>>> {
    vec![vec![row; heads]; layers]
}

/// Classifier stub with fixed score and one-hot attention on the word `pick` chooses.
pub struct OneHotAttention<F> {
    pub layers: usize,
    pub heads: usize,
    pub score: f64,
    pub pick: F,
}

impl<F: Fn(&[String]) -> usize + Send + Sync> Scorer for OneHotAttention<F> {
    fn score_tokens(&self, _: &[String]) -> f64 {
        self.score
    }
}

impl<F: Fn(&[String]) -> usize + Send + Sync> AttentionSource for OneHotAttention<F> {
    fn attention_dims(&self) -> Option<(usize, usize)> {
        Some((self.layers, self.heads))
    }

    fn attention_for(&self, tokens: &[String]) -> Result<AttentionMap> {
        let w = (self.pick)(tokens);
        if w >= tokens.len() {
            return Err(Error::invalid("stub picked a word outside the sentence"));
        }
        let mut row = vec![0.0; tokens.len() + 2];
        row[w + 1] = 1.0;
        Ok(AttentionMap {
            rows: fill(self.layers, self.heads, row),
            subword_to_word: framed(tokens.len()),
        })
    }
}

/// Classifier stub with fixed score and uniform attention.
#[derive(Debug, Clone, Copy)]
pub struct UniformAttention {
    pub layers: usize,
    pub heads: usize,
    pub score: f64,
}

impl Scorer for UniformAttention {
    fn score_tokens(&self, _: &[String]) -> f64 {
        self.score
    }
}

impl AttentionSource for UniformAttention {
    fn attention_dims(&self) -> Option<(usize, usize)> {
        Some((self.layers, self.heads))
    }

    fn attention_for(&self, tokens: &[String]) -> Result<AttentionMap> {
        let n = tokens.len() + 2;
        Ok(AttentionMap {
            rows: fill(self.layers, self.heads, vec![1.0 / n as f64; n]),
            subword_to_word: framed(tokens.len()),
        })
    }
}
