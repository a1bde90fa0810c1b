//! Masked Metaphor Modeling: mask the tagged metaphor tokens and restore them.

mod neural;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Slot, TokenizedSentence};
use crate::error::{Error, Result};
use crate::par::{self, ExecutionMode};
use crate::pos::PosTag;
use crate::text::{crude_stem, detokenize, normalize};

pub use neural::{
    train_reconstructor, ReconstructorBackend, ReconstructorConfig, ReconstructorManifest, TrainedReconstructor,
};

/// Placeholder written at masked word positions.
pub const MASK_TOKEN: &str = "[MASK]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedSentence {
    pub tokens: Vec<String>,
    pub masked_positions: Vec<usize>,
    pub gold_tokens: Vec<String>,
    pub origin: String,
}

impl MaskedSentence {
    pub fn validate(&self) -> Result<()> {
        if self.masked_positions.is_empty() {
            return Err(Error::invalid(format!("{}: no masked positions", self.origin)));
        }
        if self.masked_positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("{}: masked positions must be sorted and distinct", self.origin)));
        }
        if self.gold_tokens.len() != self.masked_positions.len() {
            return Err(Error::invalid(format!("{}: gold tokens do not match masked positions", self.origin)));
        }
        for &p in &self.masked_positions {
            match self.tokens.get(p) {
                Some(t) if t == MASK_TOKEN => {}
                Some(_) => {
                    return Err(Error::invalid(format!("{}: mask sentinel absent at position {p}", self.origin)))
                }
                None => return Err(Error::invalid(format!("{}: masked position {p} out of range", self.origin))),
            }
        }
        Ok(())
    }

    /// Substitutes one token per masked position.
    pub fn fill<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        let mut out = self.tokens.clone();
        for (&p, t) in self.masked_positions.iter().zip(tokens) {
            out[p] = t.as_ref().to_string();
        }
        out
    }
}

/// Masks `positions` of `sentence`, keeping the original tokens as gold.
pub fn mask_positions(sentence: &TokenizedSentence, positions: &[usize]) -> Result<MaskedSentence> {
    let mut positions = positions.to_vec();
    positions.sort_unstable();
    positions.dedup();
    if positions.is_empty() {
        return Err(Error::invalid(format!("sentence {}: nothing to mask", sentence.id)));
    }
    if let Some(&p) = positions.iter().find(|&&p| p >= sentence.tokens.len()) {
        return Err(Error::invalid(format!("sentence {}: position {p} out of range", sentence.id)));
    }
    let mut tokens = sentence.tokens.clone();
    let gold_tokens = positions
        .iter()
        .map(|&p| std::mem::replace(&mut tokens[p], MASK_TOKEN.to_string()))
        .collect();
    Ok(MaskedSentence {
        tokens,
        masked_positions: positions,
        gold_tokens,
        origin: sentence.id.clone(),
    })
}

/// Masks exactly the sentence's metaphor indices.
pub fn mask_metaphor(sentence: &TokenizedSentence) -> Result<MaskedSentence> {
    if sentence.metaphor_indices.is_empty() {
        return Err(Error::invalid(format!("sentence {} has no metaphor indices to mask", sentence.id)));
    }
    mask_positions(sentence, &sentence.metaphor_indices)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: String,
    /// Model probability of the candidate's first subword.
    pub prob: f64,
}

/// A fill-in model: ranked candidates for every masked position.
pub trait Reconstruct: Send + Sync {
    /// Up to `k` candidates per masked position, best first, greedy and deterministic.
    fn candidates(&self, masked: &MaskedSentence, k: usize) -> Vec<Vec<Candidate>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub predictions: Vec<String>,
    pub alternatives: Vec<Vec<String>>,
    pub exact_match: Vec<bool>,
    pub reconstructed_tokens: Vec<String>,
    pub reconstructed_text: String,
}

pub fn is_exact_match(predicted: &str, gold: &str) -> bool {
    normalize(predicted) == normalize(gold)
}

pub fn is_lemma_match(predicted: &str, gold: &str) -> bool {
    let (p, g) = (normalize(predicted), normalize(gold));
    !p.contains(' ') && crude_stem(&p) == crude_stem(&g)
}

/// Top-1 fill plus up to `k - 1` alternatives per position.
pub fn reconstruct<R: Reconstruct + ?Sized>(model: &R, masked: &MaskedSentence, k: usize) -> Result<ReconstructionResult> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    masked.validate()?;
    let cands = model.candidates(masked, k);
    if cands.len() != masked.masked_positions.len() || cands.iter().any(Vec::is_empty) {
        return Err(Error::Contract(format!(
            "{}: reconstructor returned no candidate for some masked position",
            masked.origin
        )));
    }
    let predictions: Vec<String> = cands.iter().map(|c| c[0].token.clone()).collect();
    let alternatives = cands
        .iter()
        .map(|c| c.iter().skip(1).take(k - 1).map(|x| x.token.clone()).collect())
        .collect();
    let exact_match = predictions
        .iter()
        .zip(&masked.gold_tokens)
        .map(|(p, g)| is_exact_match(p, g))
        .collect();
    let reconstructed_tokens = masked.fill(&predictions);
    Ok(ReconstructionResult {
        predictions,
        alternatives,
        exact_match,
        reconstructed_text: detokenize(&reconstructed_tokens),
        reconstructed_tokens,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub evaluated: usize,
    pub matched: usize,
    pub accuracy: f64,
}

impl Cell {
    fn add(&mut self, ok: bool) {
        self.evaluated += 1;
        self.matched += usize::from(ok);
        self.accuracy = self.matched as f64 / self.evaluated as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub evaluated: usize,
    pub matched: usize,
    pub accuracy_overall: f64,
    /// Keyed by the gold token's tag; tags never evaluated are absent.
    pub accuracy_by_pos: BTreeMap<PosTag, Cell>,
    /// Present only for slot-annotated data.
    pub accuracy_by_slot: BTreeMap<Slot, Cell>,
    /// Secondary statistic: match after light stemming.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lemma_accuracy: Option<f64>,
}

/// Masks every metaphor index of each sentence jointly and scores the top-1 fills.
pub fn evaluate_reconstruction<R: Reconstruct + ?Sized>(
    model: &R,
    sentences: &[TokenizedSentence],
    with_lemma: bool,
    mode: ExecutionMode,
) -> Result<ReconstructionReport> {
    if sentences.is_empty() {
        return Err(Error::invalid("no sentences to evaluate"));
    }
    for s in sentences {
        if s.pos.is_none() {
            return Err(Error::invalid(format!("sentence {} has no POS tags", s.id)));
        }
    }
    let results = par::map(mode, sentences, |_, s| {
        let masked = mask_metaphor(s)?;
        let r = reconstruct(model, &masked, 1)?;
        Ok::<_, Error>((masked, r))
    });
    let mut overall = Cell::default();
    let mut lemma = Cell::default();
    let mut by_pos: BTreeMap<PosTag, Cell> = BTreeMap::new();
    let mut by_slot: BTreeMap<Slot, Cell> = BTreeMap::new();
    for (s, res) in sentences.iter().zip(results) {
        let (masked, r) = res?;
        for (i, &p) in masked.masked_positions.iter().enumerate() {
            let ok = r.exact_match[i];
            overall.add(ok);
            if with_lemma {
                lemma.add(is_lemma_match(&r.predictions[i], &masked.gold_tokens[i]));
            }
            by_pos.entry(s.pos_of(p).expect("checked above")).or_default().add(ok);
            if let Some(slot) = s.slot_of(p) {
                by_slot.entry(slot).or_default().add(ok);
            }
        }
    }
    Ok(ReconstructionReport {
        evaluated: overall.evaluated,
        matched: overall.matched,
        accuracy_overall: overall.accuracy,
        accuracy_by_pos: by_pos,
        accuracy_by_slot: by_slot,
        lemma_accuracy: with_lemma.then_some(lemma.accuracy),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    struct Fixed(Vec<&'static str>);

    impl Reconstruct for Fixed {
        fn candidates(&self, masked: &MaskedSentence, k: usize) -> Vec<Vec<Candidate>> {
            masked
                .masked_positions
                .iter()
                .map(|_| {
                    self.0
                        .iter()
                        .take(k)
                        .map(|t| Candidate { token: t.to_string(), prob: 1.0 })
                        .collect()
                })
                .collect()
        }
    }

    #[test]
    fn marched_example() {
        let s = TokenizedSentence::labeled("x", "He marched into the classroom", "custom", Label::Metaphorical, [1]);
        let m = mask_metaphor(&s).unwrap();
        assert_eq!(m.tokens[1], MASK_TOKEN);
        assert_eq!(m.gold_tokens, ["marched"]);
        assert_eq!(m.fill(&m.gold_tokens), s.tokens);
    }

    #[test]
    fn all_tokens_masked_is_valid() {
        let s = TokenizedSentence::labeled("x", "fire ate", "custom", Label::Metaphorical, [0, 1]);
        let m = mask_metaphor(&s).unwrap();
        assert!(m.tokens.iter().all(|t| t == MASK_TOKEN));
        m.validate().unwrap();
    }

    #[test]
    fn empty_indices_rejected() {
        let s = TokenizedSentence::labeled("x", "plain words", "custom", Label::Literal, []);
        assert!(mask_metaphor(&s).is_err());
    }

    #[test]
    fn k_controls_alternatives_and_sentinel_is_checked() {
        let s = TokenizedSentence::labeled("x", "The scream pierced the night", "custom", Label::Metaphorical, [1, 2]);
        let m = mask_metaphor(&s).unwrap();
        let model = Fixed(vec!["Pierced", "cut", "split"]);
        let r = reconstruct(&model, &m, 1).unwrap();
        assert!(r.alternatives.iter().all(Vec::is_empty));
        assert_eq!(r.predictions.len(), 2);
        assert_eq!(r.exact_match, vec![false, true]);
        assert_eq!(r.reconstructed_tokens.len(), s.tokens.len());
        let r3 = reconstruct(&model, &m, 3).unwrap();
        assert_eq!(r3.alternatives[0], ["cut", "split"]);
        let mut broken = m.clone();
        broken.tokens[1] = "scream".into();
        assert!(reconstruct(&model, &broken, 1).is_err());
    }

    #[test]
    fn lemma_match_is_looser() {
        assert!(!is_exact_match("pierce", "pierced"));
        assert!(is_lemma_match("pierce", "pierced"));
        assert!(!is_lemma_match("pierce the", "pierced"));
    }
}
