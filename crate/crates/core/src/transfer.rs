//! The literal-to-metaphor loop: gate, mask one content word, refill, gate again.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{label_for, EncoderClassifier, Scorer};
use crate::corpus::{Label, TokenizedSentence};
use crate::error::{Error, Result};
use crate::par::{self, ExecutionMode};
use crate::pos::PosTag;
use crate::reconstructor::{mask_positions, Candidate, Reconstruct};
use crate::rng::{item_stream, StreamRng};
use crate::text::{detokenize, normalize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Sampling {
    Greedy,
    /// Draw from the top `k` candidates in proportion to their probabilities.
    TopK { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    pub threshold_h: f64,
    pub pos_filter: BTreeSet<PosTag>,
    pub budget_n: usize,
    pub max_attempts: usize,
    pub seed: u64,
    pub reject_identity: bool,
    /// Extra masks tried on a sentence rejected after reconstruction.
    pub retries: usize,
    pub sampling: Sampling,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            threshold_h: crate::classifier::DEFAULT_THRESHOLD,
            pos_filter: PosTag::CONTENT.into_iter().collect(),
            budget_n: 100,
            max_attempts: 1000,
            seed: 42,
            reject_identity: true,
            retries: 0,
            sampling: Sampling::Greedy,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget_n == 0 {
            return Err(Error::invalid("budget_n must be at least 1"));
        }
        if self.max_attempts < self.budget_n {
            return Err(Error::invalid(format!(
                "max_attempts ({}) must be at least budget_n ({})",
                self.max_attempts, self.budget_n
            )));
        }
        if self.pos_filter.is_empty() {
            return Err(Error::invalid("pos_filter must not be empty"));
        }
        if self.pos_filter.contains(&PosTag::Other) {
            return Err(Error::invalid("pos_filter may only contain NOUN, VERB and ADJ"));
        }
        if !(self.threshold_h > 0.0 && self.threshold_h < 1.0) {
            return Err(Error::invalid("threshold_h must lie strictly between 0 and 1"));
        }
        if let Sampling::TopK { k: 0 } = self.sampling {
            return Err(Error::invalid("top-k sampling needs k ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    NotLiteral,
    NoEligibleToken,
    IdentityReplacement,
    NotMetaphorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    /// Position of the source sentence in the corpus.
    pub source_index: usize,
    pub source_id: String,
    pub source: String,
    pub source_text: String,
    pub masked_index: Option<usize>,
    pub masked_pos: Option<PosTag>,
    pub original_token: Option<String>,
    pub replacement_token: Option<String>,
    pub pre_score: f64,
    pub post_score: Option<f64>,
    pub accepted: bool,
    pub reason: Option<RejectReason>,
    pub transferred_text: Option<String>,
    pub similarity: Option<f64>,
    /// Masks tried, including the final one.
    pub masks_tried: usize,
}

impl TransferRecord {
    /// The accepted output as a labeled sentence for downstream augmentation.
    pub fn to_sentence(&self) -> Option<TokenizedSentence> {
        if !self.accepted {
            return None;
        }
        let mut s = TokenizedSentence::labeled(
            format!("transfer-{}", self.source_id),
            self.transferred_text.clone()?,
            "system",
            Label::Metaphorical,
            self.masked_index,
        );
        if s.tokens.len() <= self.masked_index? {
            s.metaphor_indices.clear();
        }
        Some(s)
    }
}

/// Marker for sentences without a token whose tag passes the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoEligibleToken;

fn eligible(sentence: &TokenizedSentence, pos_filter: &BTreeSet<PosTag>, exclude: &[usize]) -> Vec<usize> {
    match &sentence.pos {
        Some(tags) => tags
            .iter()
            .enumerate()
            .filter(|(i, t)| pos_filter.contains(t) && !exclude.contains(i))
            .map(|(i, _)| i)
            .collect(),
        None => Vec::new(),
    }
}

/// Uniform choice among positions whose tag is in `pos_filter`.
pub fn random_mask<R: Rng>(sentence: &TokenizedSentence, pos_filter: &BTreeSet<PosTag>, rng: &mut R) -> Result<usize, NoEligibleToken> {
    pick(&eligible(sentence, pos_filter, &[]), rng)
}

fn pick<R: Rng>(positions: &[usize], rng: &mut R) -> Result<usize, NoEligibleToken> {
    if positions.is_empty() {
        Err(NoEligibleToken)
    } else {
        Ok(positions[rng.gen_range(0..positions.len())])
    }
}

fn choose(cands: &[Candidate], sampling: Sampling, rng: &mut StreamRng) -> Option<String> {
    match sampling {
        Sampling::Greedy => cands.first().map(|c| c.token.clone()),
        Sampling::TopK { k } => {
            let top = &cands[..cands.len().min(k)];
            let total: f64 = top.iter().map(|c| c.prob.max(0.0)).sum();
            if top.is_empty() {
                return None;
            }
            if total <= 0.0 {
                return Some(top[rng.gen_range(0..top.len())].token.clone());
            }
            let mut u = rng.gen::<f64>() * total;
            for c in top {
                u -= c.prob.max(0.0);
                if u < 0.0 {
                    return Some(c.token.clone());
                }
            }
            top.last().map(|c| c.token.clone())
        }
    }
}

/// Runs both gates on one sentence. The record is returned whether or not
/// the transfer was accepted.
pub fn transfer_one<S, R>(
    sentence: &TokenizedSentence,
    source_index: usize,
    scorer: &S,
    reconstructor: &R,
    config: &TransferConfig,
    rng: &mut StreamRng,
    similarity: Option<&dyn Similarity>,
) -> Result<TransferRecord>
where
    S: Scorer + ?Sized,
    R: Reconstruct + ?Sized,
{
    if sentence.pos.is_none() {
        return Err(Error::invalid(format!("sentence {} is not POS-tagged", sentence.id)));
    }
    let h = config.threshold_h;
    let pre_score = scorer.score(&sentence.tokens)?;
    let mut rec = TransferRecord {
        source_index,
        source_id: sentence.id.clone(),
        source: sentence.source.clone(),
        source_text: sentence.text.clone(),
        masked_index: None,
        masked_pos: None,
        original_token: None,
        replacement_token: None,
        pre_score,
        post_score: None,
        accepted: false,
        reason: None,
        transferred_text: None,
        similarity: None,
        masks_tried: 0,
    };
    if label_for(pre_score, h) != Label::Literal || pre_score == h {
        rec.reason = Some(RejectReason::NotLiteral);
        return Ok(rec);
    }
    let k = match config.sampling {
        Sampling::Greedy => 1,
        Sampling::TopK { k } => k,
    };
    let mut tried = Vec::new();
    for _ in 0..=config.retries {
        let Ok(idx) = pick(&eligible(sentence, &config.pos_filter, &tried), rng) else {
            if tried.is_empty() {
                rec.reason = Some(RejectReason::NoEligibleToken);
            }
            break;
        };
        tried.push(idx);
        rec.masks_tried = tried.len();
        let masked = mask_positions(sentence, &[idx])?;
        let cands = reconstructor.candidates(&masked, k);
        let replacement = cands
            .first()
            .and_then(|c| choose(c, config.sampling, rng))
            .ok_or_else(|| Error::Contract(format!("reconstructor gave no candidate for {}", sentence.id)))?;
        let original = sentence.tokens[idx].clone();
        rec.masked_index = Some(idx);
        rec.masked_pos = sentence.pos_of(idx);
        rec.original_token = Some(original.clone());
        rec.replacement_token = Some(replacement.clone());
        rec.post_score = None;
        rec.transferred_text = None;
        rec.similarity = None;
        if config.reject_identity && normalize(&replacement) == normalize(&original) {
            rec.reason = Some(RejectReason::IdentityReplacement);
            continue;
        }
        let tokens = masked.fill(&[replacement]);
        let post = scorer.score(&tokens)?;
        let text = detokenize(&tokens);
        if let Some(sim) = similarity {
            rec.similarity = Some(sim.similarity(&sentence.tokens, &tokens)?);
        }
        rec.post_score = Some(post);
        rec.transferred_text = Some(text);
        if label_for(post, h).is_metaphorical() {
            rec.accepted = true;
            rec.reason = None;
            break;
        }
        rec.reason = Some(RejectReason::NotMetaphorical);
    }
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub requested: usize,
    pub accepted: usize,
    pub attempts: usize,
    pub shortfall: usize,
    pub corpus_exhausted: bool,
}

/// Lazily yields accepted records until `budget_n` are found or
/// `max_attempts` sentences have been processed.
pub struct TransferStream<'a, S: ?Sized, R: ?Sized> {
    corpus: &'a [TokenizedSentence],
    scorer: &'a S,
    reconstructor: &'a R,
    similarity: Option<&'a dyn Similarity>,
    config: TransferConfig,
    mode: ExecutionMode,
    next_index: usize,
    pending: VecDeque<Result<TransferRecord>>,
    log: Vec<TransferRecord>,
    remaining: usize,
    failed: bool,
}

pub fn transfer_stream<'a, S, R>(
    corpus: &'a [TokenizedSentence],
    scorer: &'a S,
    reconstructor: &'a R,
    config: &TransferConfig,
    mode: ExecutionMode,
    similarity: Option<&'a dyn Similarity>,
) -> Result<TransferStream<'a, S, R>>
where
    S: Scorer + ?Sized,
    R: Reconstruct + ?Sized,
{
    config.validate()?;
    Ok(TransferStream {
        corpus,
        scorer,
        reconstructor,
        similarity,
        config: config.clone(),
        mode,
        next_index: 0,
        pending: VecDeque::new(),
        log: Vec::new(),
        remaining: config.budget_n,
        failed: false,
    })
}

impl<S: Scorer + ?Sized, R: Reconstruct + ?Sized> TransferStream<'_, S, R> {
    /// Every processed record so far, accepted or not, in corpus order.
    pub fn log(&self) -> &[TransferRecord] {
        &self.log
    }

    pub fn into_log(self) -> Vec<TransferRecord> {
        self.log
    }

    pub fn summary(&self) -> StreamSummary {
        let accepted = self.config.budget_n - self.remaining;
        StreamSummary {
            requested: self.config.budget_n,
            accepted,
            attempts: self.log.len(),
            shortfall: self.remaining,
            corpus_exhausted: self.next_index >= self.corpus.len() && self.pending.is_empty(),
        }
    }

    fn refill(&mut self) {
        let limit = self.config.max_attempts.min(self.corpus.len());
        let start = self.next_index;
        let n = par::chunk_hint(self.mode).min(limit.saturating_sub(start));
        if n == 0 {
            return;
        }
        let (corpus, scorer, recon, sim, cfg) = (self.corpus, self.scorer, self.reconstructor, self.similarity, &self.config);
        let batch = par::map_range(self.mode, n, |j| {
            let i = start + j;
            let mut rng = item_stream(cfg.seed, "transfer", i as u64);
            transfer_one(&corpus[i], i, scorer, recon, cfg, &mut rng, sim)
        });
        self.next_index += n;
        self.pending.extend(batch);
    }
}

impl<S: Scorer + ?Sized, R: Reconstruct + ?Sized> Iterator for TransferStream<'_, S, R> {
    type Item = Result<TransferRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        while self.remaining > 0 && !self.failed {
            if self.pending.is_empty() {
                self.refill();
                if self.pending.is_empty() {
                    return None;
                }
            }
            match self.pending.pop_front().expect("non-empty") {
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
                Ok(rec) => {
                    self.log.push(rec.clone());
                    if rec.accepted {
                        self.remaining -= 1;
                        if self.remaining == 0 {
                            self.pending.clear();
                        }
                        return Some(Ok(rec));
                    }
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioCell {
    pub attempts: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    /// source → masked POS → cell; cells with no attempts are absent.
    pub cells: BTreeMap<String, BTreeMap<PosTag, RatioCell>>,
    /// Records that reached the reconstructor.
    pub total_attempts: usize,
    /// Records stopped before masking, by reason.
    pub skipped: BTreeMap<RejectReason, usize>,
}

/// Acceptance ratios per corpus source and masked POS.
pub fn compute_ratios(records: &[TransferRecord]) -> TransferReport {
    let mut cells: BTreeMap<String, BTreeMap<PosTag, RatioCell>> = BTreeMap::new();
    let mut skipped = BTreeMap::new();
    let mut total = 0;
    for r in records {
        match r.masked_pos {
            Some(pos) => {
                total += 1;
                let c = cells.entry(r.source.clone()).or_default().entry(pos).or_default();
                c.attempts += 1;
                if r.accepted {
                    c.accepted += 1;
                } else {
                    c.rejected += 1;
                }
                c.ratio = c.accepted as f64 / c.attempts as f64;
            }
            None => *skipped.entry(r.reason.unwrap_or(RejectReason::NotLiteral)).or_insert(0) += 1,
        }
    }
    TransferReport {
        cells,
        total_attempts: total,
        skipped,
    }
}

/// Source/output similarity in `[0, 1]`.
pub trait Similarity: Send + Sync {
    fn name(&self) -> &str;
    fn similarity(&self, source: &[String], output: &[String]) -> Result<f64>;
}

/// Harmonic mean of token-overlap precision and recall on case-folded tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalF1;

impl Similarity for LexicalF1 {
    fn name(&self) -> &str {
        "lexical-f1"
    }

    fn similarity(&self, source: &[String], output: &[String]) -> Result<f64> {
        if source.is_empty() || output.is_empty() {
            return Err(Error::invalid("similarity needs two non-empty texts"));
        }
        let mut counts: BTreeMap<String, isize> = BTreeMap::new();
        for t in source {
            *counts.entry(normalize(t)).or_default() += 1;
        }
        let mut overlap = 0usize;
        for t in output {
            if let Some(c) = counts.get_mut(&normalize(t)) {
                if *c > 0 {
                    *c -= 1;
                    overlap += 1;
                }
            }
        }
        if overlap == 0 {
            return Ok(0.0);
        }
        let p = overlap as f64 / output.len() as f64;
        let r = overlap as f64 / source.len() as f64;
        Ok(2.0 * p * r / (p + r))
    }
}

/// Cosine of mean contextual embeddings, clipped at 0. Without an encoder
/// it falls back to [`LexicalF1`].
pub struct EmbeddingSimilarity<'a> {
    encoder: Option<&'a EncoderClassifier>,
}

impl<'a> EmbeddingSimilarity<'a> {
    pub fn new(encoder: Option<&'a EncoderClassifier>) -> Self {
        if encoder.is_none() {
            log::warn!("embedding similarity unavailable without an encoder; using lexical F1");
        }
        Self { encoder }
    }
}

impl Similarity for EmbeddingSimilarity<'_> {
    fn name(&self) -> &str {
        if self.encoder.is_some() {
            "embedding-cosine"
        } else {
            "lexical-f1"
        }
    }

    fn similarity(&self, source: &[String], output: &[String]) -> Result<f64> {
        let Some(enc) = self.encoder else {
            return LexicalF1.similarity(source, output);
        };
        if source.is_empty() || output.is_empty() {
            return Err(Error::invalid("similarity needs two non-empty texts"));
        }
        let (a, b) = (enc.embed(source), enc.embed(output));
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return Ok(0.0);
        }
        Ok((dot / (na * nb)).clamp(0.0, 1.0))
    }
}

/// Similarity of two raw texts under `backend`.
pub fn similarity(source_text: &str, transferred_text: &str, backend: &dyn Similarity) -> Result<f64> {
    backend.similarity(&crate::text::tokenize(source_text), &crate::text::tokenize(transferred_text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn tagged(text: &str, tags: &[PosTag]) -> TokenizedSentence {
        let mut s = TokenizedSentence::unlabeled("s", text, "custom");
        s.pos = Some(tags.to_vec());
        s
    }

    #[test]
    fn uniform_mask_frequencies() {
        use PosTag::*;
        let s = tagged("the cat chased bright mice", &[Other, Noun, Verb, Adj, Noun]);
        let filter: BTreeSet<PosTag> = [Noun, Verb].into();
        let mut rng = substream(7, "mask");
        let mut counts = [0usize; 5];
        for _ in 0..30_000 {
            counts[random_mask(&s, &filter, &mut rng).unwrap()] += 1;
        }
        for i in [1, 2, 4] {
            let f = counts[i] as f64 / 30_000.0;
            assert!((f - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
        }
        assert_eq!(counts[0] + counts[3], 0);
    }

    #[test]
    fn mask_edge_cases() {
        use PosTag::*;
        let s = tagged("he ran home", &[Other, Verb, Noun]);
        let mut rng = substream(1, "m");
        assert_eq!(random_mask(&s, &[Verb].into(), &mut rng), Ok(1));
        assert_eq!(random_mask(&s, &[Adj].into(), &mut rng), Err(NoEligibleToken));
    }

    #[test]
    fn lexical_similarity_values() {
        let a: Vec<String> = "a b c d e f g h i j".split(' ').map(String::from).collect();
        let mut b = a.clone();
        assert_eq!(LexicalF1.similarity(&a, &b).unwrap(), 1.0);
        b[4] = "z".into();
        assert!((LexicalF1.similarity(&a, &b).unwrap() - 0.9).abs() < 1e-12);
        let c: Vec<String> = vec!["x".into(), "y".into()];
        assert_eq!(LexicalF1.similarity(&a, &c).unwrap(), 0.0);
        assert!(LexicalF1.similarity(&a, &[]).is_err());
        assert_eq!(EmbeddingSimilarity::new(None).similarity(&a, &b).unwrap(), LexicalF1.similarity(&a, &b).unwrap());
    }

    #[test]
    fn ratio_cells() {
        let mk = |source: &str, pos: Option<PosTag>, accepted: bool| TransferRecord {
            source_index: 0,
            source_id: "x".into(),
            source: source.into(),
            source_text: "t".into(),
            masked_index: pos.map(|_| 0),
            masked_pos: pos,
            original_token: None,
            replacement_token: None,
            pre_score: 0.1,
            post_score: None,
            accepted,
            reason: if pos.is_none() { Some(RejectReason::NotLiteral) } else { None },
            transferred_text: None,
            similarity: None,
            masks_tried: 1,
        };
        let mut recs: Vec<_> = (0..10).map(|i| mk("poetry", Some(PosTag::Verb), i < 4)).collect();
        recs.push(mk("poetry", None, false));
        recs.push(mk("music", Some(PosTag::Noun), false));
        let r = compute_ratios(&recs);
        assert_eq!(r.cells["poetry"][&PosTag::Verb].ratio, 0.4);
        assert!(!r.cells["poetry"].contains_key(&PosTag::Adj));
        assert_eq!(r.cells["music"][&PosTag::Noun].ratio, 0.0);
        assert_eq!(r.total_attempts, 11);
        assert_eq!(r.skipped[&RejectReason::NotLiteral], 1);
    }

    #[test]
    fn config_checks() {
        let mut c = TransferConfig::default();
        c.validate().unwrap();
        c.max_attempts = c.budget_n - 1;
        assert!(c.validate().is_err());
        let c = TransferConfig {
            pos_filter: BTreeSet::new(),
            ..TransferConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
