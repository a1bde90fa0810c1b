//! Metaphor location from the aggregate-position attention row of one layer and head.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::{true_positives, EncoderClassifier, Scorer, TrainedClassifier};
use crate::corpus::TokenizedSentence;
use crate::error::{Error, Result};
use crate::par::{self, ExecutionMode};

const ROW_TOLERANCE: f64 = 1e-4;

/// Attention of the aggregate position, `rows[layer][head][subword]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub rows: Vec<Vec<Vec<f64>>>,
    /// Word index of every subword; `None` for special positions.
    pub subword_to_word: Vec<Option<usize>>,
}

impl AttentionMap {
    pub fn layers(&self) -> usize {
        self.rows.len()
    }

    pub fn heads(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn words(&self) -> usize {
        self.subword_to_word.iter().flatten().max().map_or(0, |w| w + 1)
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.subword_to_word.len();
        if self.rows.is_empty() || self.heads() == 0 {
            return Err(Error::invalid("attention map has no layers or heads"));
        }
        for layer in &self.rows {
            if layer.len() != self.heads() || layer.iter().any(|r| r.len() != n) {
                return Err(Error::invalid("attention map rows do not match the subword alignment"));
            }
        }
        let words = self.words();
        if words == 0 {
            return Err(Error::invalid("attention map covers no words"));
        }
        let mut seen = vec![false; words];
        for w in self.subword_to_word.iter().flatten() {
            seen[*w] = true;
        }
        if seen.contains(&false) {
            return Err(Error::invalid("some word has no subword in the attention map"));
        }
        Ok(())
    }

    /// Shape checks plus nonnegative rows summing to 1.
    pub fn validate(&self) -> Result<()> {
        self.check_shape()?;
        for (l, layer) in self.rows.iter().enumerate() {
            for (h, row) in layer.iter().enumerate() {
                if row.iter().any(|&x| x.is_nan() || x < 0.0) {
                    return Err(Error::invalid(format!("layer {} head {}: negative attention", l + 1, h + 1)));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > ROW_TOLERANCE {
                    return Err(Error::invalid(format!("layer {} head {}: row sums to {s}", l + 1, h + 1)));
                }
            }
        }
        Ok(())
    }
}

/// Models whose attention can be inspected.
pub trait AttentionSource: Send + Sync {
    /// `(layers, heads)` the source exposes, or `None` when it has no attention.
    fn attention_dims(&self) -> Option<(usize, usize)>;

    fn attention_for(&self, tokens: &[String]) -> Result<AttentionMap>;
}

impl AttentionSource for EncoderClassifier {
    fn attention_dims(&self) -> Option<(usize, usize)> {
        Some((self.config.num_hidden_layers, self.config.num_attention_heads))
    }

    fn attention_for(&self, tokens: &[String]) -> Result<AttentionMap> {
        if tokens.is_empty() {
            return Err(Error::invalid("cannot attend over an empty sentence"));
        }
        let (att, enc) = self.attention(tokens);
        let rows = att
            .iter()
            .map(|layer| layer.iter().map(|a| a.row(0).to_vec()).collect())
            .collect();
        Ok(AttentionMap {
            rows,
            subword_to_word: enc.word_of,
        })
    }
}

impl AttentionSource for TrainedClassifier {
    fn attention_dims(&self) -> Option<(usize, usize)> {
        self.encoder().and_then(AttentionSource::attention_dims)
    }

    fn attention_for(&self, tokens: &[String]) -> Result<AttentionMap> {
        match self.encoder() {
            Some(e) => e.attention_for(tokens),
            None => Err(Error::UnsupportedBackend(self.backend().to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sum,
    Max,
}

/// Layer and head are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocatorConfig {
    pub layer: usize,
    pub head: usize,
    pub aggregation: Aggregation,
}

impl Default for LocatorConfig {
    fn default() -> Self {
        Self {
            layer: 5,
            head: 11,
            aggregation: Aggregation::Sum,
        }
    }
}

impl LocatorConfig {
    pub fn check_range(&self, layers: usize, heads: usize) -> Result<()> {
        if self.layer == 0 || self.layer > layers || self.head == 0 || self.head > heads {
            return Err(Error::invalid(format!(
                "layer {} / head {} outside the available 1..={layers} / 1..={heads}",
                self.layer, self.head
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationResult {
    /// 0-based word position.
    pub predicted_index: usize,
    pub gold_indices: Vec<usize>,
    pub correct: bool,
    pub word_scores: Vec<f64>,
}

/// Per-word attention mass; special positions are skipped.
pub fn word_scores(map: &AttentionMap, config: &LocatorConfig) -> Result<Vec<f64>> {
    map.check_shape()?;
    config.check_range(map.layers(), map.heads())?;
    let row = &map.rows[config.layer - 1][config.head - 1];
    let mut scores = vec![f64::NAN; map.words()];
    for (&a, w) in row.iter().zip(&map.subword_to_word) {
        let Some(w) = *w else { continue };
        let s = &mut scores[w];
        *s = match (config.aggregation, s.is_nan()) {
            (_, true) => a,
            (Aggregation::Sum, false) => *s + a,
            (Aggregation::Max, false) => s.max(a),
        };
    }
    Ok(scores)
}

/// First index of the maximum.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn locate(map: &AttentionMap, config: &LocatorConfig, gold_indices: &[usize]) -> Result<LocationResult> {
    let scores = word_scores(map, config)?;
    let predicted_index = argmax(&scores);
    Ok(LocationResult {
        predicted_index,
        gold_indices: gold_indices.to_vec(),
        correct: gold_indices.contains(&predicted_index),
        word_scores: scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceLocation {
    pub id: String,
    #[serde(flatten)]
    pub result: LocationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationReport {
    pub config: LocatorConfig,
    /// Number of classifier true positives evaluated.
    pub evaluated: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub sentences: Vec<SentenceLocation>,
}

fn maps_for<M>(model: &M, records: &[TokenizedSentence], h: f64, mode: ExecutionMode) -> Result<Option<(Vec<TokenizedSentence>, Vec<AttentionMap>)>>
where
    M: Scorer + AttentionSource + ?Sized,
{
    if model.attention_dims().is_none() {
        return Err(Error::UnsupportedBackend("feature-based classifier".into()));
    }
    if let Some(r) = records.iter().find(|r| r.is_metaphorical() && r.metaphor_indices.is_empty()) {
        return Err(Error::invalid(format!("record {} has no metaphor indices", r.id)));
    }
    let tp = true_positives(model, records, h, mode)?;
    if tp.is_empty() {
        log::warn!("no true positives; location accuracy is undefined");
        return Ok(None);
    }
    let maps = par::map(mode, &tp, |_, s| model.attention_for(&s.tokens))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Some((tp, maps)))
}

/// Location accuracy over the records the classifier gets right as metaphorical.
/// `None` when there are no true positives.
pub fn evaluate_location<M>(
    model: &M,
    records: &[TokenizedSentence],
    h: f64,
    config: &LocatorConfig,
    mode: ExecutionMode,
) -> Result<Option<LocationReport>>
where
    M: Scorer + AttentionSource + ?Sized,
{
    if let Some((l, hd)) = model.attention_dims() {
        config.check_range(l, hd)?;
    }
    let Some((tp, maps)) = maps_for(model, records, h, mode)? else {
        return Ok(None);
    };
    let mut sentences = Vec::with_capacity(tp.len());
    for (s, m) in tp.iter().zip(&maps) {
        sentences.push(SentenceLocation {
            id: s.id.clone(),
            result: locate(m, config, &s.metaphor_indices)?,
        });
    }
    let correct = sentences.iter().filter(|s| s.result.correct).count();
    Ok(Some(LocationReport {
        config: *config,
        evaluated: sentences.len(),
        correct,
        accuracy: correct as f64 / sentences.len() as f64,
        sentences,
    }))
}

/// Location accuracy for every layer/head pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub aggregation: Aggregation,
    pub evaluated: usize,
    /// `accuracy[layer - 1][head - 1]`.
    pub accuracy: Vec<Vec<f64>>,
    pub best_layer: usize,
    pub best_head: usize,
    pub best_accuracy: f64,
}

impl SweepGrid {
    /// Layers as rows, heads as columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer");
        for h in 1..=self.accuracy.first().map_or(0, Vec::len) {
            let _ = write!(out, ",head_{h}");
        }
        out.push('\n');
        for (l, row) in self.accuracy.iter().enumerate() {
            let _ = write!(out, "{}", l + 1);
            for a in row {
                let _ = write!(out, ",{a:.6}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn sweep_attention<M>(
    model: &M,
    records: &[TokenizedSentence],
    h: f64,
    aggregation: Aggregation,
    mode: ExecutionMode,
) -> Result<Option<SweepGrid>>
where
    M: Scorer + AttentionSource + ?Sized,
{
    let Some((tp, maps)) = maps_for(model, records, h, mode)? else {
        return Ok(None);
    };
    let (layers, heads) = (maps[0].layers(), maps[0].heads());
    let cells = par::map_range(mode, layers * heads, |c| {
        let config = LocatorConfig {
            layer: c / heads + 1,
            head: c % heads + 1,
            aggregation,
        };
        let mut hits = 0usize;
        for (s, m) in tp.iter().zip(&maps) {
            hits += usize::from(locate(m, &config, &s.metaphor_indices)?.correct);
        }
        Ok::<_, Error>(hits as f64 / tp.len() as f64)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let best = argmax(&cells);
    Ok(Some(SweepGrid {
        aggregation,
        evaluated: tp.len(),
        accuracy: cells.chunks(heads).map(<[f64]>::to_vec).collect(),
        best_layer: best / heads + 1,
        best_head: best % heads + 1,
        best_accuracy: cells[best],
    }))
}

/// Word → attention mass for one sentence, for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub id: String,
    pub words: Vec<String>,
    pub mass: Vec<f64>,
    pub predicted_index: usize,
    pub gold_indices: Vec<usize>,
}

pub fn heatmap<M: AttentionSource + ?Sized>(model: &M, sentence: &TokenizedSentence, config: &LocatorConfig) -> Result<Heatmap> {
    let map = model.attention_for(&sentence.tokens)?;
    let r = locate(&map, config, &sentence.metaphor_indices)?;
    Ok(Heatmap {
        id: sentence.id.clone(),
        words: sentence.tokens[..r.word_scores.len()].to_vec(),
        mass: r.word_scores,
        predicted_index: r.predicted_index,
        gold_indices: r.gold_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(row: Vec<f64>, align: Vec<Option<usize>>) -> AttentionMap {
        AttentionMap {
            rows: vec![vec![row]],
            subword_to_word: align,
        }
    }

    const ONE: LocatorConfig = LocatorConfig {
        layer: 1,
        head: 1,
        aggregation: Aggregation::Sum,
    };

    #[test]
    fn split_word_beats_single_subword_under_sum() {
        let m = single(vec![0.05, 0.1, 0.4, 0.45, 0.0], vec![None, Some(0), Some(0), Some(1), None]);
        m.validate().unwrap();
        let r = locate(&m, &ONE, &[0]).unwrap();
        assert_eq!(r.predicted_index, 0);
        assert!((r.word_scores[0] - 0.5).abs() < 1e-12);
        let max = LocatorConfig {
            aggregation: Aggregation::Max,
            ..ONE
        };
        assert_eq!(locate(&m, &max, &[0]).unwrap().predicted_index, 1);
    }

    #[test]
    fn uniform_row_picks_first_word() {
        let m = single(vec![1.0 / 7.0; 7], vec![None, Some(0), Some(1), Some(2), Some(3), Some(4), None]);
        let r = locate(&m, &ONE, &[2]).unwrap();
        assert_eq!(r.predicted_index, 0);
        assert!(!r.correct);
    }

    #[test]
    fn special_positions_never_win() {
        let m = single(vec![0.9, 0.02, 0.08], vec![None, Some(0), None]);
        assert_eq!(locate(&m, &ONE, &[0]).unwrap().predicted_index, 0);
    }

    #[test]
    fn range_and_shape_errors() {
        let m = single(vec![0.5, 0.5], vec![None, Some(0)]);
        let bad = LocatorConfig { layer: 2, ..ONE };
        assert!(locate(&m, &bad, &[0]).is_err());
        let zero = LocatorConfig { head: 0, ..ONE };
        assert!(locate(&m, &zero, &[0]).is_err());
        let gap = single(vec![0.5, 0.5], vec![Some(0), Some(2)]);
        assert!(locate(&gap, &ONE, &[0]).is_err());
        let unnormalized = single(vec![0.5, 0.6], vec![None, Some(0)]);
        assert!(unnormalized.validate().is_err());
    }

    #[test]
    fn sweep_csv_shape() {
        let g = SweepGrid {
            aggregation: Aggregation::Sum,
            evaluated: 3,
            accuracy: vec![vec![0.0, 1.0], vec![0.5, 0.25]],
            best_layer: 1,
            best_head: 2,
            best_accuracy: 1.0,
        };
        let csv = g.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "layer,head_1,head_2");
        assert_eq!(csv.lines().count(), 3);
    }
}
