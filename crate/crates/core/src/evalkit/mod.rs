//! Human-evaluation packets, score ingestion and statistics; augmentation driver.

mod augment;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{LoadMode, RowIssue, TokenizedSentence};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::text::tokenize;

pub use augment::{build_augmented_set, duplicate_instances, run_augmentation_experiment, Augmented, AugmentationResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    System,
    Human,
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub item_id: String,
    pub text: String,
    pub highlight_span: Span,
    pub origin: Origin,
}

impl AnnotationItem {
    /// Highlights the span from the first to the last metaphor index.
    pub fn from_sentence(item_id: impl Into<String>, s: &TokenizedSentence, origin: Origin) -> Result<Self> {
        let (Some(&start), Some(&end)) = (s.metaphor_indices.first(), s.metaphor_indices.last()) else {
            return Err(Error::invalid(format!("sentence {} has no metaphor position to highlight", s.id)));
        };
        let item = Self {
            item_id: item_id.into(),
            text: s.text.clone(),
            highlight_span: Span { start, end: end + 1 },
            origin,
        };
        item.validate()?;
        Ok(item)
    }

    pub fn validate(&self) -> Result<()> {
        let n = tokenize(&self.text).len();
        let Span { start, end } = self.highlight_span;
        if start >= end || end > n {
            return Err(Error::invalid(format!(
                "item {}: highlight {start}..{end} invalid for {n} tokens",
                self.item_id
            )));
        }
        Ok(())
    }
}

pub const INSTRUCTIONS: &str = "Each sentence contains words shown in bold that are supposedly being used in a figurative way. \
For each sentence, assign a score from 1 (very low) to 5 (very high) on each of four dimensions, based on your personal judgement.";

pub const DIMENSION_QUESTIONS: [(&str, &str); 4] = [
    ("fluency", "How fluent, grammatical, well formed and easy to understand are the generated utterances?"),
    ("meaning", "Are the input and the output referring or meaning the same thing?"),
    ("creativity", "How creative are the generated utterances?"),
    ("metaphoricity", "How metaphoric are the generated utterances?"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkedExample {
    pub text: String,
    pub fluency: u8,
    pub meaning: u8,
    pub creativity: u8,
    pub metaphoricity: u8,
}

pub fn worked_examples() -> Vec<WorkedExample> {
    vec![
        WorkedExample {
            text: "The scream pierced the night".into(),
            fluency: 4,
            meaning: 5,
            creativity: 4,
            metaphoricity: 4,
        },
        WorkedExample {
            text: "The wildfire swept through the forest at an amazing speed".into(),
            fluency: 4,
            meaning: 3,
            creativity: 5,
            metaphoricity: 4,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationPacket {
    pub packet_id: String,
    pub items: Vec<AnnotationItem>,
    pub shuffle_seed: u64,
    pub composition: BTreeMap<Origin, usize>,
}

/// What annotators see; carries no origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicItem {
    pub item_id: String,
    pub text: String,
    pub highlight_span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionQuestion {
    pub dimension: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicPacket {
    pub packet_id: String,
    pub instructions: String,
    pub dimensions: Vec<DimensionQuestion>,
    pub examples: Vec<WorkedExample>,
    pub items: Vec<PublicItem>,
}

/// Item → origin, kept apart from the annotator-facing file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SealedKey {
    pub packet_id: String,
    pub shuffle_seed: u64,
    pub origins: BTreeMap<String, Origin>,
}

pub fn build_packet(
    packet_id: impl Into<String>,
    system_items: Vec<AnnotationItem>,
    human_items: Vec<AnnotationItem>,
    seed: u64,
) -> Result<AnnotationPacket> {
    if system_items.is_empty() || human_items.is_empty() {
        return Err(Error::invalid("a packet needs both system and human items"));
    }
    let mut composition = BTreeMap::new();
    composition.insert(Origin::System, system_items.len());
    composition.insert(Origin::Human, human_items.len());
    let mut items: Vec<AnnotationItem> = system_items
        .into_iter()
        .map(|i| AnnotationItem { origin: Origin::System, ..i })
        .chain(human_items.into_iter().map(|i| AnnotationItem { origin: Origin::Human, ..i }))
        .collect();
    let mut ids = BTreeSet::new();
    for i in &items {
        i.validate()?;
        if !ids.insert(i.item_id.as_str()) {
            return Err(Error::invalid(format!("duplicate item id {}", i.item_id)));
        }
    }
    items.shuffle(&mut substream(seed, "packet-shuffle"));
    Ok(AnnotationPacket {
        packet_id: packet_id.into(),
        items,
        shuffle_seed: seed,
        composition,
    })
}

impl AnnotationPacket {
    pub fn public(&self) -> PublicPacket {
        PublicPacket {
            packet_id: self.packet_id.clone(),
            instructions: INSTRUCTIONS.into(),
            dimensions: DIMENSION_QUESTIONS
                .iter()
                .map(|(d, q)| DimensionQuestion {
                    dimension: d.to_string(),
                    question: q.to_string(),
                })
                .collect(),
            examples: worked_examples(),
            items: self
                .items
                .iter()
                .map(|i| PublicItem {
                    item_id: i.item_id.clone(),
                    text: i.text.clone(),
                    highlight_span: i.highlight_span,
                })
                .collect(),
        }
    }

    pub fn sealed_key(&self) -> SealedKey {
        SealedKey {
            packet_id: self.packet_id.clone(),
            shuffle_seed: self.shuffle_seed,
            origins: self.items.iter().map(|i| (i.item_id.clone(), i.origin)).collect(),
        }
    }

    pub fn item_ids(&self) -> BTreeSet<String> {
        self.items.iter().map(|i| i.item_id.clone()).collect()
    }

    /// Rejoins an annotator-facing packet with its key.
    pub fn from_parts(public: PublicPacket, key: SealedKey) -> Result<Self> {
        if public.packet_id != key.packet_id {
            return Err(Error::Format(format!(
                "packet {} does not match key {}",
                public.packet_id, key.packet_id
            )));
        }
        let mut composition = BTreeMap::new();
        let mut items = Vec::with_capacity(public.items.len());
        for p in public.items {
            let origin = *key
                .origins
                .get(&p.item_id)
                .ok_or_else(|| Error::Format(format!("key lacks item {}", p.item_id)))?;
            *composition.entry(origin).or_insert(0) += 1;
            items.push(AnnotationItem {
                item_id: p.item_id,
                text: p.text,
                highlight_span: p.highlight_span,
                origin,
            });
        }
        if items.len() != key.origins.len() {
            return Err(Error::Format("key lists items absent from the packet".into()));
        }
        Ok(Self {
            packet_id: public.packet_id,
            items,
            shuffle_seed: key.shuffle_seed,
            composition,
        })
    }
}

pub fn packet_path(dir: &Path, packet_id: &str) -> PathBuf {
    dir.join(format!("{packet_id}.packet.json"))
}

pub fn key_path(dir: &Path, packet_id: &str) -> PathBuf {
    dir.join(format!("{packet_id}.key.json"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let raw = serde_json::to_string_pretty(value)?;
    fs::write(path, raw).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&raw)?)
}

/// Writes `<id>.packet.json` (annotator-facing) and `<id>.key.json` (sealed).
pub fn write_packet(dir: &Path, packet: &AnnotationPacket) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&packet_path(dir, &packet.packet_id), &packet.public())?;
    write_json(&key_path(dir, &packet.packet_id), &packet.sealed_key())
}

pub fn read_packet(dir: &Path, packet_id: &str) -> Result<AnnotationPacket> {
    let public: PublicPacket = read_json(&packet_path(dir, packet_id))?;
    let key: SealedKey = read_json(&key_path(dir, packet_id))?;
    AnnotationPacket::from_parts(public, key)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Fluency,
    Meaning,
    Creativity,
    Metaphoricity,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::Fluency,
        Dimension::Meaning,
        Dimension::Creativity,
        Dimension::Metaphoricity,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub annotator_id: String,
    pub item_id: String,
    pub fluency: u8,
    pub meaning: u8,
    pub creativity: u8,
    pub metaphoricity: u8,
}

impl ScoreRecord {
    pub fn get(&self, d: Dimension) -> u8 {
        match d {
            Dimension::Fluency => self.fluency,
            Dimension::Meaning => self.meaning,
            Dimension::Creativity => self.creativity,
            Dimension::Metaphoricity => self.metaphoricity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.annotator_id.trim().is_empty() || self.item_id.trim().is_empty() {
            return Err(Error::invalid("annotator_id and item_id must be non-empty"));
        }
        for d in Dimension::ALL {
            let v = self.get(d);
            if !(1..=5).contains(&v) {
                return Err(Error::invalid(format!("{d:?} score {v} outside 1..5").to_lowercase()));
            }
        }
        Ok(())
    }
}

/// Loose row shape so that missing or out-of-range values become row errors.
#[derive(Debug, Deserialize)]
struct RawScore {
    annotator_id: Option<String>,
    item_id: Option<String>,
    fluency: Option<i64>,
    meaning: Option<i64>,
    creativity: Option<i64>,
    metaphoricity: Option<i64>,
}

impl RawScore {
    fn check(self, known: Option<&BTreeSet<String>>) -> std::result::Result<ScoreRecord, String> {
        let annotator_id = self.annotator_id.filter(|s| !s.trim().is_empty()).ok_or("missing annotator_id")?;
        let item_id = self.item_id.filter(|s| !s.trim().is_empty()).ok_or("missing item_id")?;
        if let Some(k) = known {
            if !k.contains(&item_id) {
                return Err(format!("unknown item_id {item_id}"));
            }
        }
        let dim = |name: &str, v: Option<i64>| -> std::result::Result<u8, String> {
            let v = v.ok_or_else(|| format!("missing {name}"))?;
            if (1..=5).contains(&v) {
                Ok(v as u8)
            } else {
                Err(format!("{name} score {v} outside 1..5"))
            }
        };
        Ok(ScoreRecord {
            fluency: dim("fluency", self.fluency)?,
            meaning: dim("meaning", self.meaning)?,
            creativity: dim("creativity", self.creativity)?,
            metaphoricity: dim("metaphoricity", self.metaphoricity)?,
            annotator_id,
            item_id,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestedScores {
    pub records: Vec<ScoreRecord>,
    pub rejected: Vec<RowIssue>,
}

/// Reads JSON lines (`.jsonl`, `.json`) or comma-separated rows with a header.
/// Rows failing validation are collected, or abort the read in strict mode.
pub fn ingest_scores(path: &Path, known_items: Option<&BTreeSet<String>>, mode: LoadMode) -> Result<IngestedScores> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let json = matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"));
    let mut rows: Vec<(u64, std::result::Result<RawScore, String>)> = Vec::new();
    if json {
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            rows.push((i as u64 + 1, serde_json::from_str(line).map_err(|e| e.to_string())));
        }
    } else if !raw.trim().is_empty() {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(raw.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .clone();
        for rec in rdr.records() {
            match rec {
                Ok(r) => {
                    let line = r.position().map_or(0, |p| p.line());
                    rows.push((line, r.deserialize(Some(&headers)).map_err(|e| e.to_string())));
                }
                Err(e) => rows.push((e.position().map_or(0, |p| p.line()), Err(e.to_string()))),
            }
        }
    }
    let mut out = IngestedScores::default();
    for (line, row) in rows {
        match row.and_then(|r| r.check(known_items)) {
            Ok(r) => out.records.push(r),
            Err(message) => {
                if mode == LoadMode::Strict {
                    return Err(Error::Row {
                        path: path.to_path_buf(),
                        line,
                        message,
                    });
                }
                out.rejected.push(RowIssue { line, message });
            }
        }
    }
    if out.records.is_empty() && out.rejected.is_empty() {
        log::warn!("{}: no score rows", path.display());
    }
    Ok(out)
}

/// One value per dimension.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub fluency: f64,
    pub meaning: f64,
    pub creativity: f64,
    pub metaphoricity: f64,
}

impl Dims {
    pub fn get(&self, d: Dimension) -> f64 {
        match d {
            Dimension::Fluency => self.fluency,
            Dimension::Meaning => self.meaning,
            Dimension::Creativity => self.creativity,
            Dimension::Metaphoricity => self.metaphoricity,
        }
    }

    fn from_fn(mut f: impl FnMut(Dimension) -> f64) -> Self {
        Self {
            fluency: f(Dimension::Fluency),
            meaning: f(Dimension::Meaning),
            creativity: f(Dimension::Creativity),
            metaphoricity: f(Dimension::Metaphoricity),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginMeans {
    pub n: usize,
    pub means: Dims,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub per_annotator: BTreeMap<String, BTreeMap<Origin, OriginMeans>>,
    /// Unweighted mean over annotators.
    pub macro_average: BTreeMap<Origin, Dims>,
    /// Sample standard deviation over √n, over all of an annotator's items.
    pub sem: BTreeMap<String, Dims>,
    /// Mean absolute difference over items scored by both members of each
    /// annotator pair; absent with fewer than two annotators.
    pub inter_annotator_mae: Option<Dims>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample SD over √n; 0 for a single observation.
fn sem(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    var.sqrt() / (n as f64).sqrt()
}

/// Table statistics over `records`; a later score for the same annotator and item replaces an earlier one.
pub fn summarize(records: &[ScoreRecord], packet: &AnnotationPacket) -> Result<EvalSummary> {
    let origins: BTreeMap<&str, Origin> = packet.items.iter().map(|i| (i.item_id.as_str(), i.origin)).collect();
    let mut by_annotator: BTreeMap<&str, BTreeMap<&str, &ScoreRecord>> = BTreeMap::new();
    for r in records {
        r.validate()?;
        if !origins.contains_key(r.item_id.as_str()) {
            return Err(Error::invalid(format!("score for unknown item {}", r.item_id)));
        }
        by_annotator.entry(&r.annotator_id).or_default().insert(&r.item_id, r);
    }
    if by_annotator.is_empty() {
        return Err(Error::invalid("no scores to summarize"));
    }
    let mut per_annotator = BTreeMap::new();
    let mut sems = BTreeMap::new();
    for (a, items) in &by_annotator {
        let mut cells = BTreeMap::new();
        for origin in [Origin::System, Origin::Human] {
            let rs: Vec<&&ScoreRecord> = items.values().filter(|r| origins[r.item_id.as_str()] == origin).collect();
            if rs.is_empty() {
                continue;
            }
            let means = Dims::from_fn(|d| mean(&rs.iter().map(|r| f64::from(r.get(d))).collect::<Vec<_>>()));
            cells.insert(origin, OriginMeans { n: rs.len(), means });
        }
        per_annotator.insert(a.to_string(), cells);
        sems.insert(
            a.to_string(),
            Dims::from_fn(|d| sem(&items.values().map(|r| f64::from(r.get(d))).collect::<Vec<_>>())),
        );
    }
    let mut macro_average = BTreeMap::new();
    for origin in [Origin::System, Origin::Human] {
        let cells: Vec<&OriginMeans> = per_annotator.values().filter_map(|c| c.get(&origin)).collect();
        if !cells.is_empty() {
            macro_average.insert(origin, Dims::from_fn(|d| mean(&cells.iter().map(|c| c.means.get(d)).collect::<Vec<_>>())));
        }
    }
    let annotators: Vec<&BTreeMap<&str, &ScoreRecord>> = by_annotator.values().collect();
    let mut diffs: Vec<[f64; 4]> = Vec::new();
    for i in 0..annotators.len() {
        for j in i + 1..annotators.len() {
            for (item, a) in annotators[i] {
                if let Some(b) = annotators[j].get(item) {
                    diffs.push(Dimension::ALL.map(|d| (f64::from(a.get(d)) - f64::from(b.get(d))).abs()));
                }
            }
        }
    }
    let inter_annotator_mae = if diffs.is_empty() {
        if annotators.len() > 1 {
            log::warn!("annotators share no items; inter-annotator MAE is undefined");
        }
        None
    } else {
        Some(Dims::from_fn(|d| {
            let k = Dimension::ALL.iter().position(|x| *x == d).expect("listed");
            mean(&diffs.iter().map(|x| x[k]).collect::<Vec<_>>())
        }))
    };
    Ok(EvalSummary {
        per_annotator,
        macro_average,
        sem: sems,
        inter_annotator_mae,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, text: &str) -> AnnotationItem {
        AnnotationItem {
            item_id: id.into(),
            text: text.into(),
            highlight_span: Span { start: 1, end: 2 },
            origin: Origin::System,
        }
    }

    fn score(a: &str, i: &str, s: [u8; 4]) -> ScoreRecord {
        ScoreRecord {
            annotator_id: a.into(),
            item_id: i.into(),
            fluency: s[0],
            meaning: s[1],
            creativity: s[2],
            metaphoricity: s[3],
        }
    }

    fn packet(n: usize) -> AnnotationPacket {
        let sys = (0..n).map(|i| item(&format!("s{i}"), "The scream pierced the night")).collect();
        let hum = (0..n).map(|i| item(&format!("h{i}"), "Headlines scream of pollution")).collect();
        build_packet("p", sys, hum, 5).unwrap()
    }

    #[test]
    fn packet_composition_and_seeded_order() {
        let p = packet(100);
        assert_eq!(p.items.len(), 200);
        assert_eq!(p.composition[&Origin::System], 100);
        assert_eq!(p.composition[&Origin::Human], 100);
        assert_eq!(p.items, packet(100).items);
        let tiny = packet(1);
        assert_eq!(tiny.items.len(), 2);
        let dup = build_packet("p", vec![item("a", "x y")], vec![item("a", "x y")], 1);
        assert!(dup.is_err());
    }

    #[test]
    fn public_packet_hides_origin() {
        let p = packet(3);
        let v = serde_json::to_value(p.public()).unwrap();
        assert!(!v.to_string().contains("origin"));
        assert!(!v.to_string().contains("system"));
        assert_eq!(AnnotationPacket::from_parts(p.public(), p.sealed_key()).unwrap(), p);
    }

    #[test]
    fn mae_worked_example_and_single_annotator() {
        let p = packet(1);
        let recs = vec![score("a1", "s0", [5, 3, 4, 2]), score("a2", "s0", [4, 4, 4, 2])];
        let s = summarize(&recs, &p).unwrap();
        let mae = s.inter_annotator_mae.unwrap();
        assert_eq!([mae.fluency, mae.meaning, mae.creativity, mae.metaphoricity], [1.0, 1.0, 0.0, 0.0]);
        let one = summarize(&recs[..1], &p).unwrap();
        assert!(one.inter_annotator_mae.is_none());
    }

    #[test]
    fn identical_scores_have_zero_sem() {
        let p = packet(4);
        let recs: Vec<_> = p.items.iter().map(|i| score("a", &i.item_id, [3, 3, 3, 3])).collect();
        let s = summarize(&recs, &p).unwrap();
        assert_eq!(s.sem["a"], Dims::from_fn(|_| 0.0));
        assert_eq!(s.macro_average[&Origin::Human].fluency, 3.0);
    }

    #[test]
    fn ingest_rejects_rows() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("scores.csv");
        fs::write(
            &csv_path,
            "annotator_id,item_id,fluency,meaning,creativity,metaphoricity\na1,item7,4,5,4,4\na1,item8,4,5,6,4\na1,nope,1,1,1,1\na2,item7,0,1,1,1\n",
        )
        .unwrap();
        let known: BTreeSet<String> = ["item7".to_string(), "item8".to_string()].into();
        let r = ingest_scores(&csv_path, Some(&known), LoadMode::Lenient).unwrap();
        assert_eq!(r.records, vec![score("a1", "item7", [4, 5, 4, 4])]);
        assert_eq!(r.rejected.iter().map(|i| i.line).collect::<Vec<_>>(), vec![3, 4, 5]);
        assert!(ingest_scores(&csv_path, Some(&known), LoadMode::Strict).is_err());

        let jl = dir.path().join("scores.jsonl");
        fs::write(
            &jl,
            "{\"annotator_id\":\"a1\",\"item_id\":\"item7\",\"fluency\":4,\"meaning\":5,\"creativity\":4,\"metaphoricity\":4}\n{\"annotator_id\":\"a1\",\"item_id\":\"item7\",\"fluency\":4}\n",
        )
        .unwrap();
        let r = ingest_scores(&jl, None, LoadMode::Lenient).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.rejected[0].line, 2);

        let empty = dir.path().join("empty.csv");
        fs::write(&empty, "").unwrap();
        assert!(ingest_scores(&empty, None, LoadMode::Strict).unwrap().records.is_empty());
    }
}
