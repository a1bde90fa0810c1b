//! Word-level and WordPiece vocabularies with subword-to-word alignment.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::is_punct;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];
const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VocabKind {
    WordLevel,
    WordPiece,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    pub kind: VocabKind,
    pub lowercase: bool,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pub pad: usize,
    pub unk: usize,
    pub cls: usize,
    pub sep: usize,
    pub mask: usize,
}

/// A sentence encoded as `[CLS] pieces... [SEP]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    /// Word index of every position; `None` for special tokens.
    pub word_of: Vec<Option<usize>>,
    /// Positions covering each input word; empty when truncated away.
    pub pieces: Vec<Range<usize>>,
}

impl Vocab {
    fn from_tokens(kind: VocabKind, lowercase: bool, tokens: Vec<String>) -> Result<Self> {
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let find = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| Error::Format(format!("vocabulary lacks special token {s}")))
        };
        Ok(Self {
            kind,
            lowercase,
            pad: find(PAD)?,
            unk: find(UNK)?,
            cls: find(CLS)?,
            sep: find(SEP)?,
            mask: find(MASK)?,
            tokens,
            index,
        })
    }

    /// Word-level vocabulary over lowercased tokens seen at least `min_count` times.
    pub fn word_level<'a>(sentences: impl IntoIterator<Item = &'a [String]>, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in sentences {
            for t in s {
                *counts.entry(t.to_lowercase()).or_default() += 1;
            }
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(counts.into_iter().filter(|(_, c)| *c >= min_count).map(|(t, _)| t));
        Self::from_tokens(VocabKind::WordLevel, true, tokens).expect("specials present")
    }

    /// Loads a BERT `vocab.txt`.
    pub fn from_vocab_txt(path: &Path, lowercase: bool) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
        Self::from_tokens(VocabKind::WordPiece, lowercase, tokens)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reloads a vocabulary written by [`Vocab::write`].
    pub fn read(path: &Path, kind: VocabKind, lowercase: bool) -> Result<Self> {
        let mut v = Self::from_vocab_txt(path, lowercase)?;
        v.kind = kind;
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn is_special(&self, id: usize) -> bool {
        [self.pad, self.unk, self.cls, self.sep, self.mask].contains(&id)
    }

    /// True for ids that can stand alone as a whole word.
    pub fn is_word_start(&self, id: usize) -> bool {
        !self.is_special(id) && !self.tokens[id].starts_with("##")
    }

    /// Subword ids for one word.
    pub fn word_pieces(&self, word: &str) -> Vec<usize> {
        let word = if self.lowercase { word.to_lowercase() } else { word.to_string() };
        match self.kind {
            VocabKind::WordLevel => vec![self.id(&word).unwrap_or(self.unk)],
            VocabKind::WordPiece => split_on_punct(&word)
                .into_iter()
                .flat_map(|w| self.wordpiece(&w))
                .collect(),
        }
    }

    fn wordpiece(&self, word: &str) -> Vec<usize> {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            return vec![self.unk];
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut piece: String = chars[start..end].iter().collect();
                if start > 0 {
                    piece.insert_str(0, "##");
                }
                if let Some(id) = self.id(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => out.push(id),
                None => return vec![self.unk],
            }
            start = end;
        }
        out
    }

    /// Encodes words, truncating to `max_len` positions including `[CLS]` and `[SEP]`.
    pub fn encode(&self, words: &[String], max_len: usize) -> Encoded {
        let pieces: Vec<Vec<usize>> = words.iter().map(|w| self.word_pieces(w)).collect();
        Self::encode_pieces(self.cls, self.sep, &pieces, max_len)
    }

    /// Like [`Vocab::encode`], with `None` words replaced by a single `[MASK]`.
    pub fn encode_masked(&self, words: &[Option<&str>], max_len: usize) -> Encoded {
        let pieces: Vec<Vec<usize>> = words
            .iter()
            .map(|w| match w {
                Some(w) => self.word_pieces(w),
                None => vec![self.mask],
            })
            .collect();
        Self::encode_pieces(self.cls, self.sep, &pieces, max_len)
    }

    fn encode_pieces(cls: usize, sep: usize, words: &[Vec<usize>], max_len: usize) -> Encoded {
        let budget = max_len.saturating_sub(2);
        let mut ids = vec![cls];
        let mut word_of = vec![None];
        let mut pieces = Vec::with_capacity(words.len());
        for (w, p) in words.iter().enumerate() {
            let p = p.clone();
            let start = ids.len();
            if ids.len() - 1 + p.len() > budget {
                pieces.push(start..start);
                continue;
            }
            for id in p {
                ids.push(id);
                word_of.push(Some(w));
            }
            pieces.push(start..ids.len());
        }
        // once a word is dropped, later words are dropped too
        if let Some(first_gap) = pieces.iter().position(|r| r.is_empty()) {
            let cut = pieces[first_gap].start;
            ids.truncate(cut);
            word_of.truncate(cut);
            for r in &mut pieces[first_gap..] {
                *r = cut..cut;
            }
        }
        ids.push(sep);
        word_of.push(None);
        Encoded { ids, word_of, pieces }
    }

    /// Concatenates the pieces of a word back into a surface string.
    pub fn join_pieces(&self, ids: &[usize]) -> String {
        let mut s = String::new();
        for &id in ids {
            let t = &self.tokens[id];
            match t.strip_prefix("##") {
                Some(rest) => s.push_str(rest),
                None => s.push_str(t),
            }
        }
        s
    }
}

fn split_on_punct(word: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in word.chars() {
        if is_punct(c) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(c.to_string());
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn wordpiece_vocab() -> Vocab {
        let toks = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "the", "scream", "pierce", "##d", "night", "'", "s"];
        Vocab::from_tokens(VocabKind::WordPiece, true, toks.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn wordpiece_alignment() {
        let v = wordpiece_vocab();
        let e = v.encode(&words("The scream pierced the night's"), 64);
        let toks: Vec<&str> = e.ids.iter().map(|&i| v.token(i)).collect();
        assert_eq!(toks, ["[CLS]", "the", "scream", "pierce", "##d", "the", "night", "'", "s", "[SEP]"]);
        assert_eq!(e.pieces[2], 3..5);
        assert_eq!(e.word_of[4], Some(2));
        assert_eq!(e.word_of[0], None);
        assert_eq!(v.join_pieces(&e.ids[3..5]), "pierced");
        for (pos, w) in e.word_of.iter().enumerate() {
            if let Some(w) = w {
                assert!(e.pieces[*w].contains(&pos));
            }
        }
    }

    #[test]
    fn unknown_word_is_single_unk() {
        let v = wordpiece_vocab();
        assert_eq!(v.word_pieces("zzz"), vec![v.unk]);
    }

    #[test]
    fn truncation_drops_tail_words() {
        let v = wordpiece_vocab();
        let e = v.encode(&words("the scream pierced the night"), 5);
        assert_eq!(e.ids.len(), 4);
        assert_eq!(e.pieces[2], 3..3);
        assert!(e.pieces[3].is_empty() && e.pieces[4].is_empty());
        assert_eq!(*e.ids.last().unwrap(), v.sep);
    }

    #[test]
    fn word_level_min_count() {
        let a = words("a b b");
        let b = words("B c");
        let v = Vocab::word_level([a.as_slice(), b.as_slice()], 2);
        assert!(v.id("b").is_some());
        assert!(v.id("a").is_none());
        assert_eq!(v.word_pieces("A"), vec![v.unk]);
        assert_eq!(v.len(), 6);
    }
}
