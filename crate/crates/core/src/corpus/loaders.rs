//! Readers for the MOH-X, TroFi and TroFi-X delimited files.
//!
//! Every loader checks the header, tokenizes the sentence column and
//! resolves the annotated target tokens to word indices. Row problems are
//! fatal in [`LoadMode::Strict`] and skipped (and counted) in
//! [`LoadMode::Lenient`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetName, Label, LabeledDataset, Slot, SlotAssignment, TokenizedSentence};
use crate::error::{Error, Result};
use crate::text::{chunk_spans, crude_stem, is_punct_token, normalize, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIssue {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub path: PathBuf,
    pub rows: usize,
    pub loaded: usize,
    pub skipped: Vec<RowIssue>,
    /// Rows whose index was re-mapped from whitespace positions to word tokens.
    pub realigned: usize,
    /// Rows whose target token does not look like the declared verb.
    pub verb_mismatches: Vec<RowIssue>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: LabeledDataset,
    pub report: LoadReport,
}

const MOH_X_COLUMNS: &[&str] = &["arg1", "arg2", "verb", "sentence", "verb_idx", "label"];
const TROFI_COLUMNS: &[&str] = &["verb", "sentence", "verb_idx", "label"];
const TROFI_X_COLUMNS: &[&str] = &["arg1", "arg2", "verb", "sentence", "verb_stem", "label"];

pub fn load_moh_x(path: &Path, mode: LoadMode) -> Result<Loaded> {
    load_indexed(path, mode, DatasetName::MohX, MOH_X_COLUMNS)
}

pub fn load_trofi(path: &Path, mode: LoadMode) -> Result<Loaded> {
    load_indexed(path, mode, DatasetName::Trofi, TROFI_COLUMNS)
}

pub fn load_trofi_x(path: &Path, mode: LoadMode) -> Result<Loaded> {
    let name = DatasetName::TrofiX;
    read_rows(path, mode, name, TROFI_X_COLUMNS, |row, ctx| {
        let (arg1, arg2, verb, sentence, stem) = (row[0], row[1], row[2], row[3], row[4]);
        let label = parse_label(row[5])?;
        let tokens = tokenize(sentence);
        let mut claimed: Vec<usize> = Vec::new();
        let mut slots = Vec::new();
        for (slot, needle) in [(Slot::T1, arg1), (Slot::T2, arg2), (Slot::V, verb)] {
            let index = tokens
                .iter()
                .enumerate()
                .filter(|(i, _)| !claimed.contains(i))
                .find(|(_, t)| match slot {
                    Slot::V => verb_matches(t, verb, Some(stem)),
                    _ => arg_matches(t, needle),
                })
                .map(|(i, _)| i)
                .ok_or_else(|| {
                    format!("{slot} `{needle}` not found among unclaimed tokens of the sentence")
                })?;
            claimed.push(index);
            slots.push(SlotAssignment { index, slot });
        }
        let mut s = TokenizedSentence::labeled(ctx.id(), sentence, name.as_str(), label, claimed);
        s.slots = slots;
        Ok(s)
    })
}

fn load_indexed(path: &Path, mode: LoadMode, name: DatasetName, columns: &[&str]) -> Result<Loaded> {
    let offset = columns.len() - 4;
    read_rows(path, mode, name, columns, |row, ctx| {
        let verb = row[offset];
        let sentence = row[offset + 1];
        let raw_idx = row[offset + 2].trim();
        let label = parse_label(row[offset + 3])?;
        let verb_idx: usize = raw_idx
            .parse()
            .map_err(|_| format!("verb_idx `{raw_idx}` is not a non-negative integer"))?;
        let tokens = tokenize(sentence);
        if verb_idx >= tokens.len() {
            return Err(format!(
                "verb_idx {verb_idx} out of range for {} tokens",
                tokens.len()
            ));
        }
        let index = resolve_verb_index(sentence, &tokens, verb_idx, verb, ctx);
        Ok(TokenizedSentence::labeled(ctx.id(), sentence, name.as_str(), label, [index]))
    })
}

/// Interprets `verb_idx` against word tokens; if the token there is not the
/// verb but the whitespace chunk at `verb_idx` holds it, the index is re-mapped.
fn resolve_verb_index(
    sentence: &str,
    tokens: &[String],
    verb_idx: usize,
    verb: &str,
    ctx: &mut RowContext,
) -> usize {
    if verb_matches(&tokens[verb_idx], verb, None) {
        return verb_idx;
    }
    if let Some(&(start, n)) = chunk_spans(sentence).get(verb_idx) {
        if let Some(i) = (start..start + n).find(|&i| !is_punct_token(&tokens[i])) {
            if verb_matches(&tokens[i], verb, None) {
                ctx.realigned = true;
                return i;
            }
        }
    }
    ctx.mismatch = Some(format!(
        "token `{}` at verb_idx {verb_idx} does not match verb `{verb}`",
        tokens[verb_idx]
    ));
    verb_idx
}

fn verb_matches(token: &str, verb: &str, stem: Option<&str>) -> bool {
    let t = normalize(token);
    let v = normalize(verb);
    if t == v || crude_stem(&t) == crude_stem(&v) {
        return true;
    }
    stem.map(normalize).is_some_and(|s| {
        !s.is_empty() && (crude_stem(&t) == crude_stem(&s) || (s.len() >= 3 && t.starts_with(&s)))
    })
}

/// Multi-word arguments are matched by their last word.
fn arg_matches(token: &str, arg: &str) -> bool {
    let head = arg.split_whitespace().last().unwrap_or(arg);
    let head = tokenize(head)
        .into_iter()
        .find(|t| !is_punct_token(t))
        .unwrap_or_default();
    !head.is_empty() && normalize(token) == normalize(&head)
}

fn parse_label(raw: &str) -> std::result::Result<Label, String> {
    match raw.trim() {
        "1" => Ok(Label::Metaphorical),
        "0" => Ok(Label::Literal),
        other => Err(format!("label `{other}` is not 0 or 1")),
    }
}

struct RowContext {
    dataset: DatasetName,
    row: usize,
    realigned: bool,
    mismatch: Option<String>,
}

impl RowContext {
    fn id(&self) -> String {
        format!("{}-{:05}", self.dataset, self.row)
    }
}

fn read_rows<F>(
    path: &Path,
    mode: LoadMode,
    name: DatasetName,
    columns: &[&str],
    mut parse: F,
) -> Result<Loaded>
where
    F: FnMut(&[&str], &mut RowContext) -> std::result::Result<TokenizedSentence, String>,
{
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().trim_start_matches('\u{feff}').to_ascii_lowercase())
        .collect();
    if header != columns {
        return Err(Error::Row {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected columns {columns:?}, found {header:?}"),
        });
    }

    let mut report = LoadReport {
        path: path.to_path_buf(),
        ..LoadReport::default()
    };
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        report.rows += 1;
        let (line, outcome) = match row {
            Ok(row) => {
                let line = row.position().map_or(i as u64 + 2, |p| p.line());
                let fields: Vec<&str> = row.iter().collect();
                let mut ctx = RowContext {
                    dataset: name,
                    row: i + 1,
                    realigned: false,
                    mismatch: None,
                };
                let outcome = if fields.len() != columns.len() {
                    Err(format!(
                        "expected {} columns, found {}",
                        columns.len(),
                        fields.len()
                    ))
                } else {
                    parse(&fields, &mut ctx)
                };
                if ctx.realigned {
                    report.realigned += 1;
                }
                if let Some(message) = ctx.mismatch.take() {
                    log::warn!("{}:{line}: {message}", path.display());
                    report.verb_mismatches.push(RowIssue { line, message });
                }
                (line, outcome)
            }
            Err(e) => (
                e.position().map_or(i as u64 + 2, |p| p.line()),
                Err(e.to_string()),
            ),
        };
        match outcome {
            Ok(sentence) => records.push(sentence),
            Err(message) => match mode {
                LoadMode::Strict => {
                    return Err(Error::Row {
                        path: path.to_path_buf(),
                        line,
                        message,
                    })
                }
                LoadMode::Lenient => {
                    log::warn!("{}:{line}: skipped: {message}", path.display());
                    report.skipped.push(RowIssue { line, message });
                }
            },
        }
    }
    report.loaded = records.len();
    if records.is_empty() {
        let msg = format!("{} contains no data rows", path.display());
        log::warn!("{msg}");
        report.warnings.push(msg);
    }
    log::info!(
        "loaded {} {} records from {} ({} skipped)",
        report.loaded,
        name,
        path.display(),
        report.skipped.len()
    );
    let dataset = LabeledDataset::new(name, records)?;
    Ok(Loaded { dataset, report })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}
