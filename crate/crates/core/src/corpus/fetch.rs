//! Thin topic fetcher for building literal corpora from Wikipedia extracts.
//!
//! Results are cached as JSON lines (`topic`, `retrieved_at`, `text`); a warm
//! cache is always served without touching the network.

use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::jsonl::{read_jsonl, write_jsonl};
use super::{LiteralCorpus, TokenizedSentence};
use crate::error::{Error, Result};

/// Minimal GET transport so tests can count or fake requests.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> std::result::Result<String, String>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .user_agent(concat!("metaphor-core/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| Error::Resource(format!("cannot build HTTP client: {e}")))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> std::result::Result<String, String> {
        let resp = self.client.get(url).send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {status} for {url}"));
        }
        resp.text().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedSentence {
    pub topic: String,
    pub retrieved_at: u64,
    pub text: String,
}

pub struct WikipediaFetcher<'a> {
    pub endpoint: String,
    pub transport: &'a dyn Transport,
    /// Search results requested per page.
    pub page_size: usize,
    pub max_pages: usize,
}

impl<'a> WikipediaFetcher<'a> {
    pub fn new(endpoint: impl Into<String>, transport: &'a dyn Transport) -> Self {
        Self {
            endpoint: endpoint.into(),
            transport,
            page_size: 20,
            max_pages: 25,
        }
    }

    fn page_url(&self, topic: &str, offset: usize) -> String {
        format!(
            "{}?action=query&format=json&generator=search&gsrsearch={}&gsrlimit={}&gsroffset={}&prop=extracts&explaintext=1&exlimit=max",
            self.endpoint,
            encode_query(topic),
            self.page_size,
            offset
        )
    }

    fn fetch(&self, topic: &str, n: usize, cache: &Path) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for page in 0..self.max_pages {
            let url = self.page_url(topic, page * self.page_size);
            let body = self.transport.get(&url).map_err(|message| Error::Network {
                message,
                cache: cache.to_path_buf(),
            })?;
            let json: serde_json::Value = serde_json::from_str(&body)?;
            let Some(pages) = json.pointer("/query/pages").and_then(|p| p.as_object()) else {
                break;
            };
            let mut extracts: Vec<(i64, &str)> = pages
                .values()
                .filter_map(|p| {
                    let idx = p.get("index").and_then(|i| i.as_i64()).unwrap_or(i64::MAX);
                    p.get("extract").and_then(|e| e.as_str()).map(|e| (idx, e))
                })
                .collect();
            extracts.sort_by_key(|e| e.0);
            for (_, extract) in extracts {
                for s in split_sentences(extract) {
                    if out.len() == n {
                        return Ok(out);
                    }
                    out.push(s);
                }
            }
            if json.get("continue").is_none() {
                break;
            }
        }
        Ok(out)
    }
}

/// Splits prose into sentences at `.`, `!` or `?` followed by whitespace and
/// an uppercase letter, digit or quote. Section headings (`== X ==`) and very
/// short fragments are dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for para in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('=')) {
        let chars: Vec<char> = para.chars().collect();
        let mut start = 0;
        for i in 0..chars.len() {
            let end_mark = matches!(chars[i], '.' | '!' | '?');
            let boundary = end_mark
                && !is_abbreviation(&chars[start..i])
                && chars.get(i + 1).is_some_and(|c| c.is_whitespace())
                && chars
                    .get(i + 2)
                    .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit() || *c == '"');
            if boundary || i + 1 == chars.len() {
                let s: String = chars[start..=i].iter().collect();
                let s = s.trim();
                if s.split_whitespace().count() >= 4 {
                    out.push(s.to_string());
                }
                start = i + 1;
            }
        }
    }
    out
}

fn is_abbreviation(before: &[char]) -> bool {
    const ABBREVIATIONS: &[&str] = &["dr", "mr", "mrs", "ms", "st", "jr", "sr", "vs", "etc", "e.g", "i.e", "no", "prof"];
    let word: String = before
        .iter()
        .rev()
        .take_while(|c| !c.is_whitespace())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    let lower = word.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
        || (word.chars().count() == 1 && word.chars().all(char::is_uppercase))
}

fn encode_query(s: &str) -> String {
    let mut out = String::new();
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => out.push(b as char),
            b' ' => out.push('+'),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

fn corpus_from_cache(topic: &str, rows: &[CachedSentence], n: usize) -> Result<LiteralCorpus> {
    let source = format!("wikipedia-{topic}");
    let sentences = rows
        .iter()
        .take(n)
        .enumerate()
        .map(|(i, r)| TokenizedSentence::unlabeled(format!("{source}-{:06}", i + 1), &r.text, &source))
        .collect();
    LiteralCorpus::new(source, sentences)
}

/// At most `n` sentences about `topic`. A cache file at `cache` is used
/// verbatim when present; otherwise results are fetched and written there.
pub fn fetch_topic_sentences(
    topic: &str,
    n: usize,
    fetcher: &WikipediaFetcher<'_>,
    cache: &Path,
) -> Result<LiteralCorpus> {
    if n == 0 {
        return Err(Error::invalid("requested sentence count must be positive"));
    }
    if cache.exists() {
        let rows: Vec<CachedSentence> = read_jsonl(cache)?;
        log::info!("serving {} cached sentences for `{topic}` from {}", rows.len(), cache.display());
        return corpus_from_cache(topic, &rows, n);
    }
    let texts = fetcher.fetch(topic, n, cache)?;
    if texts.is_empty() {
        log::warn!("no sentences found for topic `{topic}`");
        return corpus_from_cache(topic, &[], n);
    }
    let retrieved_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let rows: Vec<CachedSentence> = texts
        .into_iter()
        .map(|text| CachedSentence {
            topic: topic.to_string(),
            retrieved_at,
            text,
        })
        .collect();
    if let Some(parent) = cache.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_jsonl(cache, &rows)?;
    corpus_from_cache(topic, &rows, n)
}

/// Default cache location for a topic under `dir`.
pub fn cache_path(dir: &Path, topic: &str) -> PathBuf {
    dir.join(format!("wikipedia-{}.jsonl", encode_query(topic)))
}
