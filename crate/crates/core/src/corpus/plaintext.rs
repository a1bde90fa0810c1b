use std::path::Path;

use super::{LiteralCorpus, TokenizedSentence};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PlaintextLoad {
    pub corpus: LiteralCorpus,
    /// Lines dropped because they were not valid UTF-8.
    pub undecodable: usize,
}

/// One sentence per non-blank line.
pub fn load_plaintext_corpus(path: &Path, source: &str) -> Result<PlaintextLoad> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut sentences = Vec::new();
    let mut undecodable = 0;
    for (i, raw) in bytes.split(|b| *b == b'\n').enumerate() {
        let Ok(line) = std::str::from_utf8(raw) else {
            log::warn!("{}:{}: skipping undecodable line", path.display(), i + 1);
            undecodable += 1;
            continue;
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        sentences.push(TokenizedSentence::unlabeled(
            format!("{source}-{:06}", i + 1),
            line,
            source,
        ));
    }
    Ok(PlaintextLoad {
        corpus: LiteralCorpus::new(source, sentences)?,
        undecodable,
    })
}
