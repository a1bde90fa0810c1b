//! Word tokenization shared by every loader and model.
//!
//! Whitespace split, then each chunk has leading and trailing punctuation
//! detached into single-character tokens. Inner punctuation (`don't`,
//! `well-oiled`, `3.5`) stays attached to the word.

/// Splits `text` into word and punctuation tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        tokens.extend(split_chunk(chunk).into_iter().map(str::to_owned));
    }
    tokens
}

/// Tokens of one whitespace-delimited chunk.
pub(crate) fn split_chunk(chunk: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = chunk.char_indices().collect();
    let mut start = 0;
    let mut end = chars.len();
    while start < end && is_punct(chars[start].1) {
        start += 1;
    }
    while end > start && is_punct(chars[end - 1].1) {
        end -= 1;
    }
    let byte = |i: usize| chars.get(i).map_or(chunk.len(), |c| c.0);

    let mut out = Vec::new();
    for i in 0..start {
        out.push(&chunk[byte(i)..byte(i + 1)]);
    }
    if start < end {
        out.push(&chunk[byte(start)..byte(end)]);
    }
    for i in end.max(start)..chars.len() {
        out.push(&chunk[byte(i)..byte(i + 1)]);
    }
    out
}

/// For each whitespace chunk of `text`, the index of its first token in `tokenize(text)`
/// paired with the number of tokens it produced.
pub(crate) fn chunk_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut at = 0;
    for chunk in text.split_whitespace() {
        let n = split_chunk(chunk).len();
        spans.push((at, n));
        at += n;
    }
    spans
}

pub fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '…' | '—' | '–' | '«' | '»')
}

pub fn is_punct_token(token: &str) -> bool {
    !token.is_empty() && token.chars().all(is_punct)
}

/// Case-folded, whitespace-collapsed surface form used for every equality check.
pub fn normalize(token: &str) -> String {
    token
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Joins tokens with single spaces.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Light suffix stripper for matching inflected verbs against their lemma or stem.
pub fn crude_stem(word: &str) -> String {
    let w = word.to_lowercase();
    for suffix in ["ing", "ed", "es", "s", "e"] {
        if let Some(stem) = w.strip_suffix(suffix) {
            if stem.chars().count() >= 3 {
                return undouble(stem);
            }
        }
    }
    w
}

fn undouble(stem: &str) -> String {
    let mut chars: Vec<char> = stem.chars().collect();
    let n = chars.len();
    if n >= 4 && chars[n - 1] == chars[n - 2] && !matches!(chars[n - 1], 'l' | 's' | 'z') {
        chars.pop();
    }
    chars.into_iter().collect()
}

/// Token-level Levenshtein distance.
pub fn token_edit_distance<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = usize::from(x.as_ref() != y.as_ref());
            cur[j + 1] = (prev[j] + sub).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent character-class tokenizer used as the oracle.
    fn oracle(line: &str) -> Vec<String> {
        let mut out = Vec::new();
        for word in line.split(' ').filter(|w| !w.is_empty()) {
            let cs: Vec<char> = word.chars().collect();
            let lead = cs.iter().take_while(|c| is_punct(**c)).count();
            let trail = if lead == cs.len() {
                0
            } else {
                cs.iter().rev().take_while(|c| is_punct(**c)).count()
            };
            for c in &cs[..lead] {
                out.push(c.to_string());
            }
            if lead < cs.len() - trail {
                out.push(cs[lead..cs.len() - trail].iter().collect());
            }
            for c in &cs[cs.len() - trail..] {
                out.push(c.to_string());
            }
        }
        out
    }

    #[test]
    fn matches_oracle_on_hand_built_lines() {
        let lines = [
            "He marched into the classroom.",
            "...",
            "!?",
            "\"Hello,\" she said.",
            "the sailor was at greater risk eating his meals aboard than fighting. ''",
            "well-oiled and already turning",
            "(parenthetical)",
            "don't stop",
            "- -- ---",
            "Shall I compare thee to a summer's day?",
        ];
        for line in lines {
            assert_eq!(tokenize(line), oracle(line), "line {line:?}");
        }
    }

    #[test]
    fn punctuation_only_line_keeps_punctuation_tokens() {
        assert_eq!(tokenize("?!"), vec!["?", "!"]);
        assert!(tokenize("?!").iter().all(|t| is_punct_token(t)));
    }

    #[test]
    fn chunk_spans_cover_tokens() {
        let text = "\"Hello,\" she said.";
        let spans = chunk_spans(text);
        assert_eq!(spans, vec![(0, 4), (4, 1), (5, 2)]);
        let total: usize = spans.iter().map(|s| s.1).sum();
        assert_eq!(total, tokenize(text).len());
    }

    #[test]
    fn stems_inflections() {
        assert_eq!(crude_stem("absorbed"), "absorb");
        assert_eq!(crude_stem("absorb"), "absorb");
        assert_eq!(crude_stem("eating"), "eat");
        assert_eq!(crude_stem("eats"), "eat");
        assert_eq!(crude_stem("stopped"), "stop");
        assert_eq!(crude_stem("pour"), "pour");
    }

    #[test]
    fn edit_distance() {
        assert_eq!(token_edit_distance(&["a", "b", "c"], &["a", "x", "c"]), 1);
        assert_eq!(token_edit_distance(&["a", "b"], &["a", "b"]), 0);
        assert_eq!(token_edit_distance::<&str, &str>(&[], &["a"]), 1);
    }
}
