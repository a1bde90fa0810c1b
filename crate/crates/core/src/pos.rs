//! Coarse part-of-speech tagging.
//!
//! The pipeline only needs to tell content verbs, nouns and adjectives apart
//! from everything else, so tags are four-valued. Any tagger can be plugged
//! in through [`Tagger`]; [`HeuristicTagger`] is a dependency-free default
//! built from closed-class word lists, a small open-class lexicon, suffix
//! rules and one token of left context.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedSentence;
use crate::error::{Error, Result};
use crate::text::is_punct_token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Noun,
    Verb,
    Adj,
    Other,
}

impl PosTag {
    pub const CONTENT: [PosTag; 3] = [PosTag::Noun, PosTag::Verb, PosTag::Adj];

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Noun => "NOUN",
            PosTag::Verb => "VERB",
            PosTag::Adj => "ADJ",
            PosTag::Other => "OTHER",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NOUN" | "N" => Ok(PosTag::Noun),
            "VERB" | "V" => Ok(PosTag::Verb),
            "ADJ" | "A" | "ADJECTIVE" => Ok(PosTag::Adj),
            "OTHER" => Ok(PosTag::Other),
            other => Err(Error::invalid(format!("unknown POS tag `{other}`"))),
        }
    }
}

/// Maps a token sequence to one tag per token.
pub trait Tagger: Send + Sync {
    fn tag(&self, tokens: &[String]) -> Vec<PosTag>;
}

/// Fills `sentence.pos` using `tagger`, checking the tagger's output length.
pub fn pos_tag(mut sentence: TokenizedSentence, tagger: &dyn Tagger) -> Result<TokenizedSentence> {
    if sentence.tokens.is_empty() {
        return Err(Error::invalid(format!(
            "sentence {} has no tokens to tag",
            sentence.id
        )));
    }
    let tags = tagger.tag(&sentence.tokens);
    if tags.len() != sentence.tokens.len() {
        return Err(Error::Contract(format!(
            "tagger returned {} tags for {} tokens (sentence {})",
            tags.len(),
            sentence.tokens.len(),
            sentence.id
        )));
    }
    sentence.pos = Some(tags);
    Ok(sentence)
}

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "my", "your", "his", "her", "its", "our",
    "their", "some", "any", "no", "every", "each", "either", "neither", "another", "such", "what",
    "which", "whose", "all", "both", "many", "much", "few", "several", "thy", "thine", "mine",
];

const PRONOUNS: &[&str] = &[
    "i", "you", "he", "she", "it", "we", "they", "me", "him", "us", "them", "myself", "yourself",
    "himself", "herself", "itself", "ourselves", "themselves", "who", "whom", "thou", "thee", "ye",
    "one", "someone", "something", "anyone", "anything", "everyone", "everything", "nobody",
    "nothing", "hers", "ours", "theirs", "yours",
];

const SUBJECT_PRONOUNS: &[&str] = &["i", "you", "he", "she", "it", "we", "they", "thou", "ye", "who"];

const FUNCTION_WORDS: &[&str] = &[
    "of", "in", "on", "at", "by", "for", "with", "about", "against", "between", "into", "through",
    "during", "before", "after", "above", "below", "to", "from", "up", "down", "out", "off", "over",
    "under", "again", "further", "then", "once", "here", "there", "when", "where", "why", "how",
    "and", "but", "or", "nor", "so", "yet", "if", "because", "as", "until", "while", "than",
    "though", "although", "unless", "since", "upon", "within", "without", "across", "along",
    "among", "around", "behind", "beneath", "beside", "beyond", "near", "toward", "towards", "via",
    "not", "very", "too", "also", "just", "only", "even", "still", "already", "never", "always",
    "often", "ever", "now", "soon", "perhaps", "almost", "quite", "rather", "yes", "o", "oh", "nay",
    "whether", "thus", "hence", "o'er", "'s", "'", "n't", "like", "per", "onto", "amid", "till",
    "more", "most", "less", "least", "well", "ere", "hath", "doth", "shalt", "wilt", "art", "thee",
];

/// Auxiliaries and modals are tagged OTHER: they are never useful mask targets.
const AUXILIARIES: &[&str] = &[
    "be", "am", "is", "are", "was", "were", "been", "being", "have", "has", "had", "having", "do",
    "does", "did", "will", "would", "shall", "should", "can", "could", "may", "might", "must",
    "'re", "'ve", "'ll", "'d", "'m",
];

const MODALS: &[&str] = &[
    "will", "would", "shall", "should", "can", "could", "may", "might", "must", "to", "did", "does",
    "do", "didn't", "don't", "doesn't", "won't", "can't", "cannot",
];

const VERBS: &[&str] = &[
    "go", "went", "gone", "come", "came", "make", "made", "take", "took", "taken", "see", "saw",
    "seen", "know", "knew", "known", "get", "got", "give", "gave", "given", "find", "found",
    "think", "thought", "tell", "told", "become", "became", "leave", "left", "feel", "felt",
    "bring", "brought", "begin", "began", "begun", "keep", "kept", "hold", "held", "write",
    "wrote", "written", "stand", "stood", "hear", "heard", "let", "mean", "meant", "set", "meet",
    "met", "run", "ran", "pay", "paid", "sit", "sat", "speak", "spoke", "spoken", "lie", "lay",
    "lead", "led", "read", "grow", "grew", "grown", "lose", "lost", "fall", "fell", "fallen",
    "send", "sent", "build", "built", "understand", "understood", "draw", "drew", "drawn", "break",
    "broke", "broken", "spend", "spent", "cut", "rise", "rose", "risen", "drive", "drove",
    "driven", "buy", "bought", "wear", "wore", "worn", "choose", "chose", "chosen", "seek",
    "sought", "throw", "threw", "thrown", "catch", "caught", "deal", "dealt", "win", "won",
    "forget", "forgot", "sing", "sang", "sung", "fly", "flew", "flown", "shine", "shone", "sleep",
    "slept", "weep", "wept", "say", "said", "eat", "ate", "eaten", "drink", "drank", "swim",
    "swam", "sink", "sank", "sunk", "burn", "burnt", "pour", "absorb", "devour", "march", "blaze",
    "kill", "attack", "destroy", "grasp", "swallow", "pierce", "sweep", "swept", "scream", "shout",
    "whisper", "bleed", "bled", "dance", "wander", "flow", "melt", "freeze", "froze", "frozen",
    "play", "produce", "release", "perform", "record", "compose", "use", "develop", "design",
    "include", "create", "allow", "provide", "support", "require", "become", "remain", "appear",
    "seem", "love", "hate", "want", "need", "like", "die", "died", "live", "lived", "walk",
    "talk", "look", "gaze", "smile", "laugh", "cry", "fade", "bloom", "shake", "shook", "tremble",
    "stir", "sail", "glide", "soar", "roar", "crush", "drown", "kiss", "touch", "ring", "rang",
    "strike", "struck", "bear", "bore", "born", "borne", "dwell", "dwelt", "hang", "hung",
];

const ADJECTIVES: &[&str] = &[
    "good", "new", "first", "last", "long", "great", "little", "own", "other", "old", "right",
    "big", "high", "different", "small", "large", "next", "early", "young", "important", "public",
    "bad", "same", "able", "hot", "cold", "warm", "cool", "dark", "bright", "light", "deep",
    "sweet", "bitter", "soft", "hard", "green", "red", "blue", "white", "black", "golden", "grey",
    "gray", "pale", "fair", "wild", "calm", "quiet", "loud", "silent", "sad", "happy", "glad",
    "poor", "rich", "free", "full", "empty", "true", "false", "strong", "weak", "slow", "fast",
    "quick", "dead", "alive", "holy", "proud", "fierce", "gentle", "tender", "lonely", "lone",
    "vast", "wide", "narrow", "thin", "thick", "heavy", "fresh", "clear", "dim", "sharp", "dull",
    "brave", "fond", "vile", "popular", "digital", "electronic", "modern", "early", "late",
    "main", "major", "minor", "several", "various", "open", "close", "real", "sure", "whole",
    "entire", "human", "social", "national", "local", "single", "common", "simple", "certain",
    "possible", "available", "free", "low", "short", "final", "recent", "early", "mere", "sole",
];

const NOUNS: &[&str] = &[
    "time", "year", "people", "way", "day", "man", "men", "woman", "women", "child", "children",
    "world", "life", "hand", "part", "place", "case", "week", "company", "system", "program",
    "question", "work", "government", "number", "night", "point", "home", "water", "room",
    "mother", "area", "money", "story", "fact", "month", "lot", "study", "book", "eye", "eyes",
    "job", "word", "business", "issue", "side", "kind", "head", "house", "service", "friend",
    "father", "power", "hour", "game", "line", "end", "member", "law", "car", "city", "name",
    "team", "minute", "idea", "kid", "body", "information", "back", "parent", "face", "others",
    "level", "office", "door", "health", "person", "art", "war", "history", "party", "result",
    "change", "morning", "reason", "research", "girl", "guy", "moment", "air", "teacher",
    "force", "education", "heart", "soul", "sea", "sky", "sun", "moon", "star", "stars", "wind",
    "rain", "fire", "earth", "love", "death", "god", "king", "queen", "lord", "land", "tree",
    "flower", "rose", "song", "music", "band", "album", "guitar", "piano", "data", "software",
    "computer", "network", "device", "technology", "meal", "meals", "soup", "risk", "classroom",
    "night", "forest", "wildfire", "speed", "regime", "wheels", "scream", "river", "mountain",
    "field", "voice", "blood", "dream", "dreams", "spring", "summer", "winter", "autumn",
];

/// Dependency-free fallback tagger.
#[derive(Debug, Clone)]
pub struct HeuristicTagger {
    lexicon: HashMap<&'static str, Entry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Entry {
    Det,
    Pron,
    SubjPron,
    Func,
    Aux,
    Open(PosTag),
}

impl Default for HeuristicTagger {
    fn default() -> Self {
        let mut lexicon = HashMap::new();
        for w in NOUNS {
            lexicon.insert(*w, Entry::Open(PosTag::Noun));
        }
        for w in ADJECTIVES {
            lexicon.insert(*w, Entry::Open(PosTag::Adj));
        }
        for w in VERBS {
            lexicon.insert(*w, Entry::Open(PosTag::Verb));
        }
        for w in FUNCTION_WORDS {
            lexicon.insert(*w, Entry::Func);
        }
        for w in AUXILIARIES {
            lexicon.insert(*w, Entry::Aux);
        }
        for w in PRONOUNS {
            lexicon.insert(*w, Entry::Pron);
        }
        for w in SUBJECT_PRONOUNS {
            lexicon.insert(*w, Entry::SubjPron);
        }
        for w in DETERMINERS {
            lexicon.insert(*w, Entry::Det);
        }
        Self { lexicon }
    }
}

fn suffix_guess(w: &str) -> Option<PosTag> {
    const NOUN_SUFFIXES: &[&str] = &[
        "ness", "ment", "tion", "sion", "ity", "ism", "ist", "ship", "hood", "ance", "ence",
        "dom", "ure", "age", "ery",
    ];
    const ADJ_SUFFIXES: &[&str] = &[
        "ous", "ful", "less", "ive", "able", "ible", "ical", "ic", "ish", "ary", "ant", "ent",
        "al", "y",
    ];
    const VERB_SUFFIXES: &[&str] = &["ize", "ise", "ify", "ate", "en"];
    let long_enough = |s: &str| w.len() >= s.len() + 3;
    if w.ends_with("ly") && w.len() > 4 {
        return Some(PosTag::Other);
    }
    if (w.ends_with("ed") || w.ends_with("ing")) && w.len() > 4 {
        return Some(PosTag::Verb);
    }
    if NOUN_SUFFIXES.iter().any(|s| w.ends_with(s) && long_enough(s)) {
        return Some(PosTag::Noun);
    }
    if ADJ_SUFFIXES.iter().any(|s| w.ends_with(s) && long_enough(s)) {
        return Some(PosTag::Adj);
    }
    if VERB_SUFFIXES.iter().any(|s| w.ends_with(s) && long_enough(s)) {
        return Some(PosTag::Verb);
    }
    None
}

impl HeuristicTagger {
    fn lookup(&self, w: &str) -> Option<Entry> {
        if let Some(e) = self.lexicon.get(w) {
            return Some(*e);
        }
        // inflected open-class forms: "marches", "dreams", "blazed"
        for suffix in ["est", "er"] {
            if let Some(base) = w.strip_suffix(suffix) {
                if ADJECTIVES.contains(&base) {
                    return Some(Entry::Open(PosTag::Adj));
                }
            }
        }
        for suffix in ["es", "s", "ed", "d", "ing"] {
            if let Some(base) = w.strip_suffix(suffix) {
                if let Some(Entry::Open(tag)) = self.lexicon.get(base) {
                    let tag = match (suffix, tag) {
                        ("ed" | "d" | "ing", _) => PosTag::Verb,
                        (_, t) => *t,
                    };
                    return Some(Entry::Open(tag));
                }
            }
        }
        None
    }
}

impl Tagger for HeuristicTagger {
    fn tag(&self, tokens: &[String]) -> Vec<PosTag> {
        let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
        let entries: Vec<Option<Entry>> = lower.iter().map(|w| self.lookup(w)).collect();
        let mut tags = Vec::with_capacity(tokens.len());

        for (i, w) in lower.iter().enumerate() {
            if is_punct_token(w) || w.chars().any(|c| c.is_ascii_digit()) {
                tags.push(PosTag::Other);
                continue;
            }
            let prev = i.checked_sub(1).and_then(|j| entries[j]);
            let prev_word = i.checked_sub(1).map(|j| lower[j].as_str());
            let prev_tag = tags.last().copied();
            let after_det = matches!(prev, Some(Entry::Det));
            let after_modal = prev_word.is_some_and(|p| MODALS.contains(&p));
            let after_subject = matches!(prev, Some(Entry::SubjPron))
                || (prev_tag == Some(PosTag::Noun) && i >= 2);

            let tag = match entries[i] {
                Some(Entry::Det | Entry::Pron | Entry::SubjPron | Entry::Func | Entry::Aux) => {
                    PosTag::Other
                }
                Some(Entry::Open(PosTag::Verb)) if after_det => PosTag::Noun,
                Some(Entry::Open(PosTag::Noun)) if after_modal => PosTag::Verb,
                Some(Entry::Open(tag)) => tag,
                None => {
                    let capitalized = tokens[i].chars().next().is_some_and(char::is_uppercase);
                    if capitalized && i > 0 {
                        PosTag::Noun
                    } else if after_modal {
                        PosTag::Verb
                    } else {
                        match suffix_guess(w) {
                            Some(PosTag::Verb) if after_det => {
                                if w.ends_with("ed") {
                                    PosTag::Adj
                                } else {
                                    PosTag::Noun
                                }
                            }
                            Some(tag) => tag,
                            None if after_subject && !after_det => PosTag::Verb,
                            None => PosTag::Noun,
                        }
                    }
                }
            };
            tags.push(tag);
        }

        // an adjective-looking word right before punctuation or a function word,
        // preceded by a determiner, is the head noun ("the light .")
        for i in 1..tags.len() {
            let next_is_noun = tags.get(i + 1) == Some(&PosTag::Noun);
            if tags[i] == PosTag::Adj && matches!(entries[i - 1], Some(Entry::Det)) && !next_is_noun
            {
                let next_other = tags.get(i + 1).is_none_or(|t| *t == PosTag::Other);
                if next_other && !ADJECTIVES.contains(&lower[i].as_str()) {
                    tags[i] = PosTag::Noun;
                }
            }
        }
        tags
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn tags(s: &str) -> Vec<PosTag> {
        HeuristicTagger::default().tag(&tokenize(s))
    }

    #[test]
    fn marched_is_a_verb() {
        use PosTag::*;
        assert_eq!(
            tags("He marched into the classroom"),
            vec![Other, Verb, Other, Other, Noun]
        );
    }

    #[test]
    fn hand_checked_sentences() {
        use PosTag::*;
        // tags checked by hand against a standard treebank reading
        assert_eq!(
            tags("The scream pierced the night ."),
            vec![Other, Noun, Verb, Other, Noun, Other]
        );
        assert_eq!(
            tags("the sailor was at greater risk eating his meals"),
            vec![Other, Noun, Other, Other, Adj, Noun, Verb, Other, Noun]
        );
        assert_eq!(tags("She sings sweet songs"), vec![Other, Verb, Adj, Noun]);
        assert_eq!(tags("a bright lamp"), vec![Other, Adj, Noun]);
    }

    #[test]
    fn single_token_and_punctuation() {
        assert_eq!(tags("Music").len(), 1);
        assert_eq!(tags("... !"), vec![PosTag::Other; 4]);
    }

    struct Broken;
    impl Tagger for Broken {
        fn tag(&self, _tokens: &[String]) -> Vec<PosTag> {
            vec![PosTag::Noun]
        }
    }

    #[test]
    fn length_mismatch_is_a_contract_violation() {
        let s = TokenizedSentence::unlabeled("x", "two words", "custom");
        assert!(matches!(pos_tag(s, &Broken), Err(Error::Contract(_))));
        let empty = TokenizedSentence::unlabeled("y", "", "custom");
        assert!(matches!(
            pos_tag(empty, &HeuristicTagger::default()),
            Err(Error::InvalidInput(_))
        ));
    }
}
