//! Templated sentences with known labels, POS tags and metaphor positions.
//!
//! Every sentence follows `The ADJ NOUN VERB PREP the NOUN .`, so tags are
//! exact and the verb always sits at index 3.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Label, TokenizedSentence};
use crate::pos::PosTag;
use crate::rng::substream;

pub const VERB_INDEX: usize = 3;

pub const ADJECTIVES: [&str; 12] = [
    "quiet", "old", "small", "bright", "cold", "green", "tall", "young", "dark", "gentle", "busy", "empty",
];
pub const SUBJECTS: [&str; 12] = [
    "sailor", "teacher", "river", "engine", "gardener", "city", "child", "storm", "violinist", "doctor", "farmer", "train",
];
pub const PREPOSITIONS: [&str; 6] = ["through", "across", "into", "near", "over", "past"];
pub const OBJECTS: [&str; 12] = [
    "harbor", "classroom", "valley", "station", "kitchen", "forest", "bridge", "market", "meadow", "village", "hall", "road",
];
pub const LITERAL_VERBS: [&str; 24] = [
    "walked", "stood", "waited", "rested", "stayed", "looked", "moved", "worked", "stopped", "turned", "arrived", "sat",
    "paused", "lingered", "strolled", "drove", "rode", "hiked", "wandered", "returned", "traveled", "ran", "jogged", "climbed",
];
pub const METAPHOR_VERBS: [&str; 24] = [
    "blazed", "devoured", "swallowed", "pierced", "drowned", "melted", "ignited", "shattered", "bloomed", "thundered",
    "galloped", "bled", "wept", "roared", "sang", "danced", "burned", "froze", "bristled", "smoldered", "sparkled",
    "hungered", "stormed", "trembled",
];

const TAGS: [PosTag; 8] = [
    PosTag::Other,
    PosTag::Adj,
    PosTag::Noun,
    PosTag::Verb,
    PosTag::Other,
    PosTag::Other,
    PosTag::Noun,
    PosTag::Other,
];

/// One templated sentence; labeled sentences flag the verb as the metaphor.
pub fn sentence<R: Rng>(id: String, source: &str, verb: &str, label: Option<Label>, rng: &mut R) -> TokenizedSentence {
    let text = format!(
        "The {} {} {verb} {} the {} .",
        ADJECTIVES.choose(rng).expect("non-empty"),
        SUBJECTS.choose(rng).expect("non-empty"),
        PREPOSITIONS.choose(rng).expect("non-empty"),
        OBJECTS.choose(rng).expect("non-empty"),
    );
    let mut s = match label {
        Some(l) => TokenizedSentence::labeled(id, text, source, l, [VERB_INDEX]),
        None => TokenizedSentence::unlabeled(id, text, source),
    };
    s.pos = Some(TAGS.to_vec());
    s
}

/// `n` labeled sentences, alternating metaphorical (verb = `marker`) and
/// literal (a random literal verb), so the marker alone decides the label.
pub fn marker_dataset(n: usize, marker: &str, seed: u64) -> Vec<TokenizedSentence> {
    let mut rng = substream(seed, "synthetic-marker");
    (0..n)
        .map(|i| {
            let id = format!("marker-{i:04}");
            if i % 2 == 0 {
                sentence(id, "synthetic", marker, Some(Label::Metaphorical), &mut rng)
            } else {
                let v = LITERAL_VERBS.choose(&mut rng).expect("non-empty");
                sentence(id, "synthetic", v, Some(Label::Literal), &mut rng)
            }
        })
        .collect()
}

/// `n` metaphorical sentences whose only metaphor token is `verb`.
pub fn constant_metaphor_corpus(n: usize, verb: &str, seed: u64) -> Vec<TokenizedSentence> {
    let mut rng = substream(seed, "synthetic-constant");
    (0..n)
        .map(|i| sentence(format!("templ-{i:04}"), "synthetic", verb, Some(Label::Metaphorical), &mut rng))
        .collect()
}

/// `n` unlabeled, POS-tagged sentences with literal verbs.
pub fn literal_corpus(n: usize, source: &str, seed: u64) -> Vec<TokenizedSentence> {
    let mut rng = substream(seed, &format!("synthetic-literal-{source}"));
    (0..n)
        .map(|i| {
            let v = LITERAL_VERBS.choose(&mut rng).expect("non-empty");
            sentence(format!("{source}-{i:05}"), source, v, None, &mut rng)
        })
        .collect()
}

/// Labeled sentences drawing metaphorical verbs from `met_verbs` and literal verbs from `lit_verbs`.
pub fn lexicon_dataset(
    n_met: usize,
    n_lit: usize,
    met_verbs: &[&str],
    lit_verbs: &[&str],
    prefix: &str,
    seed: u64,
) -> Vec<TokenizedSentence> {
    let mut rng = substream(seed, &format!("synthetic-lexicon-{prefix}"));
    let mut out = Vec::with_capacity(n_met + n_lit);
    for i in 0..n_met + n_lit {
        let id = format!("{prefix}-{i:05}");
        let s = if i < n_met {
            sentence(id, "synthetic", met_verbs.choose(&mut rng).expect("non-empty"), Some(Label::Metaphorical), &mut rng)
        } else {
            sentence(id, "synthetic", lit_verbs.choose(&mut rng).expect("non-empty"), Some(Label::Literal), &mut rng)
        };
        out.push(s);
    }
    out.shuffle(&mut rng);
    out
}

/// Data for the augmentation check: the base training set knows only a few
/// metaphorical verbs, the system pool carries the rest, and the test set
/// uses all of them.
#[derive(Debug, Clone)]
pub struct AugmentationScenario {
    pub base: Vec<TokenizedSentence>,
    pub system: Vec<TokenizedSentence>,
    pub literal_pool: Vec<TokenizedSentence>,
    pub test: Vec<TokenizedSentence>,
}

pub fn augmentation_scenario(seed: u64) -> AugmentationScenario {
    let (seen, unseen) = METAPHOR_VERBS.split_at(6);
    let test = lexicon_dataset(100, 100, &METAPHOR_VERBS, &LITERAL_VERBS, &format!("test{seed}"), seed);
    let held_out: std::collections::HashSet<&str> = test.iter().map(|s| s.text.as_str()).collect();
    let fresh = |pool: Vec<TokenizedSentence>| -> Vec<TokenizedSentence> {
        pool.into_iter().filter(|s| !held_out.contains(s.text.as_str())).take(300).collect()
    };
    let mut system = fresh(lexicon_dataset(400, 0, unseen, &LITERAL_VERBS, &format!("system{seed}"), seed));
    system.iter_mut().for_each(|s| s.source = "system".into());
    let mut literal_pool = fresh(literal_corpus(400, "wiki", seed));
    for s in &mut literal_pool {
        s.label = Some(Label::Literal);
    }
    AugmentationScenario {
        base: lexicon_dataset(60, 60, seen, &LITERAL_VERBS, &format!("base{seed}"), seed),
        system,
        literal_pool,
        test,
    }
}
