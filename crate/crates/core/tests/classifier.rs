use metaphor_core::classifier::{
    evaluate, train_classifier, Backend, ClassificationMetrics, ClassifierConfig, Confusion, Scorer, TrainedClassifier,
};
use metaphor_core::corpus::{Label, TokenizedSentence};
use metaphor_core::mock::FnScorer;
use metaphor_core::par::ExecutionMode;
use metaphor_core::rng::substream;
use metaphor_core::synthetic::{lexicon_dataset, marker_dataset, LITERAL_VERBS, METAPHOR_VERBS};
use rand::Rng;

/// Records whose first token carries the prediction, so a scorer can reproduce any confusion matrix.
fn table(c: Confusion) -> Vec<TokenizedSentence> {
    let mut out = Vec::new();
    let mut push = |n: usize, gold: Label, pred: &str| {
        for _ in 0..n {
            let i = out.len();
            out.push(TokenizedSentence::labeled(format!("r{i}"), format!("{pred} x"), "custom", gold, []));
        }
    };
    push(c.tp, Label::Metaphorical, "yes");
    push(c.fp, Label::Literal, "yes");
    push(c.fn_, Label::Metaphorical, "no");
    push(c.tn, Label::Literal, "no");
    out
}

#[test]
fn evaluate_matches_textbook_formulas() {
    let scorer = FnScorer(|t: &[String]| if t[0] == "yes" { 0.8 } else { 0.2 });
    let mut rng = substream(3, "confusions");
    for _ in 0..100 {
        let c = Confusion {
            tp: rng.gen_range(0..40),
            fp: rng.gen_range(0..40),
            fn_: rng.gen_range(0..40),
            tn: rng.gen_range(1..40),
        };
        let m = evaluate(&scorer, &table(c), 0.5, ExecutionMode::Parallel).unwrap();
        let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let a = (tp + tn) / (tp + fp + fn_ + tn);
        assert_eq!(m.confusion, c);
        for (x, y) in [(m.precision, p), (m.recall, r), (m.f1, f), (m.accuracy, a)] {
            assert!((x - y).abs() <= 1e-9);
        }
    }
}

#[test]
fn every_feature_backend_learns_the_marker() {
    let train = marker_dataset(200, "blazed", 1);
    let test = marker_dataset(60, "blazed", 2);
    for backend in Backend::ALL.into_iter().filter(|b| b.is_feature_based()) {
        let clf = train_classifier(&train, "synthetic", "train", &ClassifierConfig::new(backend), ExecutionMode::Parallel).unwrap();
        let m = evaluate(&clf, &test, 0.5, ExecutionMode::Parallel).unwrap();
        // neighbours are dominated by the seven shared template words
        let floor = if backend == Backend::Knn { 0.8 } else { 1.0 };
        assert!(m.accuracy >= floor, "{backend}: {m:?}");
    }
}

#[test]
fn feature_backends_are_mode_independent_and_persist() {
    let train = lexicon_dataset(80, 80, &METAPHOR_VERBS, &LITERAL_VERBS, "t", 5);
    let test = lexicon_dataset(30, 30, &METAPHOR_VERBS, &LITERAL_VERBS, "e", 6);
    let dir = tempfile::tempdir().unwrap();
    for backend in Backend::ALL.into_iter().filter(|b| b.is_feature_based()) {
        let cfg = ClassifierConfig::new(backend);
        let seq = train_classifier(&train, "synthetic", "train", &cfg, ExecutionMode::Sequential).unwrap();
        let par = train_classifier(&train, "synthetic", "train", &cfg, ExecutionMode::Parallel).unwrap();
        let path = dir.path().join(backend.as_str());
        par.save(&path, None::<&ClassificationMetrics>).unwrap();
        let back = TrainedClassifier::load(&path).unwrap();
        assert_eq!(back.fingerprint, par.fingerprint);
        for s in &test {
            let a = seq.score(&s.tokens).unwrap();
            assert_eq!(a, par.score(&s.tokens).unwrap(), "{backend}");
            assert_eq!(a, back.score(&s.tokens).unwrap(), "{backend}");
        }
    }
}

#[test]
fn empty_input_is_rejected_by_every_scorer() {
    let train = marker_dataset(20, "blazed", 1);
    let clf = train_classifier(&train, "synthetic", "train", &ClassifierConfig::new(Backend::NaiveBayes), ExecutionMode::Sequential).unwrap();
    assert!(clf.score(&[]).is_err());
    let bad = FnScorer(|_: &[String]| 1.5);
    assert!(matches!(bad.score(&["x".into()]), Err(metaphor_core::Error::Contract(_))));
}
