use metaphor_core::classifier::{
    evaluate, train_classifier, Backend, ClassifierConfig, EncoderSpec, Scorer, TrainedClassifier,
};
use metaphor_core::locator::{locate, AttentionSource, LocatorConfig};
use metaphor_core::par::ExecutionMode;
use metaphor_core::reconstructor::{
    evaluate_reconstruction, mask_metaphor, reconstruct, train_reconstructor, ReconstructorBackend, ReconstructorConfig,
    TrainedReconstructor,
};
use metaphor_core::synthetic::{constant_metaphor_corpus, marker_dataset, VERB_INDEX};

fn encoder_config() -> ClassifierConfig {
    ClassifierConfig {
        encoder_spec: Some(EncoderSpec::scratch_preset()),
        ..ClassifierConfig::new(Backend::EncoderFinetune)
    }
}

#[test]
fn scratch_encoder_learns_marker_task() {
    let train = marker_dataset(120, "blazed", 1);
    let test = marker_dataset(40, "blazed", 2);
    let clf = train_classifier(&train, "synthetic", "train", &encoder_config(), ExecutionMode::Parallel).unwrap();
    let m = evaluate(&clf, &test, 0.5, ExecutionMode::Parallel).unwrap();
    assert_eq!(m.accuracy, 1.0, "{m:?}");
    let positive = test.iter().find(|s| s.is_metaphorical()).unwrap();
    assert!(clf.score(&positive.tokens).unwrap() > 0.9);

    let dir = tempfile::tempdir().unwrap();
    clf.save(dir.path(), Some(&m)).unwrap();
    let back = TrainedClassifier::load(dir.path()).unwrap();
    for s in &test {
        assert_eq!(back.score(&s.tokens).unwrap(), clf.score(&s.tokens).unwrap());
    }

    let (layers, heads) = clf.attention_dims().unwrap();
    for s in &test[..20] {
        let map = clf.attention_for(&s.tokens).unwrap();
        map.validate().unwrap();
        assert_eq!((map.layers(), map.heads()), (layers, heads));
        let covered: Vec<usize> = map.subword_to_word.iter().flatten().copied().collect();
        assert_eq!(covered, (0..s.tokens.len()).collect::<Vec<_>>());
        let cfg = LocatorConfig {
            layer: layers,
            head: heads,
            ..LocatorConfig::default()
        };
        assert!(locate(&map, &cfg, &[VERB_INDEX]).unwrap().predicted_index < s.tokens.len());
    }
}

#[test]
fn classical_backend_has_no_attention() {
    let train = marker_dataset(40, "blazed", 1);
    let clf = train_classifier(
        &train,
        "synthetic",
        "train",
        &ClassifierConfig::new(Backend::LogisticRegression),
        ExecutionMode::Sequential,
    )
    .unwrap();
    assert!(clf.attention_dims().is_none());
    assert!(matches!(
        clf.attention_for(&train[0].tokens),
        Err(metaphor_core::Error::UnsupportedBackend(_))
    ));
}

fn reconstructor_round_trip(backend: ReconstructorBackend) {
    let train = constant_metaphor_corpus(150, "blazed", 11);
    let test = constant_metaphor_corpus(50, "blazed", 12);
    let config = ReconstructorConfig {
        epochs: 10,
        ..ReconstructorConfig::scratch_preset(backend)
    };
    let model = train_reconstructor(&train, None, &config, ExecutionMode::Parallel).unwrap();
    let report = evaluate_reconstruction(&model, &test, true, ExecutionMode::Parallel).unwrap();
    assert!(report.accuracy_overall >= 0.95, "{report:?}");

    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = TrainedReconstructor::load(dir.path()).unwrap();
    let m = mask_metaphor(&test[0]).unwrap();
    assert_eq!(
        reconstruct(&back, &m, 3).unwrap(),
        reconstruct(&model, &m, 3).unwrap()
    );
}

#[test]
fn masked_token_reconstructor_restores_blazed() {
    reconstructor_round_trip(ReconstructorBackend::MaskedTokenPrediction);
}

#[test]
fn seq2seq_reconstructor_restores_blazed() {
    reconstructor_round_trip(ReconstructorBackend::Seq2seqInfilling);
}
