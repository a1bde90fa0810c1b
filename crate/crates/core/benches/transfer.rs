use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use metaphor_core::classifier::{score_all, train_classifier, Backend, ClassifierConfig};
use metaphor_core::locator::{sweep_attention, Aggregation};
use metaphor_core::mock::{ConstantReconstructor, UniformAttention};
use metaphor_core::par::ExecutionMode;
use metaphor_core::synthetic::{constant_metaphor_corpus, lexicon_dataset, literal_corpus, LITERAL_VERBS, METAPHOR_VERBS};
use metaphor_core::transfer::{transfer_stream, TransferConfig};

const MODES: [ExecutionMode; 2] = [ExecutionMode::Sequential, ExecutionMode::Parallel];

fn benches(c: &mut Criterion) {
    let train = lexicon_dataset(200, 200, &METAPHOR_VERBS, &LITERAL_VERBS, "bench", 1);
    let clf = train_classifier(&train, "synthetic", "train", &ClassifierConfig::new(Backend::LogisticRegression), ExecutionMode::Parallel)
        .expect("training on synthetic data");
    let corpus = literal_corpus(2000, "bench", 2);
    let recon = ConstantReconstructor("blazed".into());
    let config = TransferConfig {
        budget_n: 2000,
        max_attempts: 2000,
        ..TransferConfig::default()
    };

    let mut g = c.benchmark_group("transfer_stream");
    for mode in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| {
                let s = transfer_stream(&corpus, &clf, &recon, &config, mode, None).expect("valid config");
                black_box(s.count())
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("score_all");
    for mode in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| black_box(score_all(&clf, &corpus, mode).expect("scoring")))
        });
    }
    g.finish();

    let located = constant_metaphor_corpus(200, "blazed", 3);
    let stub = UniformAttention { layers: 12, heads: 12, score: 0.9 };
    let mut g = c.benchmark_group("sweep_attention");
    for mode in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| black_box(sweep_attention(&stub, &located, 0.5, Aggregation::Sum, mode).expect("sweep")))
        });
    }
    g.finish();
}

criterion_group! {
    name = transfer;
    config = Criterion::default().sample_size(10);
    targets = benches
}
criterion_main!(transfer);
