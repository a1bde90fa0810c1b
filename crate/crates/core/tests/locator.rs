use metaphor_core::classifier::true_positives;
use metaphor_core::corpus::{Label, TokenizedSentence};
use metaphor_core::locator::{evaluate_location, locate, sweep_attention, word_scores, Aggregation, AttentionMap, LocatorConfig};
use metaphor_core::mock::{OneHotAttention, UniformAttention};
use metaphor_core::par::ExecutionMode;
use metaphor_core::rng::substream;
use rand::Rng;

fn sentences(n: usize) -> Vec<TokenizedSentence> {
    (0..n)
        .map(|i| {
            TokenizedSentence::labeled(
                format!("s{i}"),
                format!("w0 w1 w2 w3 w4 item{i}"),
                "custom",
                Label::Metaphorical,
                [2],
            )
        })
        .collect()
}

#[test]
fn one_hot_at_gold_is_always_right() {
    let data = sentences(25);
    let stub = OneHotAttention { layers: 12, heads: 12, score: 0.9, pick: |_: &[String]| 2 };
    let r = evaluate_location(&stub, &data, 0.5, &LocatorConfig::default(), ExecutionMode::Parallel)
        .unwrap()
        .unwrap();
    assert_eq!((r.evaluated, r.accuracy), (25, 1.0));
}

#[test]
fn seven_of_ten_correct() {
    let data = sentences(10);
    let stub = OneHotAttention {
        layers: 12,
        heads: 12,
        score: 0.9,
        pick: |t: &[String]| {
            let i: usize = t[5].trim_start_matches("item").parse().unwrap();
            if i < 7 { 2 } else { 4 }
        },
    };
    let r = evaluate_location(&stub, &data, 0.5, &LocatorConfig::default(), ExecutionMode::Sequential)
        .unwrap()
        .unwrap();
    assert_eq!(r.correct, 7);
    assert!((r.accuracy - 0.7).abs() < 1e-15);
}

#[test]
fn only_true_positives_are_evaluated() {
    let mut data = sentences(12);
    for s in data.iter_mut().skip(8) {
        s.label = Some(Label::Literal);
        s.metaphor_indices.clear();
    }
    let stub = OneHotAttention {
        layers: 2,
        heads: 2,
        score: 0.9,
        pick: |_: &[String]| 2,
    };
    let cfg = LocatorConfig { layer: 1, head: 2, ..LocatorConfig::default() };
    let r = evaluate_location(&stub, &data, 0.5, &cfg, ExecutionMode::Parallel).unwrap().unwrap();
    let tp = true_positives(&stub, &data, 0.5, ExecutionMode::Parallel).unwrap();
    assert_eq!(r.evaluated, tp.len());
    assert_eq!(r.evaluated, 8);

    let rejecting = OneHotAttention { score: 0.2, ..stub };
    assert!(evaluate_location(&rejecting, &data, 0.5, &cfg, ExecutionMode::Parallel).unwrap().is_none());
    let out_of_range = LocatorConfig { layer: 3, ..cfg };
    assert!(evaluate_location(&rejecting, &data, 0.5, &out_of_range, ExecutionMode::Parallel).is_err());
}

#[test]
fn uniform_attention_and_sweep() {
    let data = sentences(6);
    let stub = UniformAttention { layers: 3, heads: 4, score: 0.9 };
    let r = evaluate_location(&stub, &data, 0.5, &LocatorConfig { layer: 3, head: 4, ..LocatorConfig::default() }, ExecutionMode::Sequential)
        .unwrap()
        .unwrap();
    assert!(r.sentences.iter().all(|s| s.result.predicted_index == 0));
    let g = sweep_attention(&stub, &data, 0.5, Aggregation::Sum, ExecutionMode::Parallel).unwrap().unwrap();
    assert_eq!(g.accuracy.len(), 3);
    assert!(g.accuracy.iter().all(|row| row.len() == 4 && row.iter().all(|&a| a == 0.0)));
    assert_eq!((g.best_layer, g.best_head), (1, 1));
}

/// Random alignments: each word gets 1-3 subwords between two specials.
fn random_map(seed: u64) -> (AttentionMap, Vec<Vec<usize>>) {
    let mut rng = substream(seed, "alignment");
    let words = rng.gen_range(1..6);
    let mut align = vec![None];
    let mut groups = vec![Vec::new(); words];
    for (w, g) in groups.iter_mut().enumerate() {
        for _ in 0..rng.gen_range(1..4) {
            g.push(align.len());
            align.push(Some(w));
        }
    }
    align.push(None);
    let raw: Vec<f64> = (0..align.len()).map(|_| rng.gen::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let row = raw.iter().map(|x| x / total).collect();
    (AttentionMap { rows: vec![vec![row]], subword_to_word: align }, groups)
}

#[test]
fn sum_and_max_match_brute_force() {
    let cfg = LocatorConfig { layer: 1, head: 1, aggregation: Aggregation::Sum };
    let max_cfg = LocatorConfig { aggregation: Aggregation::Max, ..cfg };
    for seed in 0..20 {
        let (map, groups) = random_map(seed);
        map.validate().unwrap();
        let row = &map.rows[0][0];
        let sums = word_scores(&map, &cfg).unwrap();
        let maxes = word_scores(&map, &max_cfg).unwrap();
        for (w, g) in groups.iter().enumerate() {
            let mut s = 0.0;
            let mut m = f64::MIN;
            for &i in g {
                s += row[i];
                m = m.max(row[i]);
            }
            assert!((sums[w] - s).abs() <= 1e-12);
            assert_eq!(maxes[w], m);
        }
        let mut scaled = map.clone();
        scaled.rows[0][0].iter_mut().for_each(|x| *x *= 3.7);
        assert_eq!(
            locate(&map, &cfg, &[0]).unwrap().predicted_index,
            locate(&scaled, &cfg, &[0]).unwrap().predicted_index
        );
    }
}
