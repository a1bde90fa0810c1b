use std::collections::BTreeSet;
use std::path::Path;

use anyhow::Context;
use metaphor_core::classifier::{evaluate, train_classifier, true_positives, ClassificationMetrics};
use metaphor_core::corpus::{
    cache_path, fetch_topic_sentences, load_moh_x, load_plaintext_corpus, load_trofi, load_trofi_x, read_jsonl, read_sentences,
    split, DatasetName, HttpTransport, LabeledDataset, Label, LoadMode, Loaded, LoadReport, TokenizedSentence, WikipediaFetcher,
    DEV, TEST, TRAIN,
};
use metaphor_core::evalkit::{
    build_augmented_set, build_packet, ingest_scores, key_path, packet_path, read_packet, run_augmentation_experiment,
    summarize, AnnotationItem, Origin,
};
use metaphor_core::locator::{evaluate_location, heatmap, sweep_attention, Aggregation, AttentionSource};
use metaphor_core::pos::{pos_tag, HeuristicTagger};
use metaphor_core::reconstructor::{evaluate_reconstruction, train_reconstructor};
use metaphor_core::rng::substream;
use metaphor_core::transfer::{compute_ratios, transfer_stream, EmbeddingSimilarity, LexicalF1, Similarity, TransferRecord};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::artifact::{read_stamp, Run, HASH_FIELD};
use crate::backends::{ReconstructorHandle, ScorerHandle};
use crate::config::{RunConfig, SimilarityKind};
use crate::error::{data, resource, usage};

pub const DATASET_FILE: &str = "dataset.json";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const MODEL_DIR: &str = "model";
pub const TRANSFERS_FILE: &str = "transfers.jsonl";
pub const ATTEMPTS_FILE: &str = "attempts.jsonl";

fn load_mode(config: &RunConfig) -> LoadMode {
    if config.strict {
        LoadMode::Strict
    } else {
        LoadMode::Lenient
    }
}

fn read_dataset(path: &Path) -> anyhow::Result<LabeledDataset> {
    let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ds: LabeledDataset = serde_json::from_str(&raw).map_err(|e| data(format!("{}: {e}", path.display())))?;
    ds.validate()?;
    Ok(ds)
}

/// Tags sentences that arrive without POS tags.
fn tagged(records: Vec<TokenizedSentence>) -> anyhow::Result<Vec<TokenizedSentence>> {
    let tagger = HeuristicTagger::default();
    records
        .into_iter()
        .map(|s| if s.pos.is_some() { Ok(s) } else { pos_tag(s, &tagger) })
        .collect::<metaphor_core::Result<_>>()
        .map_err(Into::into)
}

/// JSON lines of sentences, or plain text with one sentence per line.
fn read_corpus(path: &Path, source: &str) -> anyhow::Result<Vec<TokenizedSentence>> {
    if path.extension().and_then(|e| e.to_str()) == Some("txt") {
        return Ok(load_plaintext_corpus(path, source)?.corpus.sentences);
    }
    Ok(read_sentences(path)?)
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    read_jsonl(path).map_err(Into::into)
}

fn accepted(records: Vec<TransferRecord>) -> Vec<TokenizedSentence> {
    records.iter().filter_map(TransferRecord::to_sentence).collect()
}

pub fn ingest(config: RunConfig) -> anyhow::Result<()> {
    let mut run = Run::new("ingest", config)?;
    let ing = run.config.ingest.clone();
    if ing.dataset.is_none() && ing.plaintext.is_none() && ing.wikipedia_topics.is_empty() {
        return Err(usage("ingest needs a dataset, a plain-text corpus or Wikipedia topics"));
    }
    let dataset_input = match ing.dataset {
        Some(_) => Some(run.input_file("dataset-input", ing.input.as_deref())?),
        None => None,
    };
    let plaintext = match &ing.plaintext {
        Some(p) => Some(run.input_file("plaintext", Some(p))?),
        None => None,
    };
    let mode = load_mode(&run.config);

    if let (Some(name), Some(input)) = (ing.dataset, dataset_input) {
        let Loaded { dataset, report } = match name {
            DatasetName::MohX => load_moh_x(&input, mode)?,
            DatasetName::Trofi => load_trofi(&input, mode)?,
            DatasetName::TrofiX => load_trofi_x(&input, mode)?,
            DatasetName::Custom => {
                let records = read_sentences(&input)?;
                let n = records.len();
                Loaded {
                    dataset: LabeledDataset::new(DatasetName::Custom, records)?,
                    report: LoadReport {
                        path: input.clone(),
                        rows: n,
                        loaded: n,
                        ..LoadReport::default()
                    },
                }
            }
        };
        let mut ds = split(dataset, ing.ratios, run.config.seed)?;
        ds.records = tagged(ds.records)?;
        log::info!("{}: {} records, {} skipped", name, ds.len(), report.skipped.len());
        run.write_json(DATASET_FILE, &ds)?;
        run.write_json("load-report.json", &report)?;
    }

    let mut corpus: Vec<TokenizedSentence> = Vec::new();
    if let Some(p) = plaintext {
        let load = load_plaintext_corpus(&p, &ing.source)?;
        if load.undecodable > 0 {
            log::warn!("{}: {} undecodable lines skipped", p.display(), load.undecodable);
        }
        corpus.extend(load.corpus.sentences);
    }
    if !ing.wikipedia_topics.is_empty() {
        let cache_dir = ing.cache_dir.clone().unwrap_or_else(|| run.path("cache"));
        let transport = HttpTransport::new()?;
        let fetcher = WikipediaFetcher::new(ing.wikipedia_endpoint.clone(), &transport);
        for topic in &ing.wikipedia_topics {
            let c = fetch_topic_sentences(topic, ing.wikipedia_per_topic, &fetcher, &cache_path(&cache_dir, topic))?;
            corpus.extend(c.sentences);
        }
    }
    if ing.plaintext.is_some() || !ing.wikipedia_topics.is_empty() {
        let corpus = tagged(corpus)?;
        log::info!("corpus: {} sentences", corpus.len());
        run.write_jsonl(CORPUS_FILE, &corpus)?;
    }
    run.finish()?;
    Ok(())
}

pub fn train_clf(config: RunConfig, split_name: &str) -> anyhow::Result<()> {
    let mut run = Run::new("train-clf", config)?;
    let ds_path = run.input_file("dataset", run.config.paths.dataset.clone().as_deref())?;
    let ds = read_dataset(&ds_path)?;
    let train = ds.split_records(split_name)?;
    let mode = run.config.mode();
    let clf = train_classifier(&train, ds.name.as_str(), split_name, &run.config.classifier, mode)?;
    let dev = ds.splits.contains_key(DEV).then(|| ds.split_records(DEV)).transpose()?;
    let metrics = match &dev {
        Some(d) if !d.is_empty() => Some(evaluate(&clf, d, clf.threshold(), mode)?),
        _ => None,
    };
    run.hash();
    clf.save(&run.path(MODEL_DIR), metrics.as_ref())?;
    run.record_dir(MODEL_DIR)?;
    run.fingerprint("classifier", &clf.fingerprint);
    if let Some(m) = &metrics {
        run.write_json("dev-metrics.json", m)?;
    }
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct MetricsDoc<'a> {
    dataset: String,
    split: &'a str,
    threshold: f64,
    #[serde(flatten)]
    metrics: ClassificationMetrics,
}

pub fn eval_clf(config: RunConfig, split_name: &str) -> anyhow::Result<()> {
    let mut run = Run::new("eval-clf", config)?;
    let spec = run.input_model("classifier", run.config.paths.classifier.clone().as_deref())?;
    let ds_path = run.input_file("dataset", run.config.paths.dataset.clone().as_deref())?;
    let clf = ScorerHandle::open(&spec)?;
    let ds = read_dataset(&ds_path)?;
    let records = ds.split_records(split_name)?;
    let h = clf.threshold(run.config.classifier.threshold_h);
    let metrics = evaluate(&clf, &records, h, run.config.mode())?;
    if let Some(c) = clf.trained() {
        run.fingerprint("classifier", &c.fingerprint);
    }
    run.write_json(
        METRICS_FILE,
        &MetricsDoc {
            dataset: ds.name.to_string(),
            split: split_name,
            threshold: h,
            metrics,
        },
    )?;
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct MmmTrainingDoc {
    true_positives: usize,
    split: String,
}

pub fn train_mmm(config: RunConfig, split_name: &str) -> anyhow::Result<()> {
    let mut run = Run::new("train-mmm", config)?;
    let spec = run.input_model("classifier", run.config.paths.classifier.clone().as_deref())?;
    let ds_path = run.input_file("dataset", run.config.paths.dataset.clone().as_deref())?;
    let clf = ScorerHandle::open(&spec)?;
    let ds = read_dataset(&ds_path)?;
    let mode = run.config.mode();
    let h = clf.threshold(run.config.classifier.threshold_h);
    let tp = tagged(true_positives(&clf, &ds.split_records(split_name)?, h, mode)?)?;
    if tp.is_empty() {
        return Err(data("the classifier has no true positives to train on"));
    }
    let lineage = clf.trained().map(|c| &c.fingerprint);
    let model = train_reconstructor(&tp, lineage, &run.config.reconstructor, mode)?;
    run.hash();
    model.save(&run.path(MODEL_DIR))?;
    run.record_dir(MODEL_DIR)?;
    run.fingerprint("reconstructor", &model.manifest.fingerprint);
    if let Some(f) = lineage {
        run.fingerprint("classifier", f);
    }
    run.write_json(
        "training.json",
        &MmmTrainingDoc {
            true_positives: tp.len(),
            split: split_name.into(),
        },
    )?;
    run.finish()?;
    Ok(())
}

pub fn eval_mmm(config: RunConfig, split_name: &str) -> anyhow::Result<()> {
    let mut run = Run::new("eval-mmm", config)?;
    let spec = run.input_model("reconstructor", run.config.paths.reconstructor.clone().as_deref())?;
    let ds_path = run.input_file("dataset", run.config.paths.dataset.clone().as_deref())?;
    let model = ReconstructorHandle::open(&spec)?;
    let ds = read_dataset(&ds_path)?;
    let records: Vec<TokenizedSentence> = tagged(ds.split_records(split_name)?)?
        .into_iter()
        .filter(|r| r.is_metaphorical() && !r.metaphor_indices.is_empty())
        .collect();
    let report = evaluate_reconstruction(&model, &records, true, run.config.mode())?;
    if let ReconstructorHandle::Trained(m) = &model {
        run.fingerprint("reconstructor", &m.manifest.fingerprint);
    }
    run.write_json("reconstruction.json", &report)?;
    run.finish()?;
    Ok(())
}

pub fn transfer(config: RunConfig) -> anyhow::Result<()> {
    let mut run = Run::new("transfer", config)?;
    let clf_spec = run.input_model("classifier", run.config.paths.classifier.clone().as_deref())?;
    let rec_spec = run.input_model("reconstructor", run.config.paths.reconstructor.clone().as_deref())?;
    let corpus_path = run.input_file("corpus", run.config.paths.corpus.clone().as_deref())?;
    let clf = ScorerHandle::open(&clf_spec)?;
    let recon = ReconstructorHandle::open(&rec_spec)?;
    let corpus = tagged(read_corpus(&corpus_path, &run.config.ingest.source)?)?;
    let mut cfg = run.config.transfer.config.clone();
    cfg.threshold_h = clf.threshold(cfg.threshold_h);
    let lexical = LexicalF1;
    let embedding;
    let similarity: Option<&dyn Similarity> = match run.config.transfer.similarity {
        SimilarityKind::None => None,
        SimilarityKind::Lexical => Some(&lexical),
        SimilarityKind::Embedding => {
            embedding = EmbeddingSimilarity::new(clf.trained().and_then(|c| c.encoder()));
            Some(&embedding)
        }
    };
    let mut stream = transfer_stream(&corpus, &clf, &recon, &cfg, run.config.mode(), similarity)?;
    let yielded = stream.by_ref().collect::<metaphor_core::Result<Vec<_>>>()?;
    let summary = stream.summary();
    let log = stream.into_log();
    if summary.shortfall > 0 {
        log::warn!("accepted {} of {} requested transfers", summary.accepted, summary.requested);
    }
    if let Some(c) = clf.trained() {
        run.fingerprint("classifier", &c.fingerprint);
    }
    if let ReconstructorHandle::Trained(m) = &recon {
        run.fingerprint("reconstructor", &m.manifest.fingerprint);
    }
    run.write_jsonl(TRANSFERS_FILE, &yielded)?;
    run.write_jsonl(ATTEMPTS_FILE, &log)?;
    run.write_json("transfer-summary.json", &summary)?;
    run.finish()?;
    Ok(())
}

pub fn ratios(config: RunConfig) -> anyhow::Result<()> {
    let mut run = Run::new("ratios", config)?;
    let attempts = run.input_file("attempts", run.config.paths.attempts.clone().as_deref())?;
    let log: Vec<TransferRecord> = read_records(&attempts)?;
    run.write_json("ratios.json", &compute_ratios(&log))?;
    run.finish()?;
    Ok(())
}

fn attention_inputs(run: &mut Run) -> anyhow::Result<(ScorerHandle, Vec<TokenizedSentence>, f64)> {
    let spec = run.input_model("classifier", run.config.paths.classifier.clone().as_deref())?;
    let ds_path = run.input_file("dataset", run.config.paths.dataset.clone().as_deref())?;
    let clf = ScorerHandle::open(&spec)?;
    if clf.attention_dims().is_none() {
        return Err(resource(format!("classifier {spec} exposes no attention; use an encoder backend")));
    }
    let ds = read_dataset(&ds_path)?;
    let records = ds.split_records(&run.config.locator.split)?;
    let h = clf.threshold(run.config.classifier.threshold_h);
    Ok((clf, records, h))
}

pub fn locate(config: RunConfig) -> anyhow::Result<()> {
    let mut run = Run::new("locate", config)?;
    let (clf, records, h) = attention_inputs(&mut run)?;
    let loc = run.config.locator.clone();
    let report = evaluate_location(&clf, &records, h, &loc.config, run.config.mode())?;
    let Some(report) = report else {
        return Err(data("no true positives to locate in this split"));
    };
    let maps = report
        .sentences
        .iter()
        .take(loc.heatmaps)
        .map(|s| {
            let sentence = records.iter().find(|r| r.id == s.id).expect("evaluated ids come from the split");
            heatmap(&clf, sentence, &loc.config)
        })
        .collect::<metaphor_core::Result<Vec<_>>>()?;
    run.write_json("location.json", &report)?;
    run.write_jsonl("heatmaps.jsonl", &maps)?;
    run.finish()?;
    Ok(())
}

pub fn sweep(config: RunConfig, aggregation: Aggregation) -> anyhow::Result<()> {
    let mut run = Run::new("sweep-attention", config)?;
    let (clf, records, h) = attention_inputs(&mut run)?;
    let Some(grid) = sweep_attention(&clf, &records, h, aggregation, run.config.mode())? else {
        return Err(data("no true positives to locate in this split"));
    };
    log::info!("best layer {} head {}: {:.4}", grid.best_layer, grid.best_head, grid.best_accuracy);
    run.write_json("sweep.json", &grid)?;
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct AugmentDoc {
    added_metaphorical: usize,
    added_literal: usize,
    leaks_replaced: Vec<String>,
    experiment: metaphor_core::evalkit::AugmentationResult,
}

pub fn augment(config: RunConfig) -> anyhow::Result<()> {
    let mut run = Run::new("augment", config)?;
    let ds_path = run.input_file("dataset", run.config.paths.dataset.clone().as_deref())?;
    let transfers = run.input_file("transfers", run.config.paths.transfers.clone().as_deref())?;
    let pool_path = run.input_file("corpus", run.config.paths.corpus.clone().as_deref())?;
    let ds = read_dataset(&ds_path)?;
    let system = accepted(read_records(&transfers)?);
    let literal: Vec<TokenizedSentence> = read_corpus(&pool_path, &run.config.ingest.source)?
        .into_iter()
        .map(|mut s| {
            s.label = Some(Label::Literal);
            s
        })
        .collect();
    let base = ds.split_records(TRAIN)?;
    let eval_split = run.config.augment.eval_split.clone();
    let eval = ds.split_records(&eval_split)?;
    let mut held_out = eval.clone();
    for name in [DEV, TEST] {
        if name != eval_split && ds.splits.contains_key(name) {
            held_out.extend(ds.split_records(name)?);
        }
    }
    let seed = run.config.seed;
    let aug = build_augmented_set(&base, &system, &literal, &held_out, run.config.augment.k_per_class, seed, run.config.strict)?;
    if !aug.leaks_replaced.is_empty() {
        log::warn!("{} pool sentences skipped as held-out leaks", aug.leaks_replaced.len());
    }
    let experiment = run_augmentation_experiment(&base, &aug.records, &eval, &run.config.classifier, run.config.mode())?;
    run.write_jsonl("augmented.jsonl", &aug.records)?;
    run.write_json(
        "augment.json",
        &AugmentDoc {
            added_metaphorical: aug.added_metaphorical,
            added_literal: aug.added_literal,
            leaks_replaced: aug.leaks_replaced,
            experiment,
        },
    )?;
    run.finish()?;
    Ok(())
}

/// Draws `n` items of one origin with a named substream.
fn draw(mut sentences: Vec<TokenizedSentence>, n: usize, seed: u64, stream: &str, what: &str) -> anyhow::Result<Vec<TokenizedSentence>> {
    if sentences.len() < n {
        return Err(data(format!("only {} {what} sentences available, {n} requested", sentences.len())));
    }
    sentences.shuffle(&mut substream(seed, stream));
    sentences.truncate(n);
    Ok(sentences)
}

pub fn eval_pack(config: RunConfig) -> anyhow::Result<()> {
    let mut run = Run::new("eval-pack", config)?;
    let transfers = run.input_file("transfers", run.config.paths.transfers.clone().as_deref())?;
    let ds_path = run.input_file("dataset", run.config.paths.dataset.clone().as_deref())?;
    let ev = run.config.eval.clone();
    let seed = run.config.seed;
    let system = draw(accepted(read_records(&transfers)?), ev.per_origin, seed, "pack-system", "system")?;
    let ds = read_dataset(&ds_path)?;
    let human_pool: Vec<TokenizedSentence> = ds
        .split_records(&ev.human_split)?
        .into_iter()
        .filter(|r| r.is_metaphorical() && !r.metaphor_indices.is_empty())
        .collect();
    let human = draw(human_pool, ev.per_origin, seed, "pack-human", "human metaphor")?;
    let items = |v: &[TokenizedSentence], origin: Origin, tag: &str| -> metaphor_core::Result<Vec<AnnotationItem>> {
        v.iter()
            .enumerate()
            .map(|(i, s)| AnnotationItem::from_sentence(format!("{tag}{i}"), s, origin))
            .collect()
    };
    let mut packet = build_packet(ev.packet_id.clone(), items(&system, Origin::System, "s")?, items(&human, Origin::Human, "h")?, seed)?;
    // ids follow the shuffled order so they reveal nothing about origin
    for (i, item) in packet.items.iter_mut().enumerate() {
        item.item_id = format!("{}-{:04}", ev.packet_id, i + 1);
    }
    let dir = run.out.clone();
    let name = |p: std::path::PathBuf| p.file_name().expect("file name").to_string_lossy().into_owned();
    run.write_json(&name(packet_path(&dir, &packet.packet_id)), &packet.public())?;
    run.write_json(&name(key_path(&dir, &packet.packet_id)), &packet.sealed_key())?;
    run.finish()?;
    Ok(())
}

pub fn eval_summarize(config: RunConfig) -> anyhow::Result<()> {
    let mut run = Run::new("eval-summarize", config)?;
    let dir = run
        .config
        .paths
        .packet_dir
        .clone()
        .ok_or_else(|| usage("eval-summarize needs a packet directory"))?;
    let id = run.config.eval.packet_id.clone();
    let public = run.input_file("packet", Some(&packet_path(&dir, &id)))?;
    run.input_file("key", Some(&key_path(&dir, &id)))?;
    let scores_path = run.input_file("scores", run.config.paths.scores.clone().as_deref())?;
    let packet = read_packet(&dir, &id)?;
    check_lineage(&public, &scores_path)?;
    let ingested = ingest_scores(&scores_path, Some(&packet.item_ids()), load_mode(&run.config))?;
    if !ingested.rejected.is_empty() {
        log::warn!("{} score rows rejected", ingested.rejected.len());
    }
    let summary = summarize(&ingested.records, &packet)?;
    run.write_json("summary.json", &summary)?;
    if !ingested.rejected.is_empty() {
        run.write_json("rejected-scores.json", &ingested.rejected)?;
    }
    run.finish()?;
    Ok(())
}

/// Every score line that names a lineage must name the packet's.
fn check_lineage(packet: &Path, scores: &Path) -> anyhow::Result<()> {
    let expected = read_stamp(packet)?;
    if !matches!(scores.extension().and_then(|e| e.to_str()), Some("jsonl" | "json")) {
        log::warn!("{}: tabular scores carry no lineage; not checked", scores.display());
        return Ok(());
    }
    let raw = std::fs::read_to_string(scores).with_context(|| format!("reading {}", scores.display()))?;
    let mut seen = BTreeSet::new();
    for (i, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let Ok(v) = serde_json::from_str::<serde_json::Value>(line) else {
            continue;
        };
        if let Some(h) = v.get(HASH_FIELD).and_then(|h| h.as_str()) {
            if Some(h) != expected.as_deref() {
                return Err(data(format!(
                    "{}:{}: scores were collected for packet lineage {h}, but {} has {}",
                    scores.display(),
                    i + 1,
                    packet.display(),
                    expected.as_deref().unwrap_or("none")
                )));
            }
            seen.insert(h.to_string());
        }
    }
    if seen.is_empty() {
        log::warn!("{}: no lineage stamps on score lines", scores.display());
    }
    Ok(())
}
