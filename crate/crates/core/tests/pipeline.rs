use lexsel_core::corpus::{load_corpus, write_corpus, CorpusConfig};
use lexsel_core::discovery::{accumulate_counts_with, accumulate_stream, discover, DiscoveryConfig, SourceKey};
use lexsel_core::features::{build_dataset, stratified_split, FeatureConfig, FeatureKey};
use lexsel_core::models::{cross_validate_with, evaluate, frequency_baseline, train_linear_svm_with, Hyperparams};
use lexsel_core::par::Execution;
use lexsel_core::rules::extract_rules;
use lexsel_core::synth::{discovery_corpus, planted_cue_corpus};

#[test]
fn streamed_counts_equal_in_memory_counts() {
    let (pairs, _) = discovery_corpus(4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    write_corpus(std::fs::File::create(&path).unwrap(), &pairs).unwrap();
    let streamed = accumulate_stream(load_corpus(&path).unwrap(), 333, Execution::Sequential).unwrap();
    assert_eq!(streamed, accumulate_counts_with(&pairs, Execution::Parallel));
}

#[test]
fn discovered_word_trains_and_yields_cue_rules() {
    let (pairs, planted) = discovery_corpus(2);
    let words = discover(&pairs, &DiscoveryConfig::default());
    let found: Vec<SourceKey> = words.iter().map(|w| w.key()).collect();
    assert_eq!(found.len(), planted.len());
    assert!(planted.iter().all(|k| found.contains(k)));

    let wall = words.iter().find(|w| w.lemma == "wall").unwrap();
    // tapia falls under the frequency threshold and is not a choice
    assert_eq!(wall.choices.len(), 2);
    let ds = build_dataset(&pairs, wall, &FeatureConfig::default(), &CorpusConfig::default());
    assert!(ds.examples.len() > 1000);
    let (train, test) = stratified_split(&ds, 0.8, 0).unwrap();
    let cv = cross_validate_with(&train, &Hyperparams::default_grid(), 5, 0, Execution::Parallel).unwrap();
    let model = train_linear_svm_with(&train, &cv.best, Execution::Parallel).unwrap();
    let acc = evaluate(&model, &test).accuracy;
    let base = evaluate(&frequency_baseline(&train).unwrap(), &test).accuracy;
    assert!(acc > 0.95 && base < 0.6, "svm {acc} baseline {base}");

    let rules = extract_rules(&model, 3);
    let muro = rules.rules_for("muro").unwrap();
    let cues = ["stone", "city", "brick"].map(FeatureKey::lemma);
    assert!(muro.iter().any(|r| cues.contains(&r.feature)), "{muro:?}");
}

#[test]
fn noisy_planted_corpus_keeps_model_ahead_of_baseline() {
    let pairs = planted_cue_corpus(
        "fan",
        &[("ventilador", &["electric", "ceiling"]), ("aficionado", &["loyal"])],
        300,
        0.1,
        9,
    );
    let words = discover(&pairs, &DiscoveryConfig::default());
    assert_eq!(words.len(), 1);
    let ds = build_dataset(&pairs, &words[0], &FeatureConfig::default(), &CorpusConfig::default());
    let (train, test) = stratified_split(&ds, 0.8, 1).unwrap();
    let model = train_linear_svm_with(
        &train,
        &Hyperparams::new(0.01, lexsel_core::models::ClassWeight::None),
        Execution::Sequential,
    )
    .unwrap();
    let acc = evaluate(&model, &test).accuracy;
    assert!(acc > 0.8, "{acc}");
}
