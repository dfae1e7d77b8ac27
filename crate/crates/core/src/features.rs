//! Sparse binary context features for focus-word occurrences, labelled
//! datasets, and stratified train/test and k-fold splits.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusConfig, SentencePair, Token};
use crate::discovery::FocusWord;
use crate::error::{Error, Result};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum FeatureKey {
    Lemma(String),
    Sense(String),
    Bigram(String, String),
}

impl FeatureKey {
    pub fn bigram(a: &str, b: &str) -> Self {
        FeatureKey::Bigram(a.to_string(), b.to_string())
    }

    pub fn lemma(l: &str) -> Self {
        FeatureKey::Lemma(l.to_string())
    }

    pub fn sense(s: &str) -> Self {
        FeatureKey::Sense(s.to_string())
    }

    /// Payload as a single string, used for deterministic tie-breaking.
    pub fn payload_text(&self) -> String {
        match self {
            FeatureKey::Lemma(s) | FeatureKey::Sense(s) => s.clone(),
            FeatureKey::Bigram(a, b) => format!("{a} {b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub window: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { window: 3 }
    }
}

/// Context tokens of the focus word: everything within `window` positions,
/// plus its syntactic head and dependents. Sentence order, no duplicates,
/// focus token excluded.
pub fn neighborhood(pair: &SentencePair, focus_index: usize, window: usize) -> Vec<&Token> {
    let src = &pair.src;
    let lo = focus_index.saturating_sub(window);
    let hi = (focus_index + window).min(src.len().saturating_sub(1));
    let head = src[focus_index].head;
    src.iter()
        .filter(|t| {
            t.index != focus_index
                && ((lo..=hi).contains(&t.index) || Some(t.index) == head || t.head == Some(focus_index))
        })
        .collect()
}

/// Feature set of one focus occurrence. Only the source side is read.
pub fn featurize(
    pair: &SentencePair,
    focus_index: usize,
    window: usize,
    corpus: &CorpusConfig,
) -> BTreeSet<FeatureKey> {
    let mut out = BTreeSet::new();
    for tok in neighborhood(pair, focus_index, window) {
        if corpus.is_excluded(tok) {
            continue;
        }
        out.insert(FeatureKey::Lemma(tok.lemma.clone()));
        if let Some(s) = &tok.sense {
            out.insert(FeatureKey::Sense(s.clone()));
        }
    }
    // Bigrams bridge over removed tokens; the focus token always takes part.
    let lo = focus_index.saturating_sub(window);
    let hi = (focus_index + window).min(pair.src.len() - 1);
    let kept: Vec<&str> = pair.src[lo..=hi]
        .iter()
        .filter(|t| t.index == focus_index || !corpus.is_excluded(t))
        .map(|t| t.lemma.as_str())
        .collect();
    for w in kept.windows(2) {
        out.insert(FeatureKey::bigram(w[0], w[1]));
    }
    out
}

/// Bijection between feature keys and column ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<FeatureKey>", into = "Vec<FeatureKey>")]
pub struct FeatureIndex {
    keys: Vec<FeatureKey>,
    lookup: HashMap<FeatureKey, u32>,
}

impl From<Vec<FeatureKey>> for FeatureIndex {
    fn from(keys: Vec<FeatureKey>) -> Self {
        let lookup = keys.iter().enumerate().map(|(i, k)| (k.clone(), i as u32)).collect();
        FeatureIndex { keys, lookup }
    }
}

impl From<FeatureIndex> for Vec<FeatureKey> {
    fn from(idx: FeatureIndex) -> Self {
        idx.keys
    }
}

impl FeatureIndex {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn column(&self, key: &FeatureKey) -> Option<u32> {
        self.lookup.get(key).copied()
    }

    pub fn key(&self, column: u32) -> &FeatureKey {
        &self.keys[column as usize]
    }

    pub fn keys(&self) -> &[FeatureKey] {
        &self.keys
    }

    /// Sorted column ids of the known keys; unknown keys are dropped.
    pub fn encode<'a>(&self, keys: impl IntoIterator<Item = &'a FeatureKey>) -> Vec<u32> {
        let mut cols: Vec<u32> = keys.into_iter().filter_map(|k| self.column(k)).collect();
        cols.sort_unstable();
        cols.dedup();
        cols
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub sentence_id: String,
    pub focus_index: usize,
    pub label: String,
    /// Sorted column ids into the dataset's feature index.
    pub features: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub focus: FocusWord,
    pub feature_index: FeatureIndex,
    pub examples: Vec<Example>,
}

impl Dataset {
    /// Builds a dataset from labelled feature sets, indexing columns in
    /// sorted key order.
    pub fn from_feature_sets(focus: FocusWord, rows: Vec<(String, usize, String, BTreeSet<FeatureKey>)>) -> Self {
        let all: BTreeSet<&FeatureKey> = rows.iter().flat_map(|r| r.3.iter()).collect();
        let feature_index = FeatureIndex::from(all.into_iter().cloned().collect::<Vec<_>>());
        let examples = rows
            .iter()
            .map(|(id, focus_index, label, keys)| Example {
                sentence_id: id.clone(),
                focus_index: *focus_index,
                label: label.clone(),
                features: feature_index.encode(keys),
            })
            .collect();
        Dataset {
            focus,
            feature_index,
            examples,
        }
    }

    pub fn choices(&self) -> Vec<String> {
        self.focus.choice_lemmas()
    }

    pub fn n_choices(&self) -> usize {
        self.focus.choices.len()
    }

    pub fn label_index(&self, example: &Example) -> Option<usize> {
        self.focus.choices.iter().position(|c| c.tgt_lemma == example.label)
    }

    /// Label index per example; labels outside the choice list are an error.
    pub fn label_indices(&self) -> Result<Vec<usize>> {
        self.examples
            .iter()
            .map(|e| self.label_index(e).ok_or_else(|| Error::UnknownChoice(e.label.clone())))
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_choices()];
        for e in &self.examples {
            if let Some(k) = self.label_index(e) {
                counts[k] += 1;
            }
        }
        counts
    }

    pub fn keys_of(&self, example: &Example) -> BTreeSet<FeatureKey> {
        example
            .features
            .iter()
            .map(|&c| self.feature_index.key(c).clone())
            .collect()
    }

    /// A dataset over the given example positions sharing this feature index.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            focus: self.focus.clone(),
            feature_index: self.feature_index.clone(),
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }

    fn positions_by_choice(&self) -> Result<Vec<Vec<usize>>> {
        let labels = self.label_indices()?;
        let mut by_choice = vec![Vec::new(); self.n_choices()];
        for (i, k) in labels.into_iter().enumerate() {
            by_choice[k].push(i);
        }
        Ok(by_choice)
    }
}

/// Collects one example per focus occurrence whose aligned target lemma
/// maps to one of the focus word's (merged) choices.
pub fn build_dataset(
    pairs: &[SentencePair],
    focus: &FocusWord,
    config: &FeatureConfig,
    corpus: &CorpusConfig,
) -> Dataset {
    let mut rows = Vec::new();
    for pair in pairs {
        for tok in &pair.src {
            if tok.lemma != focus.lemma || tok.upos != focus.upos {
                continue;
            }
            let labels: BTreeSet<&str> = pair
                .aligned_targets(tok.index)
                .filter_map(|t| focus.canonical_choice(&t.lemma))
                .collect();
            // Occurrences aligned to two different choices are ambiguous.
            if labels.len() != 1 {
                continue;
            }
            let label = labels.into_iter().next().unwrap().to_string();
            let keys = featurize(pair, tok.index, config.window, corpus);
            rows.push((pair.id.clone(), tok.index, label, keys));
        }
    }
    Dataset::from_feature_sets(focus.clone(), rows)
}

pub fn build_datasets(
    pairs: &[SentencePair],
    words: &[FocusWord],
    config: &FeatureConfig,
    corpus: &CorpusConfig,
    exec: Execution,
) -> Vec<Dataset> {
    par::map(exec, words, |w| build_dataset(pairs, w, config, corpus))
}

/// Number of training examples out of `n` for fraction `frac`: the floor,
/// plus one when the fractional part is at least one half.
pub fn train_count(n: usize, frac: f64) -> usize {
    let x = frac * n as f64;
    let floor = (x + 1e-9).floor();
    let extra = usize::from(x - floor >= 0.5 - 1e-9);
    (floor as usize + extra).min(n)
}

/// Per-choice stratified split; the train part holds
/// [`train_count`]`(n_choice, train_frac)` examples of every choice.
pub fn stratified_split(dataset: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let by_choice = dataset.positions_by_choice()?;
    let choices = dataset.choices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, mut idx) in by_choice.into_iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::TooFewExamples {
                choice: choices[k].clone(),
                have: idx.len(),
                need: 2,
            });
        }
        idx.shuffle(&mut rng);
        let cut = train_count(idx.len(), train_frac);
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

/// Stratified fold id (0..k) for every example. Within each choice, fold
/// sizes differ by at most one.
pub fn stratified_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let by_choice = dataset.positions_by_choice()?;
    let choices = dataset.choices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![usize::MAX; dataset.examples.len()];
    let mut offset = 0;
    for (c, mut idx) in by_choice.into_iter().enumerate() {
        if idx.len() < k {
            return Err(Error::TooFewExamples {
                choice: choices[c].clone(),
                have: idx.len(),
                need: k,
            });
        }
        idx.shuffle(&mut rng);
        // Rotate the starting fold so that remainders spread across folds.
        for (j, i) in idx.iter().enumerate() {
            fold[*i] = (j + offset) % k;
        }
        offset = (offset + idx.len()) % k;
    }
    Ok(fold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discovery::ChoiceStats;
    use proptest::prelude::*;

    fn sentence(lemmas: &[&str]) -> SentencePair {
        SentencePair {
            id: "s".into(),
            src: lemmas
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let upos = if *l == "," { "PUNCT" } else { "NOUN" };
                    Token::new(i, l, l, upos)
                })
                .collect(),
            tgt: vec![],
            align: vec![],
        }
    }

    fn indices(ts: Vec<&Token>) -> Vec<usize> {
        ts.into_iter().map(|t| t.index).collect()
    }

    #[test]
    fn window_covers_whole_sentence() {
        let s = sentence(&["a", "b", "c", "d", "e", "f", "g"]);
        assert_eq!(indices(neighborhood(&s, 3, 3)), vec![0, 1, 2, 4, 5, 6]);
    }

    #[test]
    fn head_and_dependents_join_the_window() {
        let mut s = sentence(&["a", "b", "c", "d", "e", "f", "g"]);
        s.src[1].head = Some(3);
        s.src[5].head = Some(3);
        s.src[0].head = Some(1);
        assert_eq!(indices(neighborhood(&s, 3, 1)), vec![1, 2, 4, 5]);
        // a non-root focus also pulls in its head
        s.src[3].head = Some(6);
        assert_eq!(indices(neighborhood(&s, 3, 1)), vec![1, 2, 4, 5, 6]);
    }

    #[test]
    fn single_token_has_empty_context() {
        let s = sentence(&["wall"]);
        assert!(neighborhood(&s, 0, 3).is_empty());
        assert!(featurize(&s, 0, 3, &CorpusConfig::default()).is_empty());
    }

    #[test]
    fn featurize_example_sentence() {
        let mut s = sentence(&["the", "stone", "wall", "fell"]);
        s.src[3].lemma = "fall".into();
        let cfg = CorpusConfig::default().with_stopwords(["the"]);
        let got = featurize(&s, 2, 3, &cfg);
        let want: BTreeSet<FeatureKey> = [
            FeatureKey::lemma("stone"),
            FeatureKey::lemma("fall"),
            FeatureKey::bigram("stone", "wall"),
            FeatureKey::bigram("wall", "fall"),
        ]
        .into();
        assert_eq!(got, want);
    }

    #[test]
    fn sense_annotations_become_features() {
        let mut s = sentence(&["city", "wall"]);
        s.src[0].sense = Some("city.n.01".into());
        let got = featurize(&s, 1, 3, &CorpusConfig::default());
        assert!(got.contains(&FeatureKey::sense("city.n.01")));
    }

    #[test]
    fn bigrams_bridge_removed_tokens() {
        let s = sentence(&["old", ",", "wall"]);
        let got = featurize(&s, 2, 3, &CorpusConfig::default());
        assert!(got.contains(&FeatureKey::bigram("old", "wall")));
        assert!(!got.iter().any(|k| k.payload_text().contains(',')));
    }

    fn focus(choices: &[&str]) -> FocusWord {
        FocusWord {
            lemma: "wall".into(),
            upos: "NOUN".into(),
            total_count: 0,
            entropy: 0.0,
            choices: choices
                .iter()
                .map(|c| ChoiceStats {
                    tgt_lemma: c.to_string(),
                    count: 0,
                    prob: 0.0,
                    majority_sense: "∅".into(),
                    merged_from: vec![c.to_string()],
                })
                .collect(),
        }
    }

    fn aligned(id: &str, src: &[&str], tgt: &[&str], align: &[(usize, usize)]) -> SentencePair {
        SentencePair {
            id: id.into(),
            align: align.to_vec(),
            tgt: tgt.iter().enumerate().map(|(i, l)| Token::new(i, l, l, "")).collect(),
            ..sentence(src)
        }
    }

    #[test]
    fn dataset_labels_and_exclusions() {
        let mut corpus: Vec<SentencePair> = (0..60)
            .map(|i| aligned(&format!("p{i}"), &["brick", "wall"], &["muro"], &[(1, 0)]))
            .collect();
        corpus.extend((0..40).map(|i| aligned(&format!("q{i}"), &["room", "wall"], &["pared"], &[(1, 0)])));
        corpus.push(aligned("out", &["wall"], &["tabique"], &[(0, 0)]));
        corpus.push(aligned(
            "two",
            &["wall", "and", "wall"],
            &["muro", "y", "muro"],
            &[(0, 0), (2, 2)],
        ));
        let ds = build_dataset(
            &corpus,
            &focus(&["muro", "pared"]),
            &FeatureConfig::default(),
            &CorpusConfig::default(),
        );
        assert_eq!(ds.examples.len(), 102);
        assert_eq!(ds.class_counts(), vec![62, 40]);
        assert!(ds.examples.iter().all(|e| e.sentence_id != "out"));
        assert_eq!(ds.examples.iter().filter(|e| e.sentence_id == "two").count(), 2);
    }

    #[test]
    fn dataset_uses_canonical_merged_labels() {
        let mut f = focus(&["muro", "pared"]);
        f.choices[0].merged_from = vec!["muro".into(), "muros".into()];
        let corpus = vec![aligned("a", &["wall"], &["muros"], &[(0, 0)])];
        let ds = build_dataset(&corpus, &f, &FeatureConfig::default(), &CorpusConfig::default());
        assert_eq!(ds.examples[0].label, "muro");
    }

    fn toy_dataset(counts: &[usize]) -> Dataset {
        let names: Vec<String> = (0..counts.len()).map(|k| format!("c{k}")).collect();
        let f = focus(&names.iter().map(String::as_str).collect::<Vec<_>>());
        let rows = counts
            .iter()
            .enumerate()
            .flat_map(|(k, &n)| {
                let names = &names;
                (0..n).map(move |i| {
                    (
                        format!("{k}-{i}"),
                        0,
                        names[k].clone(),
                        BTreeSet::from([FeatureKey::lemma(&format!("f{}", i % 5))]),
                    )
                })
            })
            .collect();
        Dataset::from_feature_sets(f, rows)
    }

    #[test]
    fn split_arithmetic() {
        let ds = toy_dataset(&[60, 40]);
        let (train, test) = stratified_split(&ds, 0.8, 7).unwrap();
        assert_eq!(train.class_counts(), vec![48, 32]);
        assert_eq!(test.class_counts(), vec![12, 8]);
        let (train, test) = stratified_split(&toy_dataset(&[5, 5]), 0.8, 7).unwrap();
        assert_eq!(train.class_counts(), vec![4, 4]);
        assert_eq!(test.class_counts(), vec![1, 1]);
        let again = stratified_split(&ds, 0.8, 7).unwrap();
        assert_eq!(again.0.examples, stratified_split(&ds, 0.8, 7).unwrap().0.examples);
    }

    #[test]
    fn split_rejects_tiny_choices() {
        let err = stratified_split(&toy_dataset(&[10, 1]), 0.8, 1).unwrap_err();
        assert!(matches!(err, Error::TooFewExamples { ref choice, .. } if choice == "c1"));
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(train_count(5, 0.8), 4);
        assert_eq!(train_count(3, 0.5), 2);
        assert_eq!(train_count(7, 0.8), 6);
        assert_eq!(train_count(2, 0.8), 2);
    }

    proptest! {
        #[test]
        fn split_is_a_stratified_partition(counts in proptest::collection::vec(2usize..40, 2..5), seed: u64, frac in 0.1f64..0.95) {
            let ds = toy_dataset(&counts);
            let (train, test) = stratified_split(&ds, frac, seed).unwrap();
            let mut ids: Vec<&String> = train.examples.iter().chain(&test.examples).map(|e| &e.sentence_id).collect();
            ids.sort();
            let before = ids.len();
            ids.dedup();
            prop_assert_eq!(before, ids.len());
            prop_assert_eq!(ids.len(), ds.examples.len());
            for (k, &n) in counts.iter().enumerate() {
                let t = train.class_counts()[k] as f64;
                prop_assert!((t - frac * n as f64).abs() <= 1.0);
            }
        }

        #[test]
        fn folds_partition_and_balance(counts in proptest::collection::vec(5usize..40, 2..5), seed: u64) {
            let ds = toy_dataset(&counts);
            let folds = stratified_folds(&ds, 5, seed).unwrap();
            prop_assert!(folds.iter().all(|&f| f < 5));
            let labels = ds.label_indices().unwrap();
            for k in 0..counts.len() {
                let per: Vec<usize> = (0..5).map(|f| folds.iter().zip(&labels).filter(|(&x, &l)| x == f && l == k).count()).collect();
                prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
        }

        #[test]
        fn features_ignore_target_side_and_distant_punctuation(extra in 0usize..3) {
            let mut s = sentence(&["a", "b", "wall", "c", "d", "e", "f", "g"]);
            let cfg = CorpusConfig::default();
            let base = featurize(&s, 2, 3, &cfg);
            s.tgt = vec![Token::new(0, "x", "x", ""); extra + 1];
            s.align = vec![(2, 0)];
            prop_assert_eq!(&featurize(&s, 2, 3, &cfg), &base);
            // drop the punctuation-free tail beyond the window and add punctuation there
            s.src.push(Token::new(8, ",", ",", "PUNCT"));
            prop_assert_eq!(&featurize(&s, 2, 3, &cfg), &base);
        }
    }
}
