//! Lexical-selection models, their evaluation, hyperparameter search and
//! the shortlist of words used in the learner study.

pub mod baseline;
pub mod cv;
pub mod svm;
pub mod tree;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::{Dataset, FeatureIndex};

pub use baseline::{frequency_baseline, FrequencyBaseline};
pub use cv::{cross_validate, cross_validate_with, CvOutcome};
pub use svm::{train_linear_svm, train_linear_svm_with, ClassWeight, Hyperparams, LinearOvRModel};
pub use tree::{train_decision_tree, Criterion, DTreeModel, TreeHyper};

/// Anything that maps a sparse feature row to a choice index.
pub trait Predictor: Sync {
    fn choices(&self) -> &[String];
    /// Index the predictor's columns refer to; `None` for predictors that
    /// ignore features.
    fn feature_index(&self) -> Option<&FeatureIndex>;
    fn predict_columns(&self, columns: &[u32]) -> usize;
}

/// A hyperparameter setting that knows how to train its model.
pub trait ModelSpec: Clone + Send + Sync + std::fmt::Debug {
    type Model: Predictor + Send;
    fn fit(&self, train: &Dataset) -> Result<Self::Model>;
    /// Preference between equally accurate settings; `Less` wins.
    fn preference(&self, other: &Self) -> Ordering;
}

/// Rewrites `dataset` columns into `predictor` columns.
pub(crate) fn column_map(from: &FeatureIndex, to: Option<&FeatureIndex>) -> Option<Vec<Option<u32>>> {
    let to = to?;
    if from == to {
        return None;
    }
    Some(from.keys().iter().map(|k| to.column(k)).collect())
}

pub(crate) fn translate(columns: &[u32], map: &Option<Vec<Option<u32>>>) -> Vec<u32> {
    match map {
        None => columns.to_vec(),
        Some(m) => {
            let mut out: Vec<u32> = columns.iter().filter_map(|&c| m[c as usize]).collect();
            out.sort_unstable();
            out
        }
    }
}

/// Predicted choice index for every example of `data`.
pub fn predict_dataset<P: Predictor + ?Sized>(predictor: &P, data: &Dataset) -> Vec<usize> {
    let map = column_map(&data.feature_index, predictor.feature_index());
    data.examples
        .iter()
        .map(|e| predictor.predict_columns(&translate(&e.features, &map)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceMetrics {
    pub choice: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub choices: Vec<String>,
    pub accuracy: f64,
    pub per_choice: Vec<ChoiceMetrics>,
    /// Rows are true choices, columns predicted choices.
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn from_confusion(choices: Vec<String>, confusion: Vec<Vec<u64>>) -> Self {
        let k = choices.len();
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let per_choice = (0..k)
            .map(|i| {
                let tp = confusion[i][i];
                let predicted: u64 = (0..k).map(|r| confusion[r][i]).sum();
                let actual: u64 = confusion[i].iter().sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, actual);
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ChoiceMetrics {
                    choice: choices[i].clone(),
                    precision,
                    recall,
                    f1,
                    support: actual,
                }
            })
            .collect();
        EvalReport {
            choices,
            accuracy: ratio(correct, total),
            per_choice,
            confusion,
        }
    }

    pub fn min_f1(&self) -> f64 {
        self.per_choice.iter().map(|c| c.f1).fold(f64::INFINITY, f64::min)
    }
}

/// Accuracy, per-choice precision/recall/F1 and the confusion matrix.
pub fn evaluate<P: Predictor + ?Sized>(predictor: &P, test: &Dataset) -> EvalReport {
    let choices = test.choices();
    let k = choices.len();
    let mut confusion = vec![vec![0u64; k]; k];
    let predicted = predict_dataset(predictor, test);
    for (e, p) in test.examples.iter().zip(predicted) {
        let pred_name = &predictor.choices()[p];
        if let (Some(t), Some(p)) = (test.label_index(e), choices.iter().position(|c| c == pred_name)) {
            confusion[t][p] += 1;
        }
    }
    EvalReport::from_confusion(choices, confusion)
}

/// Held-out results for one focus word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordReport {
    /// `lemma|UPOS`.
    pub word: String,
    /// Size of the full dataset before splitting.
    pub n_examples: usize,
    pub linear_svm: EvalReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision_tree: Option<EvalReport>,
}

/// Words whose linear model beats F1 0.5 on every choice, largest
/// datasets first, at most `max_words` of them.
pub fn shortlist_study_words(reports: &[WordReport], max_words: usize) -> Vec<WordReport> {
    let mut sorted: Vec<&WordReport> = reports.iter().collect();
    sorted.sort_by(|a, b| b.n_examples.cmp(&a.n_examples).then_with(|| a.word.cmp(&b.word)));
    let picked: Vec<WordReport> = sorted
        .into_iter()
        .filter(|r| !r.linear_svm.per_choice.is_empty() && r.linear_svm.per_choice.iter().all(|c| c.f1 > 0.5))
        .take(max_words)
        .cloned()
        .collect();
    if picked.is_empty() {
        log::warn!("no focus word has F1 > 0.5 on every choice");
    }
    picked
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<String>, Vec<usize>, std::sync::atomic::AtomicUsize);

    impl Predictor for Fixed {
        fn choices(&self) -> &[String] {
            &self.0
        }
        fn feature_index(&self) -> Option<&FeatureIndex> {
            None
        }
        fn predict_columns(&self, _: &[u32]) -> usize {
            let i = self.2.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            self.1[i]
        }
    }

    fn labelled(labels: &[usize], k: usize) -> Dataset {
        let choices: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
        let rows = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (format!("s{i}"), 0, choices[l].clone(), Default::default()))
            .collect();
        Dataset::from_feature_sets(crate::synth::focus_word("w", "NOUN", &choices), rows)
    }

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_predictor() {
        let labels = [0, 1, 2, 1, 0];
        let r = evaluate(&Fixed(names(3), labels.to_vec(), 0.into()), &labelled(&labels, 3));
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_choice.iter().all(|c| c.f1 == 1.0));
    }

    #[test]
    fn constant_predictor_on_sixty_forty() {
        let labels: Vec<usize> = (0..10).map(|i| usize::from(i >= 6)).collect();
        let r = evaluate(&Fixed(names(2), vec![0; 10], 0.into()), &labelled(&labels, 2));
        assert!((r.accuracy - 0.6).abs() < 1e-12);
        assert_eq!(r.per_choice[1].f1, 0.0);
        assert_eq!(r.per_choice[1].precision, 0.0);
    }

    #[test]
    fn three_class_confusion_by_hand() {
        // true:      0 0 0 0 1 1 1 2 2 2
        // predicted: 0 0 1 2 1 1 0 2 2 1
        let truth = [0, 0, 0, 0, 1, 1, 1, 2, 2, 2];
        let pred = [0, 0, 1, 2, 1, 1, 0, 2, 2, 1];
        let r = evaluate(&Fixed(names(3), pred.to_vec(), 0.into()), &labelled(&truth, 3));
        assert_eq!(r.confusion, vec![vec![2, 1, 1], vec![1, 2, 0], vec![0, 1, 2]]);
        assert!((r.accuracy - 0.6).abs() < 1e-12);
        // class 0: P = 2/3, R = 2/4, F1 = 4/7
        assert!((r.per_choice[0].precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_choice[0].recall - 0.5).abs() < 1e-12);
        assert!((r.per_choice[0].f1 - 4.0 / 7.0).abs() < 1e-12);
        // class 1: P = 2/4, R = 2/3, F1 = 4/7
        assert!((r.per_choice[1].f1 - 4.0 / 7.0).abs() < 1e-12);
        // class 2: P = 2/3, R = 2/3
        assert!((r.per_choice[2].f1 - 2.0 / 3.0).abs() < 1e-12);
        let trace: u64 = (0..3).map(|i| r.confusion[i][i]).sum();
        assert_eq!(r.accuracy, trace as f64 / 10.0);
    }

    fn report(word: &str, n: usize, f1s: &[f64]) -> WordReport {
        WordReport {
            word: word.into(),
            n_examples: n,
            linear_svm: EvalReport {
                choices: vec![],
                accuracy: 0.0,
                per_choice: f1s
                    .iter()
                    .map(|&f1| ChoiceMetrics {
                        choice: "x".into(),
                        precision: f1,
                        recall: f1,
                        f1,
                        support: 1,
                    })
                    .collect(),
                confusion: vec![],
            },
            frequency: None,
            decision_tree: None,
        }
    }

    #[test]
    fn shortlist_rules() {
        let reports: Vec<WordReport> = (0..12)
            .map(|i| report(&format!("w{i:02}|NOUN"), 100 + i, &[0.6, 0.7]))
            .chain([report("weak|NOUN", 10_000, &[0.9, 0.4])])
            .collect();
        let picked = shortlist_study_words(&reports, 10);
        assert_eq!(picked.len(), 10);
        assert!(picked.iter().all(|r| r.word != "weak|NOUN"));
        assert_eq!(picked[0].n_examples, 111);
        assert_eq!(picked[9].n_examples, 102);
        assert!(shortlist_study_words(&[report("weak|NOUN", 5, &[0.4, 0.9])], 10).is_empty());
    }
}
