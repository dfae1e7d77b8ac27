//! Everything trained for one focus word, saved as a single JSON file.

use anyhow::{ensure, Context, Result};
use lexsel_core::features::{stratified_split, Dataset};
use lexsel_core::models::{
    cross_validate_with, evaluate, frequency_baseline, train_decision_tree, train_linear_svm_with, DTreeModel,
    FrequencyBaseline, Hyperparams, LinearOvRModel, TreeHyper, WordReport,
};
use lexsel_core::par::Execution;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Split {
    pub train_frac: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Selected<H, M> {
    pub hyper: H,
    /// Mean validation accuracy per grid point, in grid order. Empty when
    /// the grid had a single point.
    pub cv_accuracy: Vec<(H, f64)>,
    pub model: M,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelBundle {
    pub word: String,
    pub n_examples: usize,
    /// Held-out split used for training; `None` when trained on everything.
    pub split: Option<Split>,
    pub linear_svm: Selected<Hyperparams, LinearOvRModel>,
    pub decision_tree: Option<Selected<TreeHyper, DTreeModel>>,
    pub frequency: FrequencyBaseline,
}

pub struct TrainOptions {
    pub svm_grid: Vec<Hyperparams>,
    pub tree_grid: Vec<TreeHyper>,
    pub folds: usize,
    pub seed: u64,
    pub split: Option<Split>,
    pub exec: Execution,
}

fn word_of(ds: &Dataset) -> String {
    ds.focus.key().to_string()
}

pub fn train(ds: &Dataset, opts: &TrainOptions) -> Result<ModelBundle> {
    let train = match opts.split {
        Some(s) => stratified_split(ds, s.train_frac, s.seed)?.0,
        None => ds.clone(),
    };
    let cv = cross_validate_with(&train, &opts.svm_grid, opts.folds, opts.seed, opts.exec)
        .context("linear svm grid search")?;
    let svm = train_linear_svm_with(&train, &cv.best, opts.exec)?;
    if !svm.converged() {
        log::warn!("{}: linear svm hit max_iter before converging", word_of(ds));
    }
    let linear_svm = Selected {
        hyper: cv.best,
        cv_accuracy: opts.svm_grid.iter().cloned().zip(cv.mean_accuracy).collect(),
        model: svm,
    };
    let decision_tree = if opts.tree_grid.is_empty() {
        None
    } else {
        let cv = cross_validate_with(&train, &opts.tree_grid, opts.folds, opts.seed, opts.exec)
            .context("decision tree grid search")?;
        let model = train_decision_tree(&train, &cv.best)?;
        Some(Selected {
            hyper: cv.best,
            cv_accuracy: opts.tree_grid.iter().cloned().zip(cv.mean_accuracy).collect(),
            model,
        })
    };
    Ok(ModelBundle {
        word: word_of(ds),
        n_examples: ds.examples.len(),
        split: opts.split,
        linear_svm,
        decision_tree,
        frequency: frequency_baseline(&train)?,
    })
}

/// Scores every model on the bundle's held-out part of `ds`, or on all of
/// `ds` when the bundle was trained without a split.
pub fn eval(bundle: &ModelBundle, ds: &Dataset) -> Result<WordReport> {
    ensure!(
        word_of(ds) == bundle.word,
        "dataset is for {} but the model is for {}",
        word_of(ds),
        bundle.word
    );
    let test = match bundle.split {
        Some(s) => stratified_split(ds, s.train_frac, s.seed)?.1,
        None => ds.clone(),
    };
    ensure!(!test.examples.is_empty(), "no test examples");
    Ok(WordReport {
        word: bundle.word.clone(),
        n_examples: ds.examples.len(),
        linear_svm: evaluate(&bundle.linear_svm.model, &test),
        frequency: Some(evaluate(&bundle.frequency, &test)),
        decision_tree: bundle.decision_tree.as_ref().map(|t| evaluate(&t.model, &test)),
    })
}
