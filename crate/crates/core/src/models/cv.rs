use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{stratified_folds, Dataset};
use crate::models::{evaluate, ModelSpec};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome<S> {
    pub best: S,
    /// Mean validation accuracy of every grid point, in grid order. Empty
    /// when the grid had a single element and no search was run.
    pub mean_accuracy: Vec<f64>,
}

pub fn cross_validate<S: ModelSpec>(dataset: &Dataset, grid: &[S], k: usize, seed: u64) -> Result<CvOutcome<S>> {
    cross_validate_with(dataset, grid, k, seed, Execution::default())
}

/// Stratified k-fold grid search. The (grid point, fold) fits are
/// independent and run through `exec`.
pub fn cross_validate_with<S: ModelSpec>(
    dataset: &Dataset,
    grid: &[S],
    k: usize,
    seed: u64,
    exec: Execution,
) -> Result<CvOutcome<S>> {
    match grid {
        [] => return Err(Error::Config("empty hyperparameter grid".into())),
        [only] => {
            return Ok(CvOutcome {
                best: only.clone(),
                mean_accuracy: Vec::new(),
            })
        }
        _ => {}
    }
    let folds = stratified_folds(dataset, k, seed)?;
    let split = |f: usize| {
        let (mut train, mut valid) = (Vec::new(), Vec::new());
        for (i, &g) in folds.iter().enumerate() {
            if g == f {
                valid.push(i)
            } else {
                train.push(i)
            }
        }
        (dataset.subset(&train), dataset.subset(&valid))
    };
    let splits: Vec<(Dataset, Dataset)> = (0..k).map(split).collect();

    let scores: Vec<Result<f64>> = par::map_range(exec, grid.len() * k, |task| {
        let (g, f) = (task / k, task % k);
        let (train, valid) = &splits[f];
        let model = grid[g].fit(train)?;
        Ok(evaluate(&model, valid).accuracy)
    });
    let mut mean_accuracy = vec![0.0; grid.len()];
    for (task, s) in scores.into_iter().enumerate() {
        mean_accuracy[task / k] += s? / k as f64;
    }

    let mut best = 0;
    for g in 1..grid.len() {
        let diff = mean_accuracy[g] - mean_accuracy[best];
        let tie = diff.abs() <= 1e-12;
        if (!tie && diff > 0.0) || (tie && grid[g].preference(&grid[best]) == Ordering::Less) {
            best = g;
        }
    }
    log::debug!("cv accuracies {mean_accuracy:?}, picked {:?}", grid[best]);
    Ok(CvOutcome {
        best: grid[best].clone(),
        mean_accuracy,
    })
}
