//! Greedy CART over binary presence features.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Dataset, FeatureIndex};
use crate::models::svm::argmax_first;
use crate::models::{ModelSpec, Predictor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Gini,
    Entropy,
}

impl Criterion {
    fn impurity(self, counts: &[usize], n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let n = n as f64;
        match self {
            Criterion::Gini => 1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>(),
            Criterion::Entropy => counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / n;
                    -p * p.log2()
                })
                .sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeHyper {
    pub criterion: Criterion,
    pub max_depth: usize,
    pub min_impurity_decrease: f64,
}

impl Default for TreeHyper {
    fn default() -> Self {
        TreeHyper {
            criterion: Criterion::Gini,
            max_depth: 6,
            min_impurity_decrease: 1e-3,
        }
    }
}

impl TreeHyper {
    /// criterion ∈ {gini, entropy} × max depth ∈ {6, 15}.
    pub fn default_grid() -> Vec<TreeHyper> {
        let mut grid = Vec::new();
        for criterion in [Criterion::Gini, Criterion::Entropy] {
            for max_depth in [6, 15] {
                grid.push(TreeHyper {
                    criterion,
                    max_depth,
                    ..Default::default()
                });
            }
        }
        grid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        counts: Vec<usize>,
        prediction: usize,
    },
    Split {
        feature: u32,
        /// Examples that have the feature.
        present: Box<Node>,
        absent: Box<Node>,
    },
}

impl Node {
    fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { present, absent, .. } => 1 + present.depth().max(absent.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DTreeModel {
    pub choices: Vec<String>,
    pub feature_index: FeatureIndex,
    pub hyper: TreeHyper,
    pub root: Node,
}

impl DTreeModel {
    pub fn depth(&self) -> usize {
        self.root.depth()
    }
}

impl Predictor for DTreeModel {
    fn choices(&self) -> &[String] {
        &self.choices
    }

    fn feature_index(&self) -> Option<&FeatureIndex> {
        Some(&self.feature_index)
    }

    fn predict_columns(&self, columns: &[u32]) -> usize {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { prediction, .. } => return *prediction,
                Node::Split {
                    feature,
                    present,
                    absent,
                } => {
                    node = if columns.binary_search(feature).is_ok() {
                        present
                    } else {
                        absent
                    };
                }
            }
        }
    }
}

impl ModelSpec for TreeHyper {
    type Model = DTreeModel;

    fn fit(&self, train: &Dataset) -> Result<DTreeModel> {
        train_decision_tree(train, self)
    }

    fn preference(&self, other: &Self) -> Ordering {
        let rank = |c: Criterion| u8::from(c == Criterion::Entropy);
        self.max_depth
            .cmp(&other.max_depth)
            .then_with(|| rank(self.criterion).cmp(&rank(other.criterion)))
    }
}

struct Grower<'a> {
    rows: &'a [Vec<u32>],
    labels: &'a [usize],
    k: usize,
    n_total: f64,
    hyper: &'a TreeHyper,
}

impl Grower<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &i in idx {
            c[self.labels[i]] += 1;
        }
        c
    }

    fn leaf(&self, counts: Vec<usize>) -> Node {
        let as_f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        Node::Leaf {
            prediction: argmax_first(&as_f),
            counts,
        }
    }

    fn grow(&self, idx: Vec<usize>, depth: usize) -> Node {
        let counts = self.counts(&idx);
        let n = idx.len();
        let parent = self.hyper.criterion.impurity(&counts, n);
        if depth >= self.hyper.max_depth || parent == 0.0 || n < 2 {
            return self.leaf(counts);
        }
        // class counts among examples having each feature
        let mut with: HashMap<u32, Vec<usize>> = HashMap::new();
        for &i in &idx {
            for &f in &self.rows[i] {
                with.entry(f).or_insert_with(|| vec![0; self.k])[self.labels[i]] += 1;
            }
        }
        let mut features: Vec<u32> = with.keys().copied().collect();
        features.sort_unstable();
        let mut best: Option<(u32, f64)> = None;
        let mut without = vec![0; self.k];
        for f in features {
            let present = &with[&f];
            let n_present: usize = present.iter().sum();
            if n_present == n {
                continue;
            }
            for c in 0..self.k {
                without[c] = counts[c] - present[c];
            }
            let n_absent = n - n_present;
            let children = (n_present as f64 * self.hyper.criterion.impurity(present, n_present)
                + n_absent as f64 * self.hyper.criterion.impurity(&without, n_absent))
                / n as f64;
            let decrease = (n as f64 / self.n_total) * (parent - children);
            if best.is_none_or(|(_, d)| decrease > d) {
                best = Some((f, decrease));
            }
        }
        match best {
            Some((f, d)) if d > 0.0 && d >= self.hyper.min_impurity_decrease => {
                let (present, absent): (Vec<usize>, Vec<usize>) =
                    idx.into_iter().partition(|&i| self.rows[i].binary_search(&f).is_ok());
                Node::Split {
                    feature: f,
                    present: Box::new(self.grow(present, depth + 1)),
                    absent: Box::new(self.grow(absent, depth + 1)),
                }
            }
            _ => self.leaf(counts),
        }
    }
}

pub fn train_decision_tree(train: &Dataset, hyper: &TreeHyper) -> Result<DTreeModel> {
    let labels = train.label_indices()?;
    if labels.iter().collect::<BTreeSet<_>>().len() < 2 {
        return Err(Error::SingleChoice);
    }
    let rows: Vec<Vec<u32>> = train.examples.iter().map(|e| e.features.clone()).collect();
    let grower = Grower {
        rows: &rows,
        labels: &labels,
        k: train.n_choices(),
        n_total: rows.len() as f64,
        hyper,
    };
    let root = grower.grow((0..rows.len()).collect(), 0);
    Ok(DTreeModel {
        choices: train.choices(),
        feature_index: train.feature_index.clone(),
        hyper: hyper.clone(),
        root,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::evaluate;
    use crate::synth::{planted_cue_dataset, PlantedCue};
    use proptest::prelude::*;

    fn noise_free() -> Dataset {
        planted_cue_dataset(&PlantedCue {
            n_choices: 2,
            n_examples: 100,
            seed: 4,
            ..Default::default()
        })
    }

    #[test]
    fn one_feature_decides() {
        let ds = noise_free();
        let t = train_decision_tree(&ds, &TreeHyper::default()).unwrap();
        assert_eq!(t.depth(), 1);
        assert_eq!(evaluate(&t, &ds).accuracy, 1.0);
    }

    #[test]
    fn huge_min_decrease_leaves_a_stump() {
        let ds = noise_free();
        let hyper = TreeHyper {
            min_impurity_decrease: 1.0,
            ..Default::default()
        };
        let t = train_decision_tree(&ds, &hyper).unwrap();
        assert_eq!(t.depth(), 0);
        let majority = crate::models::frequency_baseline(&ds).unwrap().majority;
        assert!(matches!(t.root, Node::Leaf { prediction, .. } if prediction == majority));
    }

    fn rows_consistent(node: &Node, rows_here: usize) -> bool {
        match node {
            Node::Leaf { counts, .. } => counts.iter().sum::<usize>() == rows_here,
            Node::Split { present, absent, .. } => {
                let np = leaf_total(present);
                let na = leaf_total(absent);
                np + na == rows_here && rows_consistent(present, np) && rows_consistent(absent, na)
            }
        }
    }

    fn leaf_total(node: &Node) -> usize {
        match node {
            Node::Leaf { counts, .. } => counts.iter().sum(),
            Node::Split { present, absent, .. } => leaf_total(present) + leaf_total(absent),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn depth_is_capped(seed: u64, k in 2usize..5, depth in 1usize..7, crit in prop::bool::ANY) {
            let ds = planted_cue_dataset(&PlantedCue {
                n_choices: k,
                n_examples: 150,
                noise: 0.3,
                seed,
                ..Default::default()
            });
            let hyper = TreeHyper {
                criterion: if crit { Criterion::Gini } else { Criterion::Entropy },
                max_depth: depth,
                min_impurity_decrease: 0.0,
            };
            let t = train_decision_tree(&ds, &hyper).unwrap();
            prop_assert!(t.depth() <= depth);
            prop_assert!(rows_consistent(&t.root, ds.examples.len()));
        }
    }
}
