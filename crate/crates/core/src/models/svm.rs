//! One-vs-rest linear SVM with hinge loss and an unregularized intercept.
//!
//! Each binary sub-problem
//!
//! ```text
//! min ½‖w‖² + Σᵢ Uᵢ · max(0, 1 − yᵢ (w·xᵢ + b)),   Uᵢ = C·cᵢ
//! ```
//!
//! is solved in the dual with sequential minimal optimization: the equality
//! constraint Σ αᵢ yᵢ = 0 that comes from the free intercept forces updates
//! on pairs of variables. The working pair is picked with second-order
//! information and the weight vector is kept explicitly, so every step
//! costs two sparse kernel rows. Features are binary, so `xᵢ·xⱼ` is the
//! size of the intersection of two sorted column lists.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Dataset, FeatureIndex, FeatureKey};
use crate::models::{ModelSpec, Predictor};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeight {
    Balanced,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    #[serde(rename = "C")]
    pub c: f64,
    pub class_weight: ClassWeight,
    pub tolerance: f64,
    /// Cap on optimizer rounds; one round is one pair update per example.
    pub max_iter: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            c: 0.01,
            class_weight: ClassWeight::None,
            tolerance: 1e-4,
            max_iter: 10_000,
        }
    }
}

impl Hyperparams {
    pub fn new(c: f64, class_weight: ClassWeight) -> Self {
        Hyperparams {
            c,
            class_weight,
            ..Default::default()
        }
    }

    /// C ∈ {0.001, 0.01} × class weight ∈ {balanced, none}.
    pub fn default_grid() -> Vec<Hyperparams> {
        let mut grid = Vec::new();
        for c in [0.001, 0.01] {
            for w in [ClassWeight::Balanced, ClassWeight::None] {
                grid.push(Hyperparams::new(c, w));
            }
        }
        grid
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("C must be positive, got {}", self.c)));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Convergence record of one binary sub-problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub updates: usize,
    pub converged: bool,
    /// Final maximal KKT violation.
    pub kkt_gap: f64,
    /// Primal objective at the returned (w, b).
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearOvRModel {
    /// Focus word as `lemma|UPOS`.
    #[serde(default)]
    pub word: String,
    pub choices: Vec<String>,
    pub feature_index: FeatureIndex,
    /// One dense weight row per choice.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub hyper: Hyperparams,
    pub loss: String,
    pub intercept: String,
    pub solver: Vec<SolverInfo>,
}

impl LinearOvRModel {
    pub fn scores(&self, columns: &[u32]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| b + columns.iter().map(|&c| w[c as usize]).sum::<f64>())
            .collect()
    }

    /// Best-scoring choice; unseen features are ignored.
    pub fn predict(&self, features: &BTreeSet<FeatureKey>) -> &str {
        let cols = self.feature_index.encode(features);
        &self.choices[self.predict_columns(&cols)]
    }

    pub fn converged(&self) -> bool {
        self.solver.iter().all(|s| s.converged)
    }
}

/// Index of the largest value; ties go to the earliest position.
pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Predictor for LinearOvRModel {
    fn choices(&self) -> &[String] {
        &self.choices
    }

    fn feature_index(&self) -> Option<&FeatureIndex> {
        Some(&self.feature_index)
    }

    fn predict_columns(&self, columns: &[u32]) -> usize {
        argmax_first(&self.scores(columns))
    }
}

impl ModelSpec for Hyperparams {
    type Model = LinearOvRModel;

    fn fit(&self, train: &Dataset) -> Result<LinearOvRModel> {
        train_linear_svm_with(train, self, Execution::Sequential)
    }

    fn preference(&self, other: &Self) -> Ordering {
        let rank = |w: ClassWeight| u8::from(w == ClassWeight::Balanced);
        self.c
            .total_cmp(&other.c)
            .then_with(|| rank(self.class_weight).cmp(&rank(other.class_weight)))
    }
}

fn overlap(a: &[u32], b: &[u32]) -> f64 {
    let (mut i, mut j, mut n) = (0, 0, 0u32);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n as f64
}

pub(crate) fn dot(w: &[f64], cols: &[u32]) -> f64 {
    cols.iter().map(|&c| w[c as usize]).sum()
}

/// Primal objective ½‖w‖² + Σ Uᵢ·hinge.
pub fn primal_objective(rows: &[Vec<u32>], y: &[f64], upper: &[f64], w: &[f64], b: f64) -> f64 {
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 = rows
        .iter()
        .zip(y)
        .zip(upper)
        .map(|((x, &yi), &u)| u * (1.0 - yi * (dot(w, x) + b)).max(0.0))
        .sum();
    reg + loss
}

/// Intercept minimizing the hinge term for fixed scores `s`.
fn best_intercept(scores: &[f64], y: &[f64], upper: &[f64]) -> f64 {
    // The loss is convex and piecewise linear in b with a kink at yᵢ − sᵢ.
    // Its slope starts at −Σ_{y=+1} Uᵢ and every kink adds Uᵢ.
    let mut kinks: Vec<(f64, f64)> = scores
        .iter()
        .zip(y)
        .zip(upper)
        .map(|((s, yi), u)| (yi - s, *u))
        .collect();
    kinks.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pos: f64 = y.iter().zip(upper).filter(|(yi, _)| **yi > 0.0).map(|(_, u)| u).sum();
    let mut slope = -pos;
    if slope >= 0.0 {
        return kinks.first().map_or(0.0, |k| k.0);
    }
    for (b, u) in &kinks {
        slope += u;
        if slope >= -1e-15 {
            return *b;
        }
    }
    kinks.last().map_or(0.0, |k| k.0)
}

#[derive(Debug, Clone)]
pub struct BinarySolution {
    pub w: Vec<f64>,
    pub b: f64,
    pub alpha: Vec<f64>,
    pub info: SolverInfo,
}

/// Solves one binary hinge-loss problem. `rows` hold sorted column ids,
/// `y` is ±1 and `upper` the per-example box bound C·cᵢ.
pub fn solve_binary(
    rows: &[Vec<u32>],
    y: &[f64],
    upper: &[f64],
    n_features: usize,
    tolerance: f64,
    max_iter: usize,
) -> BinarySolution {
    const TAU: f64 = 1e-12;
    let n = rows.len();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; n_features];
    // Gradient of ½αᵀQα − eᵀα; with α = 0 every entry is −1.
    let mut grad = vec![-1.0; n];
    let diag: Vec<f64> = rows.iter().map(|r| r.len() as f64).collect();
    let mut k_i = vec![0.0; n];
    let mut k_j = vec![0.0; n];
    let max_updates = max_iter.saturating_mul(n.max(1));
    let mut updates = 0;
    let mut gap;

    let in_up = |a: f64, yi: f64, u: f64| if yi > 0.0 { a < u } else { a > 0.0 };
    let in_low = |a: f64, yi: f64, u: f64| if yi > 0.0 { a > 0.0 } else { a < u };

    let converged = loop {
        let mut g_max = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        let mut g_min = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t], upper[t]) && v > g_max {
                g_max = v;
                i = t;
            }
            if in_low(alpha[t], y[t], upper[t]) && v < g_min {
                g_min = v;
            }
        }
        gap = if i == usize::MAX || g_min == f64::INFINITY {
            0.0
        } else {
            g_max - g_min
        };
        if gap < tolerance {
            break true;
        }
        if updates >= max_updates {
            break false;
        }

        for t in 0..n {
            k_i[t] = overlap(&rows[i], &rows[t]);
        }
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], y[t], upper[t]) {
                continue;
            }
            let b = g_max + y[t] * grad[t];
            if b > 0.0 {
                let mut a = diag[i] + diag[t] - 2.0 * k_i[t];
                if a <= 0.0 {
                    a = TAU;
                }
                let score = -(b * b) / a;
                if score < best {
                    best = score;
                    j = t;
                }
            }
        }
        if j == usize::MAX {
            break true;
        }
        for t in 0..n {
            k_j[t] = overlap(&rows[j], &rows[t]);
        }

        let (ci, cj) = (upper[i], upper[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let mut quad = diag[i] + diag[j] - 2.0 * k_i[j];
        if quad <= 0.0 {
            quad = TAU;
        }
        let (mut ai, mut aj) = (old_i, old_j);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > ci - cj {
                if ai > ci {
                    ai = ci;
                    aj = ci - diff;
                }
            } else if aj > cj {
                aj = cj;
                ai = cj + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > ci {
                if ai > ci {
                    ai = ci;
                    aj = sum - ci;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > cj {
                if aj > cj {
                    aj = cj;
                    ai = sum - cj;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let di = (ai - old_i) * y[i];
        let dj = (aj - old_j) * y[j];
        for &c in &rows[i] {
            w[c as usize] += di;
        }
        for &c in &rows[j] {
            w[c as usize] += dj;
        }
        for t in 0..n {
            grad[t] += y[t] * (di * k_i[t] + dj * k_j[t]);
        }
        updates += 1;
    };

    let scores: Vec<f64> = rows.iter().map(|r| dot(&w, r)).collect();
    let b = best_intercept(&scores, y, upper);
    let objective = primal_objective(rows, y, upper, &w, b);
    BinarySolution {
        w,
        b,
        alpha,
        info: SolverInfo {
            updates,
            converged,
            kkt_gap: gap,
            objective,
        },
    }
}

/// Per-example weights cᵢ for one binary sub-problem.
pub fn example_weights(y: &[f64], class_weight: ClassWeight) -> Vec<f64> {
    match class_weight {
        ClassWeight::None => vec![1.0; y.len()],
        ClassWeight::Balanced => {
            let n = y.len() as f64;
            let pos = y.iter().filter(|v| **v > 0.0).count() as f64;
            let neg = n - pos;
            y.iter()
                .map(|v| if *v > 0.0 { n / (2.0 * pos) } else { n / (2.0 * neg) })
                .collect()
        }
    }
}

pub fn train_linear_svm(train: &Dataset, hyper: &Hyperparams) -> Result<LinearOvRModel> {
    train_linear_svm_with(train, hyper, Execution::default())
}

/// Trains one binary model per choice, in parallel when `exec` allows.
pub fn train_linear_svm_with(train: &Dataset, hyper: &Hyperparams, exec: Execution) -> Result<LinearOvRModel> {
    hyper.validate()?;
    let labels = train.label_indices()?;
    let present: BTreeSet<usize> = labels.iter().copied().collect();
    if present.len() < 2 {
        return Err(Error::SingleChoice);
    }
    let rows: Vec<Vec<u32>> = train.examples.iter().map(|e| e.features.clone()).collect();
    let n_features = train.feature_index.len();
    let solutions = par::map_range(exec, train.n_choices(), |k| {
        let y: Vec<f64> = labels.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
        let upper: Vec<f64> = example_weights(&y, hyper.class_weight)
            .into_iter()
            .map(|c| c * hyper.c)
            .collect();
        solve_binary(&rows, &y, &upper, n_features, hyper.tolerance, hyper.max_iter)
    });
    for (k, s) in solutions.iter().enumerate() {
        if !s.info.converged {
            log::warn!(
                "{}: sub-model for {:?} stopped at the iteration cap (KKT gap {:.3e})",
                train.focus.key(),
                train.choices()[k],
                s.info.kkt_gap
            );
        }
    }
    let (weights, biases, solver) =
        solutions
            .into_iter()
            .fold((Vec::new(), Vec::new(), Vec::new()), |(mut w, mut b, mut s), sol| {
                w.push(sol.w);
                b.push(sol.b);
                s.push(sol.info);
                (w, b, s)
            });
    Ok(LinearOvRModel {
        word: train.focus.key().to_string(),
        choices: train.choices(),
        feature_index: train.feature_index.clone(),
        weights,
        biases,
        hyper: hyper.clone(),
        loss: "hinge".into(),
        intercept: "unregularized".into(),
        solver,
    })
}
