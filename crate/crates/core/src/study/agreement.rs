use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, StudyConfig, StudyWord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardedChoice {
    pub word: String,
    pub choice: String,
    pub agreed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardedWord {
    pub word: String,
    /// Choices that survived on their own but were too few.
    pub remaining: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterOutcome {
    /// word → choice → example ids, for words that survive.
    pub kept: BTreeMap<String, BTreeMap<String, Vec<String>>>,
    pub discarded_choices: Vec<DiscardedChoice>,
    pub discarded_words: Vec<DiscardedWord>,
    /// (word, example id) pairs without unanimous, label-matching votes.
    pub rejected_examples: Vec<(String, String)>,
}

impl FilterOutcome {
    /// The study restricted to kept words, choices and examples.
    pub fn apply(&self, config: &StudyConfig) -> StudyConfig {
        let mut out = config.clone();
        out.words = config
            .words
            .iter()
            .filter_map(|w| {
                let kept = self.kept.get(&w.word)?;
                let ids: BTreeSet<&String> = kept.values().flatten().collect();
                Some(StudyWord {
                    choices: w.choices.iter().filter(|c| kept.contains_key(*c)).cloned().collect(),
                    examples: w.examples.iter().filter(|e| ids.contains(&e.id)).cloned().collect(),
                    ..w.clone()
                })
            })
            .collect();
        out
    }
}

/// Smallest kept-example count at which a choice stays in the study:
/// choices with ten or fewer agreed examples are dropped.
pub const DEFAULT_MIN_AGREED: usize = 11;

/// Keeps an example when every annotator picked the same choice and that
/// choice is its corpus label. A choice with fewer than `min_agreed` kept
/// examples is dropped, and so is a word left with fewer than two choices.
pub fn representative_filter(
    words: &[StudyWord],
    annotations: &[AnnotationRecord],
    min_agreed: usize,
) -> FilterOutcome {
    let mut votes: BTreeMap<(&str, &str), BTreeSet<&str>> = BTreeMap::new();
    for a in annotations {
        votes
            .entry((a.word.as_str(), a.example_id.as_str()))
            .or_default()
            .insert(a.selected.as_str());
    }
    let mut out = FilterOutcome::default();
    for w in words {
        let mut per_choice: BTreeMap<&str, Vec<String>> = w.choices.iter().map(|c| (c.as_str(), Vec::new())).collect();
        for e in &w.examples {
            let agreed = votes
                .get(&(w.word.as_str(), e.id.as_str()))
                .is_some_and(|v| v.len() == 1 && v.contains(e.label.as_str()));
            match per_choice.get_mut(e.label.as_str()) {
                Some(ids) if agreed => ids.push(e.id.clone()),
                _ => out.rejected_examples.push((w.word.clone(), e.id.clone())),
            }
        }
        let mut surviving = BTreeMap::new();
        for c in &w.choices {
            let ids = per_choice.remove(c.as_str()).unwrap_or_default();
            if ids.len() < min_agreed {
                out.discarded_choices.push(DiscardedChoice {
                    word: w.word.clone(),
                    choice: c.clone(),
                    agreed: ids.len(),
                });
            } else {
                surviving.insert(c.clone(), ids);
            }
        }
        if surviving.len() < 2 {
            out.discarded_words.push(DiscardedWord {
                word: w.word.clone(),
                remaining: surviving.into_keys().collect(),
            });
        } else {
            out.kept.insert(w.word.clone(), surviving);
        }
    }
    out
}

/// Fleiss' κ for an items × categories matrix of rating counts.
pub fn fleiss_kappa(counts: &[Vec<usize>]) -> Result<f64> {
    let first = counts.first().ok_or_else(|| Error::Agreement("no items".into()))?;
    let n: usize = first.iter().sum();
    if n < 2 {
        return Err(Error::Agreement(format!("need at least two raters per item, got {n}")));
    }
    let k = first.len();
    for (i, row) in counts.iter().enumerate() {
        if row.len() != k {
            return Err(Error::Agreement(format!(
                "item {i} has {} categories, expected {k}",
                row.len()
            )));
        }
        let m: usize = row.iter().sum();
        if m != n {
            return Err(Error::Agreement(format!("item {i} has {m} ratings, expected {n}")));
        }
    }
    let items = counts.len() as f64;
    let nf = n as f64;
    let p_bar = counts
        .iter()
        .map(|row| (row.iter().map(|&c| (c * c) as f64).sum::<f64>() - nf) / (nf * (nf - 1.0)))
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..k)
        .map(|j| {
            let p = counts.iter().map(|r| r[j] as f64).sum::<f64>() / (items * nf);
            p * p
        })
        .sum();
    if p_e >= 1.0 {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// κ over annotation records grouped by (word, example); categories are
/// all choices that occur in the records.
pub fn fleiss_kappa_from_records(records: &[AnnotationRecord]) -> Result<f64> {
    let categories: BTreeSet<(&str, &str)> = records.iter().map(|r| (r.word.as_str(), r.selected.as_str())).collect();
    let column: BTreeMap<(&str, &str), usize> = categories.into_iter().enumerate().map(|(i, c)| (c, i)).collect();
    let mut items: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for r in records {
        items
            .entry((r.word.as_str(), r.example_id.as_str()))
            .or_insert_with(|| vec![0; column.len()])[column[&(r.word.as_str(), r.selected.as_str())]] += 1;
    }
    let matrix: Vec<Vec<usize>> = items.into_values().collect();
    fleiss_kappa(&matrix)
}
