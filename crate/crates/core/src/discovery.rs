//! Focus-word discovery: alignment statistics over the corpus followed by
//! the frequency, entropy and sense filters and the lemma-variant merge.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{SentencePair, NO_SENSE};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceKey {
    pub lemma: String,
    pub upos: String,
}

impl SourceKey {
    pub fn new(lemma: &str, upos: &str) -> Self {
        SourceKey {
            lemma: lemma.to_string(),
            upos: upos.to_string(),
        }
    }

    /// Parses the `lemma|UPOS` form used on the command line.
    pub fn parse(s: &str) -> Result<Self> {
        match s.split_once('|') {
            Some((l, p)) if !l.is_empty() && !p.is_empty() => Ok(SourceKey::new(l, p)),
            _ => Err(Error::Config(format!("expected lemma|UPOS, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for SourceKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}|{}", self.lemma, self.upos)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TargetStats {
    /// Times the source type was aligned to this target lemma.
    pub count: u64,
    /// Same, broken down by the source token's sense symbol.
    pub senses: HashMap<String, u64>,
    /// Alignments of this target lemma to other source lemmas, inside
    /// sentence pairs that contain the source type.
    pub cross: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceStats {
    pub total: u64,
    pub targets: HashMap<String, TargetStats>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignmentCounts {
    sources: HashMap<SourceKey, SourceStats>,
}

impl AlignmentCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_pair(&mut self, pair: &SentencePair) {
        let present: BTreeSet<SourceKey> = pair.src.iter().map(|t| SourceKey::new(&t.lemma, &t.upos)).collect();
        for &(s, t) in &pair.align {
            let src = &pair.src[s];
            let tgt_lemma = &pair.tgt[t].lemma;
            let stats = self.sources.entry(SourceKey::new(&src.lemma, &src.upos)).or_default();
            stats.total += 1;
            let target = stats.targets.entry(tgt_lemma.clone()).or_default();
            target.count += 1;
            *target.senses.entry(src.sense_symbol().to_string()).or_default() += 1;

            for key in present.iter().filter(|k| k.lemma != src.lemma) {
                self.sources
                    .entry(key.clone())
                    .or_default()
                    .targets
                    .entry(tgt_lemma.clone())
                    .or_default()
                    .cross += 1;
            }
        }
    }

    /// Element-wise sum. Associative and commutative.
    pub fn merge(mut self, other: AlignmentCounts) -> AlignmentCounts {
        if self.sources.len() < other.sources.len() {
            return other.merge(self);
        }
        for (key, theirs) in other.sources {
            let mine = self.sources.entry(key).or_default();
            mine.total += theirs.total;
            for (lemma, t) in theirs.targets {
                let m = mine.targets.entry(lemma).or_default();
                m.count += t.count;
                m.cross += t.cross;
                for (sense, c) in t.senses {
                    *m.senses.entry(sense).or_default() += c;
                }
            }
        }
        self
    }

    pub fn source(&self, key: &SourceKey) -> Option<&SourceStats> {
        self.sources.get(key)
    }

    pub fn sources(&self) -> impl Iterator<Item = (&SourceKey, &SourceStats)> {
        self.sources.iter()
    }

    fn target(&self, lemma: &str, upos: &str, tgt: &str) -> Option<&TargetStats> {
        self.sources
            .get(&SourceKey::new(lemma, upos))
            .and_then(|s| s.targets.get(tgt))
    }

    pub fn pair_count(&self, lemma: &str, upos: &str, tgt: &str) -> u64 {
        self.target(lemma, upos, tgt).map_or(0, |t| t.count)
    }

    pub fn total_count(&self, lemma: &str, upos: &str) -> u64 {
        self.sources.get(&SourceKey::new(lemma, upos)).map_or(0, |s| s.total)
    }

    pub fn sense_count(&self, lemma: &str, upos: &str, sense: &str, tgt: &str) -> u64 {
        self.target(lemma, upos, tgt)
            .and_then(|t| t.senses.get(sense).copied())
            .unwrap_or(0)
    }

    pub fn cross_count(&self, lemma: &str, upos: &str, tgt: &str) -> u64 {
        self.target(lemma, upos, tgt).map_or(0, |t| t.cross)
    }

    /// Checks that pair counts sum to totals and sense counts to pair counts.
    pub fn is_consistent(&self) -> bool {
        self.sources.values().all(|s| {
            s.targets.values().map(|t| t.count).sum::<u64>() == s.total
                && s.targets.values().all(|t| t.senses.values().sum::<u64>() == t.count)
        })
    }
}

/// Sequential accumulation over any sequence of pairs.
pub fn accumulate_counts<'a>(pairs: impl IntoIterator<Item = &'a SentencePair>) -> AlignmentCounts {
    let mut counts = AlignmentCounts::new();
    for p in pairs {
        counts.add_pair(p);
    }
    counts
}

/// Accumulates an in-memory corpus, sharded across threads when allowed.
pub fn accumulate_counts_with(pairs: &[SentencePair], exec: Execution) -> AlignmentCounts {
    par::fold_reduce(
        exec,
        pairs,
        AlignmentCounts::new,
        |mut acc, p| {
            acc.add_pair(p);
            acc
        },
        AlignmentCounts::merge,
    )
}

/// Accumulates a streamed corpus in fixed-size batches, keeping memory
/// bounded by the batch size rather than the corpus size.
pub fn accumulate_stream<I>(stream: I, batch: usize, exec: Execution) -> Result<AlignmentCounts>
where
    I: IntoIterator<Item = Result<SentencePair>>,
{
    let batch = batch.max(1);
    let mut counts = AlignmentCounts::new();
    let mut buf = Vec::with_capacity(batch);
    for item in stream {
        buf.push(item?);
        if buf.len() == batch {
            counts = counts.merge(accumulate_counts_with(&buf, exec));
            buf.clear();
        }
    }
    if !buf.is_empty() {
        counts = counts.merge(accumulate_counts_with(&buf, exec));
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceStats {
    pub tgt_lemma: String,
    pub count: u64,
    pub prob: f64,
    pub majority_sense: String,
    pub merged_from: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusWord {
    pub lemma: String,
    pub upos: String,
    /// Alignments of the source type to any target lemma.
    pub total_count: u64,
    /// Entropy over the surviving choices, renormalized.
    pub entropy: f64,
    pub choices: Vec<ChoiceStats>,
}

impl FocusWord {
    pub fn key(&self) -> SourceKey {
        SourceKey::new(&self.lemma, &self.upos)
    }

    pub fn choice_lemmas(&self) -> Vec<String> {
        self.choices.iter().map(|c| c.tgt_lemma.clone()).collect()
    }

    /// Maps a raw target lemma to its canonical choice, if it belongs to one.
    pub fn canonical_choice(&self, raw: &str) -> Option<&str> {
        self.choices
            .iter()
            .find(|c| c.tgt_lemma == raw || c.merged_from.iter().any(|m| m == raw))
            .map(|c| c.tgt_lemma.as_str())
    }

    fn surviving_entropy(&self) -> f64 {
        let total: u64 = self.choices.iter().map(|c| c.count).sum();
        if total == 0 {
            return 0.0;
        }
        let probs: Vec<f64> = self
            .choices
            .iter()
            .filter(|c| c.count > 0)
            .map(|c| c.count as f64 / total as f64)
            .collect();
        entropy(&probs).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscoveryConfig {
    pub min_pair_count: u64,
    pub min_choices: usize,
    pub cross_align_max: u64,
    pub entropy_threshold: f64,
    pub merge_min_prefix: usize,
    pub merge_max_edit: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            min_pair_count: 50,
            min_choices: 2,
            cross_align_max: 3,
            entropy_threshold: 0.69,
            merge_min_prefix: 4,
            merge_max_edit: 2,
        }
    }
}

/// Σ −p·ln p. Every probability must lie in (0, 1] and the sum may not
/// exceed one.
pub fn entropy(probs: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    let mut h = 0.0;
    for &p in probs {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidProbability(p));
        }
        sum += p;
        h -= p * p.ln();
    }
    if sum > 1.0 + 1e-9 {
        return Err(Error::InvalidProbability(sum));
    }
    Ok(h)
}

fn majority_sense(target: &TargetStats) -> String {
    // Highest count wins; ties go to the lexicographically smallest symbol.
    target
        .senses
        .iter()
        .max_by(|(sa, ca), (sb, cb)| ca.cmp(cb).then_with(|| sb.cmp(sa)))
        .map(|(s, _)| s.clone())
        .unwrap_or_else(|| NO_SENSE.to_string())
}

fn sort_choices(choices: &mut [ChoiceStats]) {
    choices.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.tgt_lemma.cmp(&b.tgt_lemma)));
}

/// Keeps source types aligned to at least `min_choices` target lemmas at
/// least `min_pair` times each, then drops target lemmas with
/// `cross_max` or more alignments to other source lemmas.
pub fn filter_frequency(counts: &AlignmentCounts, min_pair: u64, min_choices: usize, cross_max: u64) -> Vec<FocusWord> {
    let mut keys: Vec<&SourceKey> = counts.sources.keys().collect();
    keys.sort();
    let mut out = Vec::new();
    for key in keys {
        let stats = &counts.sources[key];
        let frequent: Vec<(&String, &TargetStats)> = stats
            .targets
            .iter()
            .filter(|(_, t)| t.count > 0 && t.count >= min_pair)
            .collect();
        if frequent.len() < min_choices {
            continue;
        }
        let mut choices: Vec<ChoiceStats> = frequent
            .into_iter()
            .filter(|(_, t)| t.cross < cross_max)
            .map(|(lemma, t)| ChoiceStats {
                tgt_lemma: lemma.clone(),
                count: t.count,
                prob: t.count as f64 / stats.total as f64,
                majority_sense: majority_sense(t),
                merged_from: vec![lemma.clone()],
            })
            .collect();
        if choices.len() < min_choices || choices.is_empty() {
            continue;
        }
        sort_choices(&mut choices);
        let mut word = FocusWord {
            lemma: key.lemma.clone(),
            upos: key.upos.clone(),
            total_count: stats.total,
            entropy: 0.0,
            choices,
        };
        word.entropy = word.surviving_entropy();
        out.push(word);
    }
    out
}

/// Keeps candidates whose entropy over the surviving choices exceeds
/// `threshold`.
pub fn filter_entropy(candidates: Vec<FocusWord>, threshold: f64) -> Vec<FocusWord> {
    candidates
        .into_iter()
        .map(|mut w| {
            w.entropy = w.surviving_entropy();
            w
        })
        .filter(|w| w.entropy > threshold)
        .collect()
}

/// Keeps candidates whose choices all share one majority source sense.
pub fn filter_sense(candidates: Vec<FocusWord>, counts: &AlignmentCounts) -> Vec<FocusWord> {
    candidates
        .into_iter()
        .filter_map(|mut w| {
            let stats = counts.source(&w.key())?;
            for c in &mut w.choices {
                c.majority_sense = stats
                    .targets
                    .get(&c.tgt_lemma)
                    .map(majority_sense)
                    .unwrap_or_else(|| NO_SENSE.to_string());
            }
            let senses: HashSet<&str> = w.choices.iter().map(|c| c.majority_sense.as_str()).collect();
            (senses.len() <= 1).then_some(w)
        })
        .collect()
}

fn common_prefix_len(a: &[char], b: &[char]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

fn levenshtein(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Whether two target lemmas look like inflections of one lemma.
///
/// The shorter form must have at least `min_prefix` characters and share
/// with the longer one a prefix of `min_prefix` characters, or all but its
/// last character when it is exactly `min_prefix` long. The edit distance
/// between the shorter form and the equally long head of the longer form
/// must not exceed `max_edit`.
pub fn are_variants(a: &str, b: &str, min_prefix: usize, max_edit: usize) -> bool {
    let a: Vec<char> = a.to_lowercase().chars().collect();
    let b: Vec<char> = b.to_lowercase().chars().collect();
    let (short, long) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    if short.len() < min_prefix.max(1) {
        return false;
    }
    let need = min_prefix.min(short.len() - 1).max(1);
    if common_prefix_len(short, long) < need {
        return false;
    }
    levenshtein(short, &long[..short.len()]) <= max_edit
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Merges lemma variants of the same target word into one choice whose
/// lemma is the shortest variant. Idempotent.
pub fn merge_choice_variants(choices: &[ChoiceStats], min_prefix: usize, max_edit: usize) -> Vec<ChoiceStats> {
    let n = choices.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if are_variants(&choices[i].tgt_lemma, &choices[j].tgt_lemma, min_prefix, max_edit) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let r = find(&mut parent, i);
        groups[r].push(i);
    }
    let by_len = |a: &String, b: &String| a.chars().count().cmp(&b.chars().count()).then_with(|| a.cmp(b));
    let mut merged: Vec<ChoiceStats> = groups
        .into_iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let members: Vec<&ChoiceStats> = g.iter().map(|&i| &choices[i]).collect();
            let canonical = members
                .iter()
                .min_by(|a, b| by_len(&a.tgt_lemma, &b.tgt_lemma).then_with(|| b.count.cmp(&a.count)))
                .unwrap();
            let dominant = members
                .iter()
                .max_by(|a, b| a.count.cmp(&b.count).then_with(|| b.tgt_lemma.cmp(&a.tgt_lemma)))
                .unwrap();
            let mut from: Vec<String> = members
                .iter()
                .flat_map(|m| {
                    if m.merged_from.is_empty() {
                        vec![m.tgt_lemma.clone()]
                    } else {
                        m.merged_from.clone()
                    }
                })
                .collect();
            from.sort_by(by_len);
            from.dedup();
            ChoiceStats {
                tgt_lemma: canonical.tgt_lemma.clone(),
                count: members.iter().map(|m| m.count).sum(),
                prob: members.iter().map(|m| m.prob).sum(),
                majority_sense: dominant.majority_sense.clone(),
                merged_from: from,
            }
        })
        .collect();
    sort_choices(&mut merged);
    merged
}

/// Runs the whole discovery pipeline over precomputed counts.
pub fn discover_from_counts(counts: &AlignmentCounts, config: &DiscoveryConfig) -> Vec<FocusWord> {
    let candidates = filter_frequency(
        counts,
        config.min_pair_count,
        config.min_choices,
        config.cross_align_max,
    );
    let candidates = filter_entropy(candidates, config.entropy_threshold);
    let mut words: Vec<FocusWord> = filter_sense(candidates, counts)
        .into_iter()
        .filter_map(|mut w| {
            w.choices = merge_choice_variants(&w.choices, config.merge_min_prefix, config.merge_max_edit);
            (w.choices.len() >= config.min_choices.max(2)).then(|| {
                w.entropy = w.surviving_entropy();
                w
            })
        })
        .collect();
    words.sort_by(|a, b| {
        b.total_count
            .cmp(&a.total_count)
            .then_with(|| a.lemma.cmp(&b.lemma))
            .then_with(|| a.upos.cmp(&b.upos))
    });
    words
}

pub fn discover(pairs: &[SentencePair], config: &DiscoveryConfig) -> Vec<FocusWord> {
    discover_from_counts(&accumulate_counts_with(pairs, Execution::default()), config)
}
