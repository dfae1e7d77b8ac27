//! The cloze study: condition assignment, learner sessions with early
//! stopping, native-speaker annotation and agreement statistics.
//!
//! All state changes go through [`Study`], which records them as
//! [`Event`]s. Replaying the events reproduces the state exactly.

mod agreement;
mod assign;
mod session;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureKey;
use crate::rules::{GlossMap, RuleSet};

pub use agreement::{
    fleiss_kappa, fleiss_kappa_from_records, representative_filter, DiscardedChoice, DiscardedWord, FilterOutcome,
    DEFAULT_MIN_AGREED,
};
pub use assign::{assign_conditions, ConditionAssignment};
pub use session::{
    read_events, write_event, AnnotationQuestion, AnnotationReceipt, ChoiceView, Event, Feedback, LearnerWord,
    NextAnnotation, NextQuestion, QuestionView, RulesView, SessionSummary, Study, StudyState,
};

/// Labels of the five confidence levels, index 0 is level 1.
pub const CONFIDENCE_LABELS: [&str; 5] = ["Not at all", "Slightly", "Somewhat", "Quite", "Very"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Rules,
    NoRules,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyExample {
    pub id: String,
    /// Sentence shown to the learner.
    pub text: String,
    /// Character range `[start, end)` of the focus word in `text`.
    pub focus_span: (usize, usize),
    /// Correct choice.
    pub label: String,
    /// Context features, used to highlight matching rules.
    #[serde(default)]
    pub features: BTreeSet<FeatureKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyWord {
    /// `lemma|UPOS`.
    pub word: String,
    pub choices: Vec<String>,
    /// Display forms for non-Latin scripts, keyed by choice.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub transliterations: BTreeMap<String, String>,
    pub examples: Vec<StudyExample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules: Option<RuleSet>,
}

fn default_cap() -> usize {
    40
}

fn default_streak() -> usize {
    10
}

fn default_display() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub words: Vec<StudyWord>,
    pub learners: Vec<String>,
    #[serde(default = "default_cap")]
    pub per_choice_cap: usize,
    #[serde(default = "default_streak")]
    pub streak_to_finish: usize,
    pub seed: u64,
    #[serde(default)]
    pub glosses: GlossMap,
    /// Number of rules per choice shown to learners.
    #[serde(default = "default_display")]
    pub rules_display: usize,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.streak_to_finish == 0 || self.per_choice_cap < self.streak_to_finish {
            return bad(format!(
                "per_choice_cap ({}) must be at least streak_to_finish ({}) and both positive",
                self.per_choice_cap, self.streak_to_finish
            ));
        }
        let learners: BTreeSet<&String> = self.learners.iter().collect();
        if learners.len() != self.learners.len() {
            return bad("duplicate learner id".into());
        }
        let mut words = BTreeSet::new();
        for w in &self.words {
            if !words.insert(&w.word) {
                return bad(format!("duplicate word {}", w.word));
            }
            let choices: BTreeSet<&String> = w.choices.iter().collect();
            if choices.len() < 2 || choices.len() != w.choices.len() {
                return bad(format!("{} needs at least two distinct choices", w.word));
            }
            let mut ids = BTreeSet::new();
            for e in &w.examples {
                if !ids.insert(&e.id) {
                    return bad(format!("{}: duplicate example id {}", w.word, e.id));
                }
                if !choices.contains(&e.label) {
                    return bad(format!("{}: example {} has unknown label {}", w.word, e.id, e.label));
                }
                let len = e.text.chars().count();
                if e.focus_span.0 > e.focus_span.1 || e.focus_span.1 > len {
                    return bad(format!("{}: example {} has a bad focus span", w.word, e.id));
                }
            }
            for c in &w.choices {
                if !w.examples.iter().any(|e| &e.label == c) {
                    return bad(format!("{}: choice {} has no examples", w.word, c));
                }
            }
        }
        Ok(())
    }

    pub fn word(&self, word: &str) -> Result<&StudyWord> {
        self.words
            .iter()
            .find(|w| w.word == word)
            .ok_or_else(|| Error::UnknownWord(word.to_string()))
    }
}

/// One learner answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub learner: String,
    pub word: String,
    pub example_id: String,
    /// 1-based index within the learner's session for this word.
    pub position: usize,
    pub shown: Vec<String>,
    pub selected: String,
    pub correct: bool,
    /// 1..=5, see [`CONFIDENCE_LABELS`].
    pub confidence: u8,
    pub condition: Condition,
    /// 1-based place of the word in the learner's word order.
    pub word_order: usize,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotator: String,
    pub word: String,
    pub example_id: String,
    pub selected: String,
    pub confidence: u8,
}

pub(crate) fn check_confidence(c: u8) -> Result<()> {
    if (1..=5).contains(&c) {
        Ok(())
    } else {
        Err(Error::InvalidConfidence(c))
    }
}

/// 64-bit FNV-1a, used to derive stable per-session seeds.
pub(crate) fn fnv1a(seed: u64, parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    };
    for b in seed.to_le_bytes() {
        eat(b);
    }
    for p in parts {
        for b in p.bytes() {
            eat(b);
        }
        eat(0xff);
    }
    h
}
