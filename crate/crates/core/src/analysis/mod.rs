//! Learner accuracy and confidence over the first n attempted examples,
//! and the mixed-effects estimate of the rule effect.

mod lme;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::study::{Condition, Event, TrialRecord};

pub use lme::{fit_lme, profile_loglik, wald_p_value, GroupFactor, LmeData, LmeFit, VarianceComponent};

/// How many of each session's first answers to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SliceN {
    First(usize),
    All,
}

impl SliceN {
    /// 5, 10, 20, 30, 40, 50 and all.
    pub fn default_list() -> Vec<SliceN> {
        let mut v: Vec<SliceN> = [5, 10, 20, 30, 40, 50].into_iter().map(SliceN::First).collect();
        v.push(SliceN::All);
        v
    }

    fn admits(self, position: usize) -> bool {
        match self {
            SliceN::First(n) => position <= n,
            SliceN::All => true,
        }
    }
}

impl fmt::Display for SliceN {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SliceN::First(n) => write!(f, "{n}"),
            SliceN::All => f.write_str("all"),
        }
    }
}

impl FromStr for SliceN {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" | "All" => Ok(SliceN::All),
            t => t
                .parse::<usize>()
                .ok()
                .filter(|n| *n > 0)
                .map(SliceN::First)
                .ok_or_else(|| Error::Config(format!("expected a positive count or \"all\", got {s:?}"))),
        }
    }
}

impl Serialize for SliceN {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SliceN::First(n) => s.serialize_u64(*n as u64),
            SliceN::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for SliceN {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) if n > 0 => Ok(SliceN::First(n)),
            Raw::N(_) => Err(serde::de::Error::custom("slice size must be positive")),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One (learner, word) session summarized over its first n answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub learner: String,
    pub word: String,
    pub condition: Condition,
    pub word_order: usize,
    pub n_trials: usize,
    pub accuracy: f64,
    /// Mean confidence over correct answers; `None` without any.
    pub confidence_on_correct: Option<f64>,
}

/// Per-(learner, word) aggregates over answers at positions ≤ n, sorted by
/// learner and word. Shorter sessions use everything they have.
pub fn first_n_slice(trials: &[TrialRecord], n: SliceN) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(&str, &str), Vec<&TrialRecord>> = BTreeMap::new();
    for t in trials.iter().filter(|t| n.admits(t.position)) {
        groups.entry((&t.learner, &t.word)).or_default().push(t);
    }
    groups
        .into_iter()
        .map(|((learner, word), ts)| {
            let correct: Vec<&&TrialRecord> = ts.iter().filter(|t| t.correct).collect();
            Aggregate {
                learner: learner.to_string(),
                word: word.to_string(),
                condition: ts[0].condition,
                word_order: ts[0].word_order,
                n_trials: ts.len(),
                accuracy: correct.len() as f64 / ts.len() as f64,
                confidence_on_correct: (!correct.is_empty())
                    .then(|| correct.iter().map(|t| f64::from(t.confidence)).sum::<f64>() / correct.len() as f64),
            }
        })
        .collect()
}

/// Trials recorded in an event log, in log order.
pub fn trials_from_events(events: &[Event]) -> Vec<TrialRecord> {
    events
        .iter()
        .filter_map(|e| match e {
            Event::AnswerRecorded { trial } => Some(trial.clone()),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Accuracy,
    ConfidenceOnCorrect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Learner,
    Word,
    /// Place of the word in the learner's sequence.
    Position,
}

impl Grouping {
    pub const ALL: [Grouping; 3] = [Grouping::Learner, Grouping::Word, Grouping::Position];

    fn name(self) -> &'static str {
        match self {
            Grouping::Learner => "learner",
            Grouping::Word => "word",
            Grouping::Position => "position",
        }
    }
}

fn factors(rows: &[(&str, &str, usize)], groupings: &[Grouping]) -> Vec<GroupFactor> {
    groupings
        .iter()
        .map(|g| {
            let keys: Vec<String> = rows
                .iter()
                .map(|(l, w, p)| match g {
                    Grouping::Learner => l.to_string(),
                    Grouping::Word => w.to_string(),
                    Grouping::Position => format!("{p:06}"),
                })
                .collect();
            GroupFactor::from_keys(g.name(), &keys)
        })
        .collect()
}

fn rule_indicator(c: Condition) -> f64 {
    if c == Condition::Rules {
        1.0
    } else {
        0.0
    }
}

impl LmeData {
    /// One row per aggregate; rows without a response value are dropped.
    pub fn from_aggregates(aggs: &[Aggregate], response: Response, groupings: &[Grouping]) -> Self {
        let rows: Vec<(&Aggregate, f64)> = aggs
            .iter()
            .filter_map(|a| {
                let y = match response {
                    Response::Accuracy => Some(a.accuracy),
                    Response::ConfidenceOnCorrect => a.confidence_on_correct,
                };
                y.map(|y| (a, y))
            })
            .collect();
        let keys: Vec<(&str, &str, usize)> = rows
            .iter()
            .map(|(a, _)| (a.learner.as_str(), a.word.as_str(), a.word_order))
            .collect();
        LmeData {
            y: rows.iter().map(|(_, y)| *y).collect(),
            rule: rows.iter().map(|(a, _)| rule_indicator(a.condition)).collect(),
            groupings: factors(&keys, groupings),
        }
    }

    /// One 0/1 correctness row per trial.
    pub fn from_trials(trials: &[&TrialRecord], groupings: &[Grouping]) -> Self {
        let keys: Vec<(&str, &str, usize)> = trials
            .iter()
            .map(|t| (t.learner.as_str(), t.word.as_str(), t.word_order))
            .collect();
        LmeData {
            y: trials.iter().map(|t| f64::from(u8::from(t.correct))).collect(),
            rule: trials.iter().map(|t| rule_indicator(t.condition)).collect(),
            groupings: factors(&keys, groupings),
        }
    }
}

/// `***` below 0.01, `**` below 0.05, `*` below 0.1.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub n: SliceN,
    pub response: Response,
    pub intercept: f64,
    pub beta: f64,
    pub se: f64,
    pub p_value: f64,
    pub stars: String,
    pub fit: LmeFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: SliceN,
    pub condition: Condition,
    pub sessions: usize,
    pub mean_accuracy: f64,
    /// `None` when no session in this cell has a correct answer.
    pub mean_confidence_on_correct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleEffectReport {
    pub groupings: Vec<Grouping>,
    pub rows: Vec<EffectRow>,
    pub curves: Vec<CurvePoint>,
}

fn curve(n: SliceN, aggs: &[Aggregate]) -> Vec<CurvePoint> {
    [Condition::NoRules, Condition::Rules]
        .into_iter()
        .filter_map(|c| {
            let cell: Vec<&Aggregate> = aggs.iter().filter(|a| a.condition == c).collect();
            if cell.is_empty() {
                return None;
            }
            let conf: Vec<f64> = cell.iter().filter_map(|a| a.confidence_on_correct).collect();
            Some(CurvePoint {
                n,
                condition: c,
                sessions: cell.len(),
                mean_accuracy: cell.iter().map(|a| a.accuracy).sum::<f64>() / cell.len() as f64,
                mean_confidence_on_correct: (!conf.is_empty()).then(|| conf.iter().sum::<f64>() / conf.len() as f64),
            })
        })
        .collect()
}

/// One accuracy fit and one confidence fit per slice size, plus the mean
/// curves per condition.
pub fn rule_effect_report(
    trials: &[TrialRecord],
    n_list: &[SliceN],
    groupings: &[Grouping],
    exec: Execution,
) -> Result<RuleEffectReport> {
    let conditions: BTreeSet<Condition> = trials.iter().map(|t| t.condition).collect();
    if conditions.len() < 2 {
        return Err(Error::NotEstimable("trials cover only one condition".into()));
    }
    let slices: Vec<(SliceN, Vec<Aggregate>)> = n_list.iter().map(|&n| (n, first_n_slice(trials, n))).collect();
    let jobs: Vec<(usize, Response)> = (0..slices.len())
        .flat_map(|i| [(i, Response::Accuracy), (i, Response::ConfidenceOnCorrect)])
        .collect();
    let fits = par::map(exec, &jobs, |&(i, response)| {
        let (n, aggs) = &slices[i];
        let fit = fit_lme(&LmeData::from_aggregates(aggs, response, groupings))?;
        Ok(EffectRow {
            n: *n,
            response,
            intercept: fit.intercept,
            beta: fit.beta,
            se: fit.se_beta,
            p_value: fit.p_value,
            stars: significance_stars(fit.p_value).to_string(),
            fit,
        })
    });
    let rows = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let curves = slices.iter().flat_map(|(n, aggs)| curve(*n, aggs)).collect();
    Ok(RuleEffectReport {
        groupings: groupings.to_vec(),
        rows,
        curves,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordEffect {
    pub word: String,
    pub n_trials: usize,
    pub beta: Option<f64>,
    pub se: Option<f64>,
    pub p_value: Option<f64>,
    /// Mean accuracy of no-rules learners over the same slice.
    pub baseline_accuracy: Option<f64>,
    /// Held-out accuracy of the lexical model, when known.
    pub model_accuracy: Option<f64>,
    /// Why no fit is reported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Per-word rule effect on trial-level correctness over the first `n`
/// answers, with a learner random intercept. Every word in `trials`
/// appears exactly once; words whose fit fails carry a note instead.
pub fn per_word_effect(
    trials: &[TrialRecord],
    n: SliceN,
    model_accuracy: &BTreeMap<String, f64>,
    exec: Execution,
) -> Vec<WordEffect> {
    let mut by_word: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for t in trials.iter().filter(|t| n.admits(t.position)) {
        by_word.entry(&t.word).or_default().push(t);
    }
    // words whose trials all lie beyond n still get a row
    for t in trials {
        by_word.entry(&t.word).or_default();
    }
    let words: Vec<(&str, Vec<&TrialRecord>)> = by_word.into_iter().collect();
    par::map(exec, &words, |(word, ts)| {
        let aggs = first_n_slice(&ts.iter().map(|t| (*t).clone()).collect::<Vec<_>>(), n);
        let base: Vec<f64> = aggs
            .iter()
            .filter(|a| a.condition == Condition::NoRules)
            .map(|a| a.accuracy)
            .collect();
        let mut out = WordEffect {
            word: word.to_string(),
            n_trials: ts.len(),
            beta: None,
            se: None,
            p_value: None,
            baseline_accuracy: (!base.is_empty()).then(|| base.iter().sum::<f64>() / base.len() as f64),
            model_accuracy: model_accuracy.get(*word).copied(),
            note: None,
        };
        match fit_lme(&LmeData::from_trials(ts, &[Grouping::Learner])) {
            Ok(fit) => {
                out.beta = Some(fit.beta);
                out.se = Some(fit.se_beta);
                out.p_value = Some(fit.p_value);
            }
            Err(e) => out.note = Some(e.to_string()),
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial(
        learner: &str,
        word: &str,
        position: usize,
        correct: bool,
        confidence: u8,
        condition: Condition,
    ) -> TrialRecord {
        TrialRecord {
            learner: learner.into(),
            word: word.into(),
            example_id: format!("e{position}"),
            position,
            shown: vec!["a".into(), "b".into()],
            selected: if correct { "a".into() } else { "b".into() },
            correct,
            confidence,
            condition,
            word_order: 1,
            timestamp_ms: 0,
        }
    }

    #[test]
    fn slicing_arithmetic() {
        let ts: Vec<TrialRecord> = (1..=10)
            .map(|p| trial("l", "w", p, p <= 7, if p <= 7 { 4 } else { 1 }, Condition::Rules))
            .collect();
        let all = first_n_slice(&ts, SliceN::All);
        assert_eq!(all.len(), 1);
        assert!((all[0].accuracy - 0.7).abs() < 1e-12);
        assert_eq!(all[0].confidence_on_correct, Some(4.0));
        let five = first_n_slice(&ts, SliceN::First(5));
        assert_eq!(five[0].n_trials, 5);
        assert_eq!(five[0].accuracy, 1.0);
        assert_eq!(first_n_slice(&ts, SliceN::First(50)), all);
        let wrong: Vec<TrialRecord> = (1..=3)
            .map(|p| trial("l", "w", p, false, 2, Condition::Rules))
            .collect();
        assert_eq!(first_n_slice(&wrong, SliceN::All)[0].confidence_on_correct, None);
    }

    #[test]
    fn slice_parsing_and_serde() {
        assert_eq!("all".parse::<SliceN>().unwrap(), SliceN::All);
        assert_eq!("20".parse::<SliceN>().unwrap(), SliceN::First(20));
        assert!("0".parse::<SliceN>().is_err());
        let json = serde_json::to_string(&SliceN::default_list()).unwrap();
        assert_eq!(json, r#"[5,10,20,30,40,50,"all"]"#);
        let back: Vec<SliceN> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, SliceN::default_list());
    }

    #[test]
    fn stars() {
        assert_eq!(significance_stars(0.009), "***");
        assert_eq!(significance_stars(0.013), "**");
        assert_eq!(significance_stars(0.070), "*");
        assert_eq!(significance_stars(0.131), "");
    }

    #[test]
    fn single_condition_is_not_estimable() {
        let ts: Vec<TrialRecord> = (1..=4)
            .map(|p| trial("l", "w", p, true, 3, Condition::NoRules))
            .collect();
        assert!(matches!(
            rule_effect_report(&ts, &[SliceN::All], &[Grouping::Learner], Execution::Sequential),
            Err(Error::NotEstimable(_))
        ));
        let effects = per_word_effect(&ts, SliceN::First(20), &BTreeMap::new(), Execution::Sequential);
        assert_eq!(effects.len(), 1);
        assert!(effects[0].beta.is_none() && effects[0].note.is_some());
    }
}
