use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    assign_conditions, check_confidence, fnv1a, AnnotationRecord, Condition, ConditionAssignment, StudyConfig,
    StudyWord, TrialRecord,
};
use crate::error::{Error, Result};
use crate::rules::{match_rules, render_choice, Rule};

/// Everything that changes the study, in the order it happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    StudyCreated {
        config: StudyConfig,
    },
    QuestionServed {
        learner: String,
        word: String,
        example_id: String,
        position: usize,
    },
    AnswerRecorded {
        trial: TrialRecord,
    },
    AnnotationServed {
        annotator: String,
        word: String,
        example_id: String,
    },
    AnnotationRecorded {
        record: AnnotationRecord,
    },
}

pub fn write_event<W: Write>(mut out: W, event: &Event) -> Result<()> {
    serde_json::to_writer(&mut out, event)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Pending {
    example: usize,
    choice: usize,
    shown: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Session {
    seed: u64,
    condition: Condition,
    word_order: usize,
    /// Shuffled, capped example indices per choice.
    queues: Vec<Vec<usize>>,
    /// Round-robin order over choice indices.
    cycle: Vec<usize>,
    cursor: usize,
    served: Vec<usize>,
    streak: Vec<usize>,
    answered: usize,
    pending: Option<Pending>,
    done: bool,
}

impl Session {
    fn new(seed: u64, word: &StudyWord, cap: usize, condition: Condition, word_order: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let queues = word
            .choices
            .iter()
            .map(|c| {
                let mut q: Vec<usize> = (0..word.examples.len())
                    .filter(|&i| &word.examples[i].label == c)
                    .collect();
                q.shuffle(&mut rng);
                q.truncate(cap);
                q
            })
            .collect();
        let mut cycle: Vec<usize> = (0..word.choices.len()).collect();
        cycle.shuffle(&mut rng);
        let k = word.choices.len();
        Session {
            seed,
            condition,
            word_order,
            queues,
            cycle,
            cursor: 0,
            served: vec![0; k],
            streak: vec![0; k],
            answered: 0,
            pending: None,
            done: false,
        }
    }

    /// Next choice in round-robin order that still has examples.
    fn next_choice(&self) -> Option<(usize, usize)> {
        let k = self.cycle.len();
        (0..k)
            .map(|step| (self.cursor + step) % k)
            .find(|&slot| {
                let c = self.cycle[slot];
                self.served[c] < self.queues[c].len()
            })
            .map(|slot| (slot, self.cycle[slot]))
    }

    fn check_done(&mut self, streak_to_finish: usize) {
        let all_streaks = self.streak.iter().all(|&s| s >= streak_to_finish);
        if all_streaks || self.next_choice().is_none() {
            self.done = true;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct AnnotatorState {
    /// Index into the flattened (word, example) queue.
    next: usize,
    pending: Option<(usize, usize, Vec<String>)>,
}

/// Complete mutable state of a study; serializes deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyState {
    assignment: ConditionAssignment,
    sessions: BTreeMap<String, BTreeMap<String, Session>>,
    annotators: BTreeMap<String, AnnotatorState>,
    trials: Vec<TrialRecord>,
    annotations: Vec<AnnotationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceView {
    pub choice: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transliteration: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    pub learner: String,
    pub word: String,
    pub example_id: String,
    pub position: usize,
    pub text: String,
    pub focus_span: (usize, usize),
    pub choices: Vec<ChoiceView>,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub learner: String,
    pub word: String,
    pub condition: Condition,
    pub answered: usize,
    pub correct: usize,
    /// Questions served per choice, in the word's choice order.
    pub served: Vec<usize>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextQuestion {
    Question(QuestionView),
    Done(SessionSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub correct_choice: String,
    pub was_correct: bool,
    /// Rendered rules of the correct choice; rules condition only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rules_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rules: Option<Vec<Rule>>,
    /// Rules of the correct choice that fire on this example.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched: Option<Vec<Rule>>,
    pub session_done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerWord {
    pub word: String,
    pub condition: Condition,
    pub done: bool,
    pub answered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulesView {
    pub word: String,
    /// choice → rendered rule text.
    pub choices: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationQuestion {
    pub annotator: String,
    pub word: String,
    pub example_id: String,
    pub text: String,
    pub focus_span: (usize, usize),
    pub choices: Vec<ChoiceView>,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextAnnotation {
    Question(AnnotationQuestion),
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationReceipt {
    pub recorded: AnnotationRecord,
    pub remaining: usize,
}

/// A running study. Every mutating call returns the value it produced
/// and appends the matching [`Event`] to [`Study::events`].
#[derive(Debug, Clone)]
pub struct Study {
    config: StudyConfig,
    state: StudyState,
    events: Vec<Event>,
    /// Flattened (word index, example index) annotation queue.
    annotation_queue: Vec<(usize, usize)>,
}

impl Study {
    pub fn create(config: StudyConfig) -> Result<Study> {
        config.validate()?;
        let assignment = assign_conditions(&config)?;
        let mut sessions = BTreeMap::new();
        for learner in &config.learners {
            let order = &assignment.word_order[learner];
            let per = config
                .words
                .iter()
                .map(|w| {
                    let place = order.iter().position(|x| x == &w.word).unwrap_or(0) + 1;
                    let seed = fnv1a(config.seed, &[learner, &w.word]);
                    let condition = assignment.conditions[learner][&w.word];
                    (
                        w.word.clone(),
                        Session::new(seed, w, config.per_choice_cap, condition, place),
                    )
                })
                .collect();
            sessions.insert(learner.clone(), per);
        }
        let annotation_queue = config
            .words
            .iter()
            .enumerate()
            .flat_map(|(wi, w)| (0..w.examples.len()).map(move |ei| (wi, ei)))
            .collect();
        Ok(Study {
            events: vec![Event::StudyCreated { config: config.clone() }],
            config,
            state: StudyState {
                assignment,
                sessions,
                annotators: BTreeMap::new(),
                trials: Vec::new(),
                annotations: Vec::new(),
            },
            annotation_queue,
        })
    }

    /// Rebuilds a study by re-executing a log, checking that every
    /// re-executed step reproduces the logged outcome.
    pub fn replay(events: &[Event]) -> Result<Study> {
        let diverged = |index: usize, reason: String| Error::Replay { index, reason };
        let mut study = match events.first() {
            Some(Event::StudyCreated { config }) => Study::create(config.clone())?,
            _ => return Err(diverged(0, "log must start with study_created".into())),
        };
        for (i, ev) in events.iter().enumerate().skip(1) {
            match ev {
                Event::StudyCreated { .. } => return Err(diverged(i, "second study_created".into())),
                Event::QuestionServed { learner, word, .. } => {
                    study.next_question(learner, word)?;
                }
                Event::AnswerRecorded { trial } => {
                    study.record_answer(
                        &trial.learner,
                        &trial.word,
                        &trial.example_id,
                        &trial.selected,
                        trial.confidence,
                        trial.timestamp_ms,
                    )?;
                }
                Event::AnnotationServed { annotator, .. } => {
                    study.next_annotation(annotator)?;
                }
                Event::AnnotationRecorded { record } => {
                    study.record_annotation(
                        &record.annotator,
                        &record.example_id,
                        &record.selected,
                        record.confidence,
                    )?;
                }
            }
            if study.events.last() != Some(ev) {
                return Err(diverged(i, format!("expected {ev:?}, got {:?}", study.events.last())));
            }
        }
        Ok(study)
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    pub fn assignment(&self) -> &ConditionAssignment {
        &self.state.assignment
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn trials(&self) -> &[TrialRecord] {
        &self.state.trials
    }

    pub fn annotations(&self) -> &[AnnotationRecord] {
        &self.state.annotations
    }

    /// Canonical JSON of the full state, used to compare replays.
    pub fn snapshot(&self) -> String {
        serde_json::to_string(&self.state).expect("state is always serializable")
    }

    fn word_index(&self, word: &str) -> Result<usize> {
        self.config
            .words
            .iter()
            .position(|w| w.word == word)
            .ok_or_else(|| Error::UnknownWord(word.to_string()))
    }

    fn session(&self, learner: &str, word: &str) -> Result<&Session> {
        self.state
            .sessions
            .get(learner)
            .ok_or_else(|| Error::UnknownLearner(learner.to_string()))?
            .get(word)
            .ok_or_else(|| Error::UnknownWord(word.to_string()))
    }

    fn session_mut(&mut self, learner: &str, word: &str) -> Result<&mut Session> {
        self.state
            .sessions
            .get_mut(learner)
            .ok_or_else(|| Error::UnknownLearner(learner.to_string()))?
            .get_mut(word)
            .ok_or_else(|| Error::UnknownWord(word.to_string()))
    }

    fn choice_views(&self, w: &StudyWord, shown: &[String]) -> Vec<ChoiceView> {
        shown
            .iter()
            .map(|c| ChoiceView {
                choice: c.clone(),
                transliteration: w.transliterations.get(c).cloned(),
            })
            .collect()
    }

    /// Words of a learner in presentation order.
    pub fn learner_words(&self, learner: &str) -> Result<Vec<LearnerWord>> {
        let order = self
            .state
            .assignment
            .word_order
            .get(learner)
            .ok_or_else(|| Error::UnknownLearner(learner.to_string()))?;
        order
            .iter()
            .map(|w| {
                let s = self.session(learner, w)?;
                Ok(LearnerWord {
                    word: w.clone(),
                    condition: s.condition,
                    done: s.done,
                    answered: s.answered,
                })
            })
            .collect()
    }

    pub fn summary(&self, learner: &str, word: &str) -> Result<SessionSummary> {
        let s = self.session(learner, word)?;
        let correct = self
            .state
            .trials
            .iter()
            .filter(|t| t.learner == learner && t.word == word && t.correct)
            .count();
        Ok(SessionSummary {
            learner: learner.to_string(),
            word: word.to_string(),
            condition: s.condition,
            answered: s.answered,
            correct,
            served: s.served.clone(),
            done: s.done,
        })
    }

    /// Serves the next question, or the pending one again if it has not
    /// been answered yet. Repeats are not logged.
    pub fn next_question(&mut self, learner: &str, word: &str) -> Result<NextQuestion> {
        let wi = self.word_index(word)?;
        let all_choices = self.config.words[wi].choices.clone();
        let s = self.session_mut(learner, word)?;
        if s.done {
            return Ok(NextQuestion::Done(self.summary(learner, word)?));
        }
        let fresh = s.pending.is_none();
        if fresh {
            let Some((slot, choice)) = s.next_choice() else {
                s.done = true;
                return Ok(NextQuestion::Done(self.summary(learner, word)?));
            };
            let example = s.queues[choice][s.served[choice]];
            s.served[choice] += 1;
            s.cursor = (slot + 1) % s.cycle.len();
            let mut shown = all_choices;
            let position = s.answered + 1;
            shown.shuffle(&mut ChaCha8Rng::seed_from_u64(
                s.seed ^ (position as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            ));
            s.pending = Some(Pending { example, choice, shown });
        }
        let s = self.session(learner, word)?;
        let pending = s.pending.clone().expect("pending question set above");
        let w = &self.config.words[wi];
        let ex = &w.examples[pending.example];
        let view = QuestionView {
            learner: learner.to_string(),
            word: word.to_string(),
            example_id: ex.id.clone(),
            position: s.answered + 1,
            text: ex.text.clone(),
            focus_span: ex.focus_span,
            choices: self.choice_views(w, &pending.shown),
            condition: s.condition,
        };
        if fresh {
            self.events.push(Event::QuestionServed {
                learner: learner.to_string(),
                word: word.to_string(),
                example_id: view.example_id.clone(),
                position: view.position,
            });
        }
        Ok(NextQuestion::Question(view))
    }

    pub fn record_answer(
        &mut self,
        learner: &str,
        word: &str,
        example_id: &str,
        selected: &str,
        confidence: u8,
        timestamp_ms: u64,
    ) -> Result<Feedback> {
        let wi = self.word_index(word)?;
        let streak_to_finish = self.config.streak_to_finish;
        let s = self.session(learner, word)?;
        if s.done {
            return Err(Error::SessionClosed {
                learner: learner.to_string(),
                word: word.to_string(),
            });
        }
        let w = &self.config.words[wi];
        let pending = s
            .pending
            .clone()
            .ok_or_else(|| Error::StaleAnswer(format!("no question pending for {example_id:?}")))?;
        let ex = &w.examples[pending.example];
        if ex.id != example_id {
            return Err(Error::StaleAnswer(format!(
                "pending question is {:?}, not {example_id:?}",
                ex.id
            )));
        }
        check_confidence(confidence)?;
        if !pending.shown.iter().any(|c| c == selected) {
            return Err(Error::UnknownChoice(selected.to_string()));
        }
        let correct = selected == ex.label;
        let condition = s.condition;
        let trial = TrialRecord {
            learner: learner.to_string(),
            word: word.to_string(),
            example_id: example_id.to_string(),
            position: s.answered + 1,
            shown: pending.shown.clone(),
            selected: selected.to_string(),
            correct,
            confidence,
            condition,
            word_order: s.word_order,
            timestamp_ms,
        };
        let mut feedback = Feedback {
            correct_choice: ex.label.clone(),
            was_correct: correct,
            rules_text: None,
            rules: None,
            matched: None,
            session_done: false,
        };
        if condition == Condition::Rules {
            if let Some(rules) = &w.rules {
                let shown: Vec<Rule> = rules
                    .rules_for(&ex.label)?
                    .iter()
                    .take(self.config.rules_display)
                    .cloned()
                    .collect();
                let matched = match_rules(rules, &ex.label, &ex.features)?
                    .into_iter()
                    .filter(|r| r.rank <= self.config.rules_display)
                    .collect();
                feedback.rules_text = Some(render_choice(
                    rules,
                    &ex.label,
                    &self.config.glosses,
                    self.config.rules_display,
                )?);
                feedback.rules = Some(shown);
                feedback.matched = Some(matched);
            }
        }

        let s = self.session_mut(learner, word)?;
        s.pending = None;
        s.answered += 1;
        s.streak[pending.choice] = if correct { s.streak[pending.choice] + 1 } else { 0 };
        s.check_done(streak_to_finish);
        feedback.session_done = s.done;
        self.state.trials.push(trial.clone());
        self.events.push(Event::AnswerRecorded { trial });
        Ok(feedback)
    }

    /// Rendered rules of every choice, for learners in the rules
    /// condition of `word`.
    pub fn rules_view(&self, word: &str, learner: &str) -> Result<RulesView> {
        let w = self.config.word(word)?;
        if self.state.assignment.condition(learner, word)? != Condition::Rules {
            return Err(Error::RulesHidden {
                learner: learner.to_string(),
                word: word.to_string(),
            });
        }
        let choices = match &w.rules {
            Some(rules) => w
                .choices
                .iter()
                .map(|c| {
                    Ok((
                        c.clone(),
                        render_choice(rules, c, &self.config.glosses, self.config.rules_display)?,
                    ))
                })
                .collect::<Result<_>>()?,
            None => w.choices.iter().map(|c| (c.clone(), String::new())).collect(),
        };
        Ok(RulesView {
            word: word.to_string(),
            choices,
        })
    }

    /// Next example for a native-speaker annotator. Annotators are
    /// identified by opaque ids and registered on first contact.
    pub fn next_annotation(&mut self, annotator: &str) -> Result<NextAnnotation> {
        let total = self.annotation_queue.len();
        let st = self
            .state
            .annotators
            .entry(annotator.to_string())
            .or_insert(AnnotatorState { next: 0, pending: None });
        let fresh = st.pending.is_none();
        if fresh {
            if st.next >= total {
                return Ok(NextAnnotation::Done);
            }
            let (wi, ei) = self.annotation_queue[st.next];
            let mut shown = self.config.words[wi].choices.clone();
            shown.shuffle(&mut ChaCha8Rng::seed_from_u64(fnv1a(
                self.config.seed,
                &[annotator, &st.next.to_string()],
            )));
            st.pending = Some((wi, ei, shown));
        }
        let (wi, ei, shown) = st.pending.clone().expect("pending annotation set above");
        let remaining = total - st.next;
        let w = &self.config.words[wi];
        let ex = &w.examples[ei];
        let q = AnnotationQuestion {
            annotator: annotator.to_string(),
            word: w.word.clone(),
            example_id: ex.id.clone(),
            text: ex.text.clone(),
            focus_span: ex.focus_span,
            choices: self.choice_views(w, &shown),
            remaining,
        };
        if fresh {
            self.events.push(Event::AnnotationServed {
                annotator: annotator.to_string(),
                word: q.word.clone(),
                example_id: q.example_id.clone(),
            });
        }
        Ok(NextAnnotation::Question(q))
    }

    pub fn record_annotation(
        &mut self,
        annotator: &str,
        example_id: &str,
        selected: &str,
        confidence: u8,
    ) -> Result<AnnotationReceipt> {
        let total = self.annotation_queue.len();
        let st = self
            .state
            .annotators
            .get_mut(annotator)
            .ok_or_else(|| Error::StaleAnswer(format!("nothing served to annotator {annotator:?}")))?;
        let (wi, ei, shown) = st
            .pending
            .clone()
            .ok_or_else(|| Error::StaleAnswer(format!("no annotation pending for {example_id:?}")))?;
        let w = &self.config.words[wi];
        if w.examples[ei].id != example_id {
            return Err(Error::StaleAnswer(format!(
                "pending example is {:?}, not {example_id:?}",
                w.examples[ei].id
            )));
        }
        check_confidence(confidence)?;
        if !shown.iter().any(|c| c == selected) {
            return Err(Error::UnknownChoice(selected.to_string()));
        }
        st.pending = None;
        st.next += 1;
        let remaining = total - st.next;
        let record = AnnotationRecord {
            annotator: annotator.to_string(),
            word: w.word.clone(),
            example_id: example_id.to_string(),
            selected: selected.to_string(),
            confidence,
        };
        self.state.annotations.push(record.clone());
        self.events.push(Event::AnnotationRecorded { record: record.clone() });
        Ok(AnnotationReceipt {
            recorded: record,
            remaining,
        })
    }
}
