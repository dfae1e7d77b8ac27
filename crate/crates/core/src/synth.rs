//! Synthetic corpora and datasets with known ground truth, used by the
//! test suites and benchmarks.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use crate::analysis::{GroupFactor, LmeData};
use crate::corpus::{SentencePair, Token};
use crate::discovery::{ChoiceStats, FocusWord, SourceKey};
use crate::features::{Dataset, FeatureKey};
use crate::study::{assign_conditions, Condition, StudyConfig, StudyExample, StudyWord, TrialRecord};

/// Dataset family in which one context lemma per choice decides the label.
#[derive(Debug, Clone)]
pub struct PlantedCue {
    pub n_choices: usize,
    pub n_examples: usize,
    /// Fraction of labels reassigned to a different, random choice.
    pub noise: f64,
    /// Relative class sizes; defaults to `K, K-1, …, 1`.
    pub priors: Option<Vec<f64>>,
    pub vocabulary: usize,
    pub distractors_per_example: usize,
    pub seed: u64,
}

impl Default for PlantedCue {
    fn default() -> Self {
        PlantedCue {
            n_choices: 2,
            n_examples: 100,
            noise: 0.0,
            priors: None,
            vocabulary: 40,
            distractors_per_example: 4,
            seed: 0,
        }
    }
}

impl PlantedCue {
    pub fn cue(k: usize) -> FeatureKey {
        FeatureKey::lemma(&format!("cue{k}"))
    }

    pub fn choice(k: usize) -> String {
        format!("c{k}")
    }

    fn class_sizes(&self) -> Vec<usize> {
        let priors = self
            .priors
            .clone()
            .unwrap_or_else(|| (0..self.n_choices).map(|k| (self.n_choices - k) as f64).collect());
        let total: f64 = priors.iter().sum();
        let mut sizes: Vec<usize> = priors
            .iter()
            .map(|p| ((p / total) * self.n_examples as f64).floor() as usize)
            .collect();
        let mut k = 0;
        while sizes.iter().sum::<usize>() < self.n_examples {
            sizes[k % self.n_choices] += 1;
            k += 1;
        }
        sizes
    }
}

pub fn focus_word(lemma: &str, upos: &str, choices: &[String]) -> FocusWord {
    FocusWord {
        lemma: lemma.into(),
        upos: upos.into(),
        total_count: 0,
        entropy: 0.0,
        choices: choices
            .iter()
            .map(|c| ChoiceStats {
                tgt_lemma: c.clone(),
                count: 0,
                prob: 0.0,
                majority_sense: crate::corpus::NO_SENSE.into(),
                merged_from: vec![c.clone()],
            })
            .collect(),
    }
}

pub fn planted_cue_dataset(cfg: &PlantedCue) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sizes = cfg.class_sizes();
    let choices: Vec<String> = (0..cfg.n_choices).map(PlantedCue::choice).collect();
    let mut truth: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(k, &n)| std::iter::repeat_n(k, n))
        .collect();
    truth.shuffle(&mut rng);

    let mut labels = truth.clone();
    let n_noisy = (cfg.noise * cfg.n_examples as f64).round() as usize;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng);
    for &i in order.iter().take(n_noisy) {
        let shift = rng.random_range(1..cfg.n_choices.max(2));
        labels[i] = (labels[i] + shift) % cfg.n_choices;
    }

    let rows = truth
        .iter()
        .zip(&labels)
        .enumerate()
        .map(|(i, (&t, &l))| {
            let mut keys = BTreeSet::from([PlantedCue::cue(t), FeatureKey::bigram(&format!("cue{t}"), "focus")]);
            for _ in 0..cfg.distractors_per_example {
                let d = rng.random_range(0..cfg.vocabulary.max(1));
                keys.insert(FeatureKey::lemma(&format!("w{d}")));
            }
            (format!("s{i}"), 1, choices[l].clone(), keys)
        })
        .collect();
    Dataset::from_feature_sets(focus_word("focus", "NOUN", &choices), rows)
}

struct Builder {
    pairs: Vec<SentencePair>,
}

impl Builder {
    /// Adds `n` sentences "<det> <ctx> <focus> <verb>" with the focus
    /// aligned to `choice` and the context words aligned one-to-one.
    #[allow(clippy::too_many_arguments)]
    fn add(
        &mut self,
        rng: &mut ChaCha8Rng,
        n: usize,
        focus: (&str, &str, Option<&str>),
        choice: &str,
        contexts: &[(&str, &str)],
        verbs: &[(&str, &str)],
    ) {
        for _ in 0..n {
            let (ctx, ctx_t) = contexts[rng.random_range(0..contexts.len())];
            let (verb, verb_t) = verbs[rng.random_range(0..verbs.len())];
            let id = format!("p{}", self.pairs.len());
            let mut fw = Token::new(2, focus.0, focus.0, focus.1);
            fw.sense = focus.2.map(str::to_string);
            fw.head = Some(3);
            let src = vec![
                Token::new(0, "the", "the", "DET").with_head(2),
                Token::new(1, ctx, ctx, "ADJ").with_head(2),
                fw,
                Token::new(3, verb, verb, "VERB"),
                Token::new(4, ".", ".", "PUNCT").with_head(3),
            ];
            let tgt = vec![
                Token::new(0, "el", "el", "DET"),
                Token::new(1, choice, choice, "NOUN"),
                Token::new(2, ctx_t, ctx_t, "ADJ"),
                Token::new(3, verb_t, verb_t, "VERB"),
                Token::new(4, ".", ".", "PUNCT"),
            ];
            self.pairs.push(SentencePair {
                id,
                src,
                tgt,
                align: vec![(0, 0), (1, 2), (2, 1), (3, 3), (4, 4)],
            });
        }
    }
}

/// A ~5k-pair corpus with two planted focus words and three distractors
/// that each fail exactly one filter:
///
/// * `wall|NOUN` → pared / muro, one shared sense (planted)
/// * `fan|NOUN` → ventilador / aficionado, one shared sense (planted)
/// * `pen|NOUN` → pluma 300 / bolígrafo 40 (frequency)
/// * `plot|NOUN` → trama 600 / parcela 60 (entropy 0.305)
/// * `bank|NOUN` → banco / orilla with different senses (sense)
pub fn discovery_corpus(seed: u64) -> (Vec<SentencePair>, Vec<SourceKey>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder { pairs: Vec::new() };
    let verbs = [
        ("fall", "caer"),
        ("stand", "estar"),
        ("break", "romper"),
        ("shake", "temblar"),
    ];
    let wall_s = Some("wall.n.01");
    b.add(
        &mut rng,
        580,
        ("wall", "NOUN", wall_s),
        "pared",
        &[("painted", "pintado"), ("bedroom", "dormitorio"), ("white", "blanco")],
        &verbs,
    );
    b.add(
        &mut rng,
        560,
        ("wall", "NOUN", wall_s),
        "muro",
        &[("stone", "piedra"), ("city", "ciudad"), ("brick", "ladrillo")],
        &verbs,
    );
    b.add(
        &mut rng,
        20,
        ("wall", "NOUN", wall_s),
        "tapia",
        &[("garden", "jardín")],
        &verbs,
    );
    let fan_s = Some("fan.n.01");
    b.add(
        &mut rng,
        400,
        ("fan", "NOUN", fan_s),
        "ventilador",
        &[("electric", "eléctrico"), ("ceiling", "techo")],
        &verbs,
    );
    b.add(
        &mut rng,
        400,
        ("fan", "NOUN", fan_s),
        "aficionado",
        &[("loyal", "leal"), ("football", "fútbol")],
        &verbs,
    );
    let pen_s = Some("pen.n.01");
    b.add(
        &mut rng,
        300,
        ("pen", "NOUN", pen_s),
        "pluma",
        &[("fountain", "fuente"), ("gold", "oro")],
        &verbs,
    );
    b.add(
        &mut rng,
        40,
        ("pen", "NOUN", pen_s),
        "bolígrafo",
        &[("blue", "azul")],
        &verbs,
    );
    let plot_s = Some("plot.n.01");
    b.add(
        &mut rng,
        600,
        ("plot", "NOUN", plot_s),
        "trama",
        &[("twisted", "retorcido"), ("clever", "ingenioso")],
        &verbs,
    );
    b.add(
        &mut rng,
        60,
        ("plot", "NOUN", plot_s),
        "parcela",
        &[("empty", "vacío")],
        &verbs,
    );
    b.add(
        &mut rng,
        400,
        ("bank", "NOUN", Some("bank.n.02")),
        "banco",
        &[("national", "nacional"), ("central", "central")],
        &verbs,
    );
    b.add(
        &mut rng,
        400,
        ("bank", "NOUN", Some("bank.n.01")),
        "orilla",
        &[("muddy", "fangoso"), ("river", "río")],
        &verbs,
    );
    b.add(
        &mut rng,
        1180,
        ("dog", "NOUN", None),
        "perro",
        &[("small", "pequeño"), ("old", "viejo"), ("black", "negro")],
        &verbs,
    );
    b.pairs.shuffle(&mut rng);
    for (i, p) in b.pairs.iter_mut().enumerate() {
        p.id = format!("s{i:05}");
    }
    (
        b.pairs,
        vec![SourceKey::new("wall", "NOUN"), SourceKey::new("fan", "NOUN")],
    )
}

/// Corpus for one focus word in which the context adjective decides the
/// translation; `noise` is the fraction of sentences whose focus alignment
/// points to another choice.
pub fn planted_cue_corpus(
    focus: &str,
    choices: &[(&str, &[&str])],
    per_choice: usize,
    noise: f64,
    seed: u64,
) -> Vec<SentencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder { pairs: Vec::new() };
    let verbs = [("fall", "caer"), ("stand", "estar"), ("break", "romper")];
    for (k, (choice, cues)) in choices.iter().enumerate() {
        let ctx: Vec<(&str, &str)> = cues.iter().map(|c| (*c, *c)).collect();
        for _ in 0..per_choice {
            let target = if rng.random::<f64>() < noise {
                choices[(k + rng.random_range(1..choices.len())) % choices.len()].0
            } else {
                choice
            };
            b.add(
                &mut rng,
                1,
                (focus, "NOUN", Some(&format!("{focus}.n.01"))),
                target,
                &ctx,
                &verbs,
            );
        }
    }
    b.pairs.shuffle(&mut rng);
    for (i, p) in b.pairs.iter_mut().enumerate() {
        p.id = format!("s{i:05}");
    }
    b.pairs
}

/// A study over `n_words` two-choice words with `per_choice` examples per
/// choice and learners `l0..`.
pub fn study_config(n_learners: usize, n_words: usize, per_choice: usize, seed: u64) -> StudyConfig {
    let words = (0..n_words)
        .map(|w| {
            let choices = vec![format!("alpha{w}"), format!("beta{w}")];
            let examples = choices
                .iter()
                .flat_map(|c| {
                    (0..per_choice).map(move |i| StudyExample {
                        id: format!("{c}-{i}"),
                        text: format!("the word{w} number {i}"),
                        focus_span: (4, 9),
                        label: c.clone(),
                        features: BTreeSet::new(),
                    })
                })
                .collect();
            StudyWord {
                word: format!("word{w}|NOUN"),
                choices,
                transliterations: Default::default(),
                examples,
                rules: None,
            }
        })
        .collect();
    StudyConfig {
        words,
        learners: (0..n_learners).map(|l| format!("l{l}")).collect(),
        per_choice_cap: 40,
        streak_to_finish: 10,
        seed,
        glosses: Default::default(),
        rules_display: 20,
    }
}

/// Crossed learner × word design for the mixed model.
#[derive(Debug, Clone)]
pub struct LmeSim {
    pub learners: usize,
    pub words: usize,
    pub intercept: f64,
    pub beta: f64,
    pub sd_learner: f64,
    pub sd_word: f64,
    pub sd_residual: f64,
    pub seed: u64,
}

impl Default for LmeSim {
    fn default() -> Self {
        LmeSim {
            learners: 9,
            words: 9,
            intercept: 0.6,
            beta: 0.112,
            sd_learner: 0.1,
            sd_word: 0.1,
            sd_residual: 0.15,
            seed: 0,
        }
    }
}

fn balanced_rules(learners: usize, words: usize, seed: u64) -> Vec<Vec<bool>> {
    let assignment = assign_conditions(&study_config(learners, words, 1, seed)).expect("at least two learners");
    (0..learners)
        .map(|l| {
            (0..words)
                .map(|w| assignment.conditions[&format!("l{l}")][&format!("word{w}|NOUN")] == Condition::Rules)
                .collect()
        })
        .collect()
}

fn crossed_data(sim: &LmeSim, rules: &[Vec<bool>], noise: impl Fn(usize, usize) -> f64) -> LmeData {
    let (mut y, mut rule, mut ls, mut ws) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (l, row) in rules.iter().enumerate() {
        for (w, &r) in row.iter().enumerate() {
            let x = f64::from(u8::from(r));
            y.push(sim.intercept + sim.beta * x + noise(l, w));
            rule.push(x);
            ls.push(l);
            ws.push(w);
        }
    }
    LmeData {
        y,
        rule,
        groupings: vec![
            GroupFactor::from_keys("learner", &ls),
            GroupFactor::from_keys("word", &ws),
        ],
    }
}

/// One (learner, word) aggregate per cell with Gaussian random intercepts,
/// conditions from [`assign_conditions`].
pub fn simulate_lme(sim: &LmeSim) -> LmeData {
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let std = Normal::new(0.0, 1.0).expect("valid normal");
    let rules = balanced_rules(sim.learners, sim.words, sim.seed);
    let ul: Vec<f64> = (0..sim.learners)
        .map(|_| sim.sd_learner * std.sample(&mut rng))
        .collect();
    let uw: Vec<f64> = (0..sim.words).map(|_| sim.sd_word * std.sample(&mut rng)).collect();
    let e: Vec<Vec<f64>> = (0..sim.learners)
        .map(|_| (0..sim.words).map(|_| sim.sd_residual * std.sample(&mut rng)).collect())
        .collect();
    crossed_data(sim, &rules, |l, w| ul[l] + uw[w] + e[l][w])
}

/// Like [`simulate_lme`] without random effects, and with the noise made
/// orthogonal to every learner, word and rule column. The maximum of the
/// likelihood then sits exactly at zero random-effect variance.
pub fn simulate_lme_zero_variance(sim: &LmeSim) -> LmeData {
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let std = Normal::new(0.0, 1.0).expect("valid normal");
    let rules = balanced_rules(sim.learners, sim.words, sim.seed);
    let (nl, nw) = (sim.learners, sim.words);
    let n = nl * nw;
    let a = DMatrix::from_fn(n, nl + nw + 1, |i, j| {
        let (l, w) = (i / nw, i % nw);
        let hit = if j < nl {
            l == j
        } else if j < nl + nw {
            w == j - nl
        } else {
            rules[l][w]
        };
        f64::from(u8::from(hit))
    });
    let raw = DVector::from_fn(n, |_, _| sim.sd_residual * std.sample(&mut rng));
    let coef = a
        .clone()
        .svd(true, true)
        .solve(&raw, 1e-10)
        .expect("svd has both factors");
    let e = raw - &a * coef;
    crossed_data(sim, &rules, |l, w| e[l * nw + w])
}

/// Trial-level study outcomes where seeing rules adds `rule_gain` to the
/// probability of a correct answer.
#[derive(Debug, Clone)]
pub struct TrialSim {
    pub learners: usize,
    pub words: usize,
    pub trials_per_session: usize,
    pub base_accuracy: f64,
    pub rule_gain: f64,
    pub sd_learner: f64,
    pub seed: u64,
}

impl Default for TrialSim {
    fn default() -> Self {
        TrialSim {
            learners: 9,
            words: 9,
            trials_per_session: 40,
            base_accuracy: 0.6,
            rule_gain: 0.1,
            sd_learner: 0.05,
            seed: 0,
        }
    }
}

pub fn simulate_trials(sim: &TrialSim) -> Vec<TrialRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let std = Normal::new(0.0, 1.0).expect("valid normal");
    let cfg = study_config(sim.learners, sim.words, 1, sim.seed);
    let assignment = assign_conditions(&cfg).expect("at least two learners");
    let mut out = Vec::new();
    for (l, learner) in cfg.learners.iter().enumerate() {
        let skill = sim.sd_learner * std.sample(&mut rng);
        for (order, word) in assignment.word_order[learner].iter().enumerate() {
            let condition = assignment.conditions[learner][word];
            let gain = if condition == Condition::Rules {
                sim.rule_gain
            } else {
                0.0
            };
            let p = (sim.base_accuracy + skill + gain).clamp(0.0, 1.0);
            for position in 1..=sim.trials_per_session {
                let correct = rng.random::<f64>() < p;
                let confidence = rng.random_range(2..=4) + u8::from(correct && condition == Condition::Rules);
                out.push(TrialRecord {
                    learner: learner.clone(),
                    word: word.clone(),
                    example_id: format!("{word}-{l}-{position}"),
                    position,
                    shown: vec!["a".into(), "b".into()],
                    selected: if correct { "a".into() } else { "b".into() },
                    correct,
                    confidence,
                    condition,
                    word_order: order + 1,
                    timestamp_ms: 0,
                });
            }
        }
    }
    out
}
