//! Learner-facing rules from the positive coefficients of a linear model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureKey;
use crate::models::LinearOvRModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "Short phrases")]
    ShortPhrases,
    Words,
    Concepts,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::ShortPhrases, Category::Words, Category::Concepts];

    pub fn of(feature: &FeatureKey) -> Category {
        match feature {
            FeatureKey::Bigram(..) => Category::ShortPhrases,
            FeatureKey::Lemma(_) => Category::Words,
            FeatureKey::Sense(_) => Category::Concepts,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::ShortPhrases => "Short phrases",
            Category::Words => "Words",
            Category::Concepts => "Concepts",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub choice: String,
    pub category: Category,
    pub feature: FeatureKey,
    pub weight: f64,
    /// 1-based, by descending weight.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRules {
    pub choice: String,
    pub rules: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub word: String,
    pub choices: Vec<ChoiceRules>,
}

impl RuleSet {
    pub fn rules_for(&self, choice: &str) -> Result<&[Rule]> {
        self.choices
            .iter()
            .find(|c| c.choice == choice)
            .map(|c| c.rules.as_slice())
            .ok_or_else(|| Error::UnknownChoice(choice.to_string()))
    }

    /// Rules of one choice grouped by category, each group in rank order.
    pub fn grouped(&self, choice: &str) -> Result<BTreeMap<Category, Vec<&Rule>>> {
        let mut groups: BTreeMap<Category, Vec<&Rule>> = BTreeMap::new();
        for r in self.rules_for(choice)? {
            groups.entry(r.category).or_default().push(r);
        }
        Ok(groups)
    }
}

/// Top `n` positively weighted features of every choice. Equal weights
/// are ordered by feature payload.
pub fn extract_rules(model: &LinearOvRModel, n: usize) -> RuleSet {
    let keys = model.feature_index.keys();
    let choices = model
        .choices
        .iter()
        .zip(&model.weights)
        .map(|(choice, w)| {
            let mut positive: Vec<(f64, &FeatureKey)> = w
                .iter()
                .zip(keys)
                .filter(|(v, _)| **v > 0.0)
                .map(|(v, k)| (*v, k))
                .collect();
            positive.sort_by(|a, b| {
                b.0.total_cmp(&a.0)
                    .then_with(|| a.1.payload_text().cmp(&b.1.payload_text()))
                    .then_with(|| a.1.cmp(b.1))
            });
            let rules = positive
                .into_iter()
                .take(n)
                .enumerate()
                .map(|(i, (weight, feature))| Rule {
                    choice: choice.clone(),
                    category: Category::of(feature),
                    feature: feature.clone(),
                    weight,
                    rank: i + 1,
                })
                .collect();
            ChoiceRules {
                choice: choice.clone(),
                rules,
            }
        })
        .collect();
    RuleSet {
        word: model.word.clone(),
        choices,
    }
}

/// Sense id to natural-language gloss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GlossMap(pub BTreeMap<String, String>);

impl GlossMap {
    /// Reads `sense_id<TAB>gloss` lines; blank lines and `#` comments are
    /// skipped.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (id, gloss) = trimmed.split_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                reason: "expected sense_id<TAB>gloss".into(),
            })?;
            map.insert(id.trim().to_string(), gloss.trim().to_string());
        }
        Ok(GlossMap(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn gloss(&self, sense: &str) -> Option<&str> {
        self.0.get(sense).map(String::as_str)
    }
}

/// `city.n.01` → `city`. Ids without the `.pos.nn` tail are returned whole.
pub fn sense_lemma(sense: &str) -> &str {
    let mut parts = sense.rsplitn(3, '.');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(_), Some(_), Some(lemma)) if !lemma.is_empty() => lemma,
        _ => sense,
    }
}

fn render_item(feature: &FeatureKey, glosses: &GlossMap) -> String {
    match feature {
        FeatureKey::Bigram(a, b) => format!("('{a}', '{b}')"),
        FeatureKey::Lemma(l) => l.clone(),
        FeatureKey::Sense(id) => match glosses.gloss(id) {
            Some(g) => format!("‘{}’ as in {g} ({id})", sense_lemma(id)),
            None => id.clone(),
        },
    }
}

fn separator(category: Category) -> &'static str {
    match category {
        Category::Concepts => "; ",
        _ => ", ",
    }
}

fn render_block(rules: &[Rule], glosses: &GlossMap) -> String {
    let mut out = String::new();
    for cat in Category::ALL {
        let items: Vec<String> = rules
            .iter()
            .filter(|r| r.category == cat)
            .map(|r| render_item(&r.feature, glosses))
            .collect();
        if !items.is_empty() {
            let _ = writeln!(out, "{}: {}", cat.label(), items.join(separator(cat)));
        }
    }
    out
}

/// One line per non-empty category, rules in rank order, showing at most
/// `top` rules of the choice. Empty when the choice has no rules.
pub fn render_choice(rules: &RuleSet, choice: &str, glosses: &GlossMap, top: usize) -> Result<String> {
    let all = rules.rules_for(choice)?;
    Ok(render_block(&all[..top.min(all.len())], glosses))
}

/// Rendered text block for every choice, in choice order.
pub fn render_rules(rules: &RuleSet, glosses: &GlossMap) -> Vec<(String, String)> {
    rules
        .choices
        .iter()
        .map(|c| (c.choice.clone(), render_block(&c.rules, glosses)))
        .collect()
}

fn parse_item(category: Category, item: &str) -> Option<FeatureKey> {
    match category {
        Category::ShortPhrases => {
            let inner = item.strip_prefix("('")?.strip_suffix("')")?;
            let (a, b) = inner.split_once("', '")?;
            Some(FeatureKey::bigram(a, b))
        }
        Category::Words => Some(FeatureKey::lemma(item)),
        Category::Concepts => {
            if item.starts_with('‘') && item.ends_with(')') {
                let open = item.rfind(" (")?;
                Some(FeatureKey::sense(&item[open + 2..item.len() - 1]))
            } else {
                Some(FeatureKey::sense(item))
            }
        }
    }
}

/// `… (id)` with a space-free id closes a glossed concept.
fn ends_with_sense_id(s: &str) -> bool {
    let Some(body) = s.strip_suffix(')') else {
        return false;
    };
    match body.rfind('(') {
        Some(open) => {
            let id = &body[open + 1..];
            !id.is_empty() && !id.contains(char::is_whitespace) && body[..open].ends_with(' ')
        }
        None => false,
    }
}

// Glosses may themselves contain "; ", so a glossed item only ends where
// its trailing "(sense id)" does.
fn split_concepts(body: &str) -> Vec<&str> {
    let mut items = Vec::new();
    let mut rest = body;
    loop {
        let end = if rest.starts_with('‘') {
            let mut from = 0;
            let mut end = None;
            while let Some(off) = rest[from..].find("; ") {
                let pos = from + off;
                if ends_with_sense_id(&rest[..pos]) {
                    end = Some(pos);
                    break;
                }
                from = pos + 2;
            }
            end
        } else {
            rest.find("; ")
        };
        match end {
            Some(p) => {
                items.push(&rest[..p]);
                rest = &rest[p + 2..];
            }
            None => {
                items.push(rest);
                return items;
            }
        }
    }
}

/// Recovers `(category, feature)` pairs from rendered text. Inverse of
/// [`render_choice`] as long as lemmas contain no `, ` and sense ids no
/// whitespace.
pub fn parse_rendered(text: &str) -> Result<Vec<(Category, FeatureKey)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Parse {
            line: i + 1,
            reason: format!("not a rule line: {line:?}"),
        };
        let (label, body) = line.split_once(": ").ok_or_else(bad)?;
        let cat = Category::ALL.into_iter().find(|c| c.label() == label).ok_or_else(bad)?;
        let items: Vec<String> = match cat {
            Category::ShortPhrases => {
                let parts: Vec<&str> = body.split("), (").collect();
                let last = parts.len() - 1;
                parts
                    .iter()
                    .enumerate()
                    .map(|(j, p)| {
                        let open = if j > 0 { "(" } else { "" };
                        let close = if j < last { ")" } else { "" };
                        format!("{open}{p}{close}")
                    })
                    .collect()
            }
            Category::Words => body.split(", ").map(str::to_string).collect(),
            Category::Concepts => split_concepts(body).into_iter().map(str::to_string).collect(),
        };
        for item in items {
            out.push((cat, parse_item(cat, &item).ok_or_else(bad)?));
        }
    }
    Ok(out)
}

/// Rules of `choice` whose feature occurs in `features`, by rank.
pub fn match_rules(rules: &RuleSet, choice: &str, features: &BTreeSet<FeatureKey>) -> Result<Vec<Rule>> {
    Ok(rules
        .rules_for(choice)?
        .iter()
        .filter(|r| features.contains(&r.feature))
        .cloned()
        .collect())
}
