use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Dataset, FeatureIndex};
use crate::models::Predictor;

/// Always predicts the most frequent training choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBaseline {
    pub choices: Vec<String>,
    pub majority: usize,
}

pub fn frequency_baseline(train: &Dataset) -> Result<FrequencyBaseline> {
    if train.examples.is_empty() {
        return Err(Error::TooFewExamples {
            choice: "<any>".into(),
            have: 0,
            need: 1,
        });
    }
    let counts = train.class_counts();
    // first maximum wins, i.e. declaration order on ties
    let majority = counts
        .iter()
        .enumerate()
        .fold(0, |best, (k, &c)| if c > counts[best] { k } else { best });
    Ok(FrequencyBaseline {
        choices: train.choices(),
        majority,
    })
}

impl Predictor for FrequencyBaseline {
    fn choices(&self) -> &[String] {
        &self.choices
    }

    fn feature_index(&self) -> Option<&FeatureIndex> {
        None
    }

    fn predict_columns(&self, _columns: &[u32]) -> usize {
        self.majority
    }
}
