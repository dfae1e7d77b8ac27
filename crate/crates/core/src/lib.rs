//! Mining fine-grained cross-lingual lexical distinctions from annotated
//! bitext, training interpretable lexical-selection models, turning them
//! into learner-facing rules and analysing cloze-study outcomes.

pub mod analysis;
pub mod config;
pub mod corpus;
pub mod discovery;
pub mod error;
pub mod features;
pub mod models;
pub mod par;
pub mod rules;
pub mod study;
pub mod synth;

pub use error::{Error, Result};
