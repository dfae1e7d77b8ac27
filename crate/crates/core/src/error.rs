use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("sentence {id}: alignment index out of range ({src}, {tgt})")]
    AlignmentOutOfRange { id: String, src: usize, tgt: usize },

    #[error("sentence {id}: {reason}")]
    InvalidSentence { id: String, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid probability {0}")]
    InvalidProbability(f64),

    #[error("choice {choice:?} has {have} examples, need at least {need}")]
    TooFewExamples { choice: String, have: usize, need: usize },

    #[error("training data must contain at least two choices")]
    SingleChoice,

    #[error("unknown choice {0:?}")]
    UnknownChoice(String),

    #[error("unknown word {0:?}")]
    UnknownWord(String),

    #[error("unknown learner {0:?}")]
    UnknownLearner(String),

    #[error("session for {learner:?} on {word:?} is closed")]
    SessionClosed { learner: String, word: String },

    #[error("answer does not match the pending question: {0}")]
    StaleAnswer(String),

    #[error("confidence {0} outside 1..=5")]
    InvalidConfidence(u8),

    #[error("rules are not shown to {learner:?} for {word:?}")]
    RulesHidden { learner: String, word: String },

    #[error("event log replay diverged at event {index}: {reason}")]
    Replay { index: usize, reason: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("study already exists")]
    StudyExists,

    #[error("no study has been created")]
    NoStudy,

    #[error("fleiss kappa: {0}")]
    Agreement(String),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("fixed effect not estimable: {0}")]
    NotEstimable(String),

    #[error("optimizer did not converge after {iterations} iterations (best loglik {loglik})")]
    NonConvergence {
        iterations: usize,
        loglik: f64,
        variances: Vec<f64>,
    },
}
