//! Flat CSV views of the analysis report.

use std::path::Path;

use anyhow::Result;
use lexsel_core::analysis::{RuleEffectReport, WordEffect};
use serde::Serialize;

#[derive(Serialize)]
struct EffectCsv<'a> {
    n: String,
    response: &'a str,
    intercept: f64,
    beta: f64,
    se: f64,
    p_value: f64,
    stars: &'a str,
    loglik: f64,
}

#[derive(Serialize)]
struct CurveCsv<'a> {
    n: String,
    condition: &'a str,
    sessions: usize,
    mean_accuracy: f64,
    mean_confidence_on_correct: Option<f64>,
}

fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Writes `effects.csv`, `curves.csv` and, when given, `per_word.csv`.
pub fn write_csv(dir: &Path, report: &RuleEffectReport, per_word: Option<&[WordEffect]>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("effects.csv"))?;
    for r in &report.rows {
        let response = label(&r.response);
        w.serialize(EffectCsv {
            n: r.n.to_string(),
            response: &response,
            intercept: r.intercept,
            beta: r.beta,
            se: r.se,
            p_value: r.p_value,
            stars: &r.stars,
            loglik: r.fit.loglik,
        })?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("curves.csv"))?;
    for c in &report.curves {
        let condition = label(&c.condition);
        w.serialize(CurveCsv {
            n: c.n.to_string(),
            condition: &condition,
            sessions: c.sessions,
            mean_accuracy: c.mean_accuracy,
            mean_confidence_on_correct: c.mean_confidence_on_correct,
        })?;
    }
    w.flush()?;
    if let Some(rows) = per_word {
        let mut w = csv::Writer::from_path(dir.join("per_word.csv"))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(())
}
