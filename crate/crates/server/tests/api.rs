use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use lexsel_core::features::FeatureKey;
use lexsel_core::rules::{Category, ChoiceRules, Rule, RuleSet};
use lexsel_core::study::{read_events, Condition, Study, StudyConfig};
use lexsel_core::synth::study_config;
use lexsel_server::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn config() -> StudyConfig {
    let mut cfg = study_config(2, 2, 12, 7);
    for (w, word) in cfg.words.iter_mut().enumerate() {
        word.examples[0].features.insert(FeatureKey::lemma("stone"));
        word.rules = Some(RuleSet {
            word: word.word.clone(),
            choices: word
                .choices
                .iter()
                .map(|c| ChoiceRules {
                    choice: c.clone(),
                    rules: vec![Rule {
                        choice: c.clone(),
                        category: Category::Words,
                        feature: FeatureKey::lemma(if c.starts_with("alpha") { "stone" } else { "room" }),
                        weight: 1.0 + w as f64,
                        rank: 1,
                    }],
                })
                .collect(),
        });
    }
    cfg
}

fn enc(word: &str) -> String {
    word.replace('|', "%7C")
}

async fn call(app: &AppState, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(app.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value =
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

async fn created() -> (AppState, StudyConfig) {
    let app = AppState::new();
    let cfg = config();
    let (s, _) = call(
        &app,
        Method::POST,
        "/studies",
        Some(serde_json::to_value(&cfg).unwrap()),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED);
    (app, cfg)
}

fn label<'a>(cfg: &'a StudyConfig, word: &str, id: &str) -> &'a str {
    &cfg.word(word)
        .unwrap()
        .examples
        .iter()
        .find(|e| e.id == id)
        .unwrap()
        .label
}

fn wrong<'a>(cfg: &'a StudyConfig, word: &str, id: &str) -> &'a str {
    let right = label(cfg, word, id);
    cfg.word(word).unwrap().choices.iter().find(|c| *c != right).unwrap()
}

/// Plays one session; returns the number of questions answered.
async fn play(app: &AppState, cfg: &StudyConfig, learner: &str, word: &str, correct: bool) -> usize {
    let mut answered = 0;
    loop {
        let (s, q) = call(
            app,
            Method::GET,
            &format!("/sessions/{learner}/{}/next", enc(word)),
            None,
        )
        .await;
        assert_eq!(s, StatusCode::OK);
        if q["status"] == "done" {
            return answered;
        }
        let id = q["example_id"].as_str().unwrap();
        let choice = if correct {
            label(cfg, word, id)
        } else {
            wrong(cfg, word, id)
        };
        let body = json!({"example_id": id, "choice": choice, "confidence": 4});
        let (s, fb) = call(
            app,
            Method::POST,
            &format!("/sessions/{learner}/{}/answer", enc(word)),
            Some(body),
        )
        .await;
        assert_eq!(s, StatusCode::OK, "{fb}");
        answered += 1;
    }
}

#[tokio::test]
async fn no_study_and_duplicate_creation() {
    let app = AppState::new();
    let (s, _) = call(&app, Method::GET, "/sessions/l0", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (app, cfg) = created().await;
    let (s, body) = call(
        &app,
        Method::POST,
        "/studies",
        Some(serde_json::to_value(&cfg).unwrap()),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("already"));
}

#[tokio::test]
async fn invalid_config_is_unprocessable() {
    let app = AppState::new();
    let mut cfg = config();
    cfg.learners.truncate(1);
    let (s, _) = call(
        &app,
        Method::POST,
        "/studies",
        Some(serde_json::to_value(&cfg).unwrap()),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn perfect_and_failing_learners() {
    let (app, cfg) = created().await;
    let (s, words) = call(&app, Method::GET, "/sessions/l0", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(words.as_array().unwrap().len(), 2);
    let w0 = cfg.words[0].word.clone();
    assert_eq!(play(&app, &cfg, "l0", &w0, true).await, 20);
    // 12 examples per choice, under the cap of 40
    assert_eq!(play(&app, &cfg, "l1", &w0, false).await, 24);
    let (_, words) = call(&app, Method::GET, "/sessions/l0", None).await;
    let row = words
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["word"] == w0.as_str())
        .unwrap();
    assert_eq!(row["done"], true);
    assert_eq!(row["answered"], 20);
}

#[tokio::test]
async fn answer_guards() {
    let (app, cfg) = created().await;
    let w = enc(&cfg.words[1].word);
    let (_, q) = call(&app, Method::GET, &format!("/sessions/l0/{w}/next"), None).await;
    let id = q["example_id"].as_str().unwrap().to_string();
    let choice = label(&cfg, &cfg.words[1].word, &id).to_string();
    let bad = json!({"example_id": id, "choice": choice, "confidence": 9});
    let (s, _) = call(&app, Method::POST, &format!("/sessions/l0/{w}/answer"), Some(bad)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let good = json!({"example_id": id, "choice": choice, "confidence": 3});
    let (s, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/l0/{w}/answer"),
        Some(good.clone()),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call(&app, Method::POST, &format!("/sessions/l0/{w}/answer"), Some(good)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(&app, Method::GET, &format!("/sessions/nobody/{w}/next"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, Method::GET, "/sessions/l0/nothing%7CNOUN/next", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn rules_only_for_rules_condition() {
    let (app, cfg) = created().await;
    let word = cfg.words[0].word.clone();
    let (_, rows) = call(&app, Method::GET, "/sessions/l0", None).await;
    let cond: Condition = serde_json::from_value(
        rows.as_array()
            .unwrap()
            .iter()
            .find(|r| r["word"] == word.as_str())
            .unwrap()["condition"]
            .clone(),
    )
    .unwrap();
    let (with, without) = if cond == Condition::Rules {
        ("l0", "l1")
    } else {
        ("l1", "l0")
    };
    let (s, view) = call(
        &app,
        Method::GET,
        &format!("/rules/{}?learner={with}", enc(&word)),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(view["choices"].as_array().unwrap().len(), 2);
    let (s, _) = call(
        &app,
        Method::GET,
        &format!("/rules/{}?learner={without}", enc(&word)),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = call(&app, Method::GET, &format!("/rules/{}", enc(&word)), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    for (learner, expect_rules) in [(with, true), (without, false)] {
        let (_, q) = call(
            &app,
            Method::GET,
            &format!("/sessions/{learner}/{}/next", enc(&word)),
            None,
        )
        .await;
        let id = q["example_id"].as_str().unwrap();
        let body = json!({"example_id": id, "choice": label(&cfg, &word, id), "confidence": 5});
        let (_, fb) = call(
            &app,
            Method::POST,
            &format!("/sessions/{learner}/{}/answer", enc(&word)),
            Some(body),
        )
        .await;
        assert_eq!(fb["correct_choice"], label(&cfg, &word, id));
        assert_eq!(fb.get("rules_text").is_some(), expect_rules, "{fb}");
        assert_eq!(fb.get("matched").is_some(), expect_rules);
    }
}

#[tokio::test]
async fn annotation_flow_and_export() {
    let (app, cfg) = created().await;
    let total: usize = cfg.words.iter().map(|w| w.examples.len()).sum();
    let (s, q) = call(&app, Method::GET, "/annotate/nat1/next", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(q["status"], "question");
    assert_eq!(q["remaining"], total);
    assert!(q.get("rules").is_none());
    let id = q["example_id"].as_str().unwrap();
    let word = q["word"].as_str().unwrap();
    let body = json!({"example_id": id, "choice": label(&cfg, word, id), "confidence": 5});
    let (s, r) = call(&app, Method::POST, "/annotate/nat1/answer", Some(body)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["remaining"], total - 1);
    assert!(r.get("correct").is_none());

    let (s, text) = call(&app, Method::GET, "/export/events", None).await;
    assert_eq!(s, StatusCode::OK);
    let events = read_events(text.as_str().unwrap().as_bytes()).unwrap();
    assert_eq!(events, app.events());
    assert_eq!(Study::replay(&events).unwrap().annotations().len(), 1);
}

#[tokio::test]
async fn log_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let cfg = config();
    let app = AppState::open(Some(cfg.clone()), Some(&path)).unwrap();
    play(&app, &cfg, "l1", &cfg.words[1].word, true).await;
    let (_, q) = call(
        &app,
        Method::GET,
        &format!("/sessions/l0/{}/next", enc(&cfg.words[0].word)),
        None,
    )
    .await;
    let before = app.events();
    drop(app);

    let resumed = AppState::open(None, Some(&path)).unwrap();
    assert_eq!(resumed.events(), before);
    // the pending question is served again, not a new one
    let (_, again) = call(
        &resumed,
        Method::GET,
        &format!("/sessions/l0/{}/next", enc(&cfg.words[0].word)),
        None,
    )
    .await;
    assert_eq!(again, q);
    assert_eq!(resumed.events().len(), before.len());

    let mut other = cfg.clone();
    other.seed += 1;
    assert!(AppState::open(Some(other), Some(&path)).is_err());
}
