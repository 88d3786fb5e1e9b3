use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use intentgate_core::corpus::{Dataset, DatasetKind, Intent, IntentRegistry, UtteranceExample};
use intentgate_core::pipeline::{Mode, Pipeline, PipelineConfig};
use intentgate_core::rerank::{RerankerClient, ScriptedClient};
use intentgate_core::shortlist::{fit, ShortlistConfig};
use intentgate_service::config::ServiceConfig;
use intentgate_service::server::{router, AppState};

const FALLBACK: &str = "Tomu nerozumiem.";

fn registry() -> IntentRegistry {
    IntentRegistry::new(vec![
        Intent {
            id: "card_block".into(),
            description: "Zablokovanie platobnej karty".into(),
            response: "Kartu zablokujete v aplikácii v časti Karty.".into(),
            examples: vec![],
        },
        Intent {
            id: "pin_change".into(),
            description: "Zmena PIN kódu".into(),
            response: "PIN zmeníte v bankomate.".into(),
            examples: vec![],
        },
    ])
    .unwrap()
}

fn pipeline(mode: Mode, client: Option<Arc<dyn RerankerClient>>) -> Pipeline {
    let registry = registry();
    let train = Dataset::new(
        "train",
        DatasetKind::Generated,
        vec![
            UtteranceExample::in_scope("chcem zablokovať kartu", "card_block"),
            UtteranceExample::in_scope("zablokujte mi platobnú kartu", "card_block"),
            UtteranceExample::in_scope("stratila sa mi karta, zablokovať", "card_block"),
            UtteranceExample::in_scope("ako si zmením pin", "pin_change"),
            UtteranceExample::in_scope("chcem zmeniť pin kód", "pin_change"),
            UtteranceExample::in_scope("zmena pinu ku karte", "pin_change"),
        ],
    );
    let model = fit(&train, &registry, ShortlistConfig::default()).unwrap();
    let config = PipelineConfig {
        mode,
        ..PipelineConfig::default()
    };
    Pipeline::new(config, Arc::new(model), Arc::new(registry), client).unwrap()
}

fn service_config() -> ServiceConfig {
    ServiceConfig {
        fallback_response: FALLBACK.into(),
        ..ServiceConfig::default()
    }
}

fn app_with(config: ServiceConfig, pipeline: Pipeline) -> Router {
    router(Arc::new(AppState::with_pipeline(&config, pipeline)))
}

fn app() -> Router {
    app_with(service_config(), pipeline(Mode::Vector, None))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(
            body.map(|b| Body::from(b.to_owned()))
                .unwrap_or_else(Body::empty),
        )
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = to_bytes(response.into_body(), 1 << 20).await.unwrap();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, "POST", uri, Some(&body.to_string())).await
}

#[tokio::test]
async fn classify_returns_outcome_and_trace() {
    let (status, body) = post(
        &app(),
        "/classify",
        json!({"text": "chcem zablokovat kartu"}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        body["outcome"],
        json!({"kind": "in_scope", "intent_id": "card_block"})
    );
    assert!(body["confidence"].as_f64().unwrap() > 0.4);
    let trace = &body["trace"];
    assert_eq!(trace["mode"], "vector");
    assert_eq!(trace["normalized_text"], "chcem zablokovat kartu");
    assert_eq!(trace["shortlist"][0]["intent_id"], "card_block");
    assert_eq!(trace["gate"], "score_above_threshold");
}

#[tokio::test]
async fn empty_text_is_out_of_scope() {
    let (status, body) = post(&app(), "/classify", json!({"text": ""})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["outcome"]["kind"], "out_of_scope");
    assert_eq!(body["trace"]["gate"], "empty_input");
}

#[tokio::test]
async fn threshold_override() {
    let app = app();
    for text in ["chcem zablokovat kartu", "ako si zmením pin", "počasie"] {
        let (status, body) = post(
            &app,
            "/classify",
            json!({"text": text, "threshold_override": 1.0}),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["outcome"]["kind"], "out_of_scope", "{text}");
    }
    let (_, body) = post(
        &app,
        "/classify",
        json!({"text": "pin", "threshold_override": 0.0}),
    )
    .await;
    assert_eq!(body["outcome"]["kind"], "in_scope");
    let (status, _) = post(
        &app,
        "/classify",
        json!({"text": "x", "threshold_override": 1.5}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let locked = app_with(
        ServiceConfig {
            allow_threshold_override: false,
            ..service_config()
        },
        pipeline(Mode::Vector, None),
    );
    let (status, body) = post(
        &locked,
        "/classify",
        json!({"text": "x", "threshold_override": 0.2}),
    )
    .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert!(body["error"]
        .as_str()
        .unwrap()
        .contains("threshold_override"));
}

#[tokio::test]
async fn malformed_bodies_are_rejected() {
    let app = app();
    for body in [
        "",
        "{",
        "[]",
        r#"{"txt": "a"}"#,
        r#"{"text": 5}"#,
        r#"{"text": "a", "extra": 1}"#,
    ] {
        let (status, value) = call(&app, "POST", "/classify", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert!(value["error"].is_string());
        let (status, _) = call(&app, "POST", "/chat", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    }
}

#[tokio::test]
async fn not_loaded_is_unavailable() {
    let app = router(Arc::new(AppState::new(&service_config())));
    let (status, _) = post(&app, "/classify", json!({"text": "a"})).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let (status, _) = post(&app, "/chat", json!({"text": "a"})).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let (status, _) = call(&app, "GET", "/intents", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let (status, body) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["status"], "loading");
}

#[tokio::test]
async fn chat_returns_stored_response_and_decision() {
    let app = app();
    let (status, body) = post(&app, "/chat", json!({"text": "Chcem zablokovať kartu!"})).await;
    assert_eq!(status, StatusCode::OK);
    let expected = registry().get("card_block").unwrap().response.clone();
    assert_eq!(body["response"].as_str().unwrap(), expected);
    let id = body["decision_id"].as_u64().unwrap();

    let (_, classified) = post(
        &app,
        "/classify",
        json!({"text": "Chcem zablokovať kartu!"}),
    )
    .await;
    let (status, stored) = call(&app, "GET", &format!("/decisions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(stored, classified);

    let (_, body) = post(&app, "/chat", json!({"text": "aké bude zajtra počasie"})).await;
    assert_eq!(body["response"], FALLBACK);
    assert_eq!(body["decision_id"].as_u64().unwrap(), id + 1);

    let (status, _) = call(&app, "GET", "/decisions/999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/decisions/abc", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn hidden_trace() {
    let app = app_with(
        ServiceConfig {
            expose_trace: false,
            ..service_config()
        },
        pipeline(Mode::Vector, None),
    );
    let (_, body) = post(&app, "/classify", json!({"text": "zmeniť pin"})).await;
    assert!(body.get("trace").is_none());
    assert_eq!(body["outcome"]["intent_id"], "pin_change");
    let (_, chat) = post(&app, "/chat", json!({"text": "zmeniť pin"})).await;
    let (status, _) = call(
        &app,
        "GET",
        &format!("/decisions/{}", chat["decision_id"]),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn intents_listing() {
    let app = app();
    let (status, body) = call(&app, "GET", "/intents", None).await;
    assert_eq!(status, StatusCode::OK);
    let list = body["intents"].as_array().unwrap();
    assert_eq!(list.len(), 2);
    assert_eq!(
        list[0],
        json!({"id": "card_block", "description": "Zablokovanie platobnej karty"})
    );

    let (_, body) = call(&app, "GET", "/intents?include_responses=true", None).await;
    assert_eq!(body["intents"][1]["response"], "PIN zmeníte v bankomate.");
    let (status, _) = call(&app, "GET", "/intents?limit=1", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "GET", "/intents?include_responses=maybe", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn rerank_trace_has_prompt_and_verdict() {
    let client: Arc<dyn RerankerClient> = Arc::new(ScriptedClient::new().with_default("2"));
    let app = app_with(service_config(), pipeline(Mode::Rerank, Some(client)));
    let (status, body) = post(&app, "/classify", json!({"text": "chcem zablokovat kartu"})).await;
    assert_eq!(status, StatusCode::OK);
    // option 2 is the second shortlist entry
    assert_eq!(body["outcome"]["intent_id"], "pin_change");
    assert_eq!(body["trace"]["verdict"]["raw"], "2");
    assert!(body["trace"]["prompt"]["rendered"]["messages"].is_array());
    assert_eq!(body["trace"]["gate"], "verdict_intent");

    let invalid: Arc<dyn RerankerClient> = Arc::new(ScriptedClient::new().with_default("neviem"));
    let app = app_with(service_config(), pipeline(Mode::Rerank, Some(invalid)));
    let (_, body) = post(&app, "/chat", json!({"text": "chcem zablokovat kartu"})).await;
    assert_eq!(body["response"], FALLBACK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_chats_get_distinct_ids() {
    let app = app();
    let tasks: Vec<_> = (0..64)
        .map(|i| {
            let app = app.clone();
            tokio::spawn(async move {
                let text = if i % 2 == 0 {
                    "zablokovať kartu"
                } else {
                    "zmeniť pin"
                };
                post(&app, "/chat", json!({ "text": text })).await.1["decision_id"]
                    .as_u64()
                    .unwrap()
            })
        })
        .collect();
    let mut ids = Vec::new();
    for t in tasks {
        ids.push(t.await.unwrap());
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids, (1..=64).collect::<Vec<u64>>());
}

#[tokio::test]
async fn responses_are_deterministic() {
    let a = app();
    let b = app();
    for text in ["chcem zablokovat kartu", "pin", "", "hokej"] {
        assert_eq!(
            post(&a, "/classify", json!({ "text": text })).await,
            post(&b, "/classify", json!({ "text": text })).await
        );
    }
}
