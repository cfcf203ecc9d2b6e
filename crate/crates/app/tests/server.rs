mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::response::IntoResponse;
use axum::routing::post;
use axum::{Json, Router};
use http_body_util::BodyExt;
use ncm_app::responder::{AnswerBody, QuestionBody};
use ncm_app::server::{router, ApiError, AppState, ServeOptions};
use ncm_core::decode::{greedy_decode, DecodeConfig};
use ncm_core::eval::Presentation;
use ncm_core::text::{ACTOR_A, ACTOR_B, TURN};
use serde_json::{json, Value};
use tower::ServiceExt;

fn state_with(options: ServeOptions) -> Arc<AppState> {
    Arc::new(AppState::new(common::engine(), options).unwrap())
}

fn state() -> Arc<AppState> {
    state_with(ServeOptions::default())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let body = body.map_or_else(Body::empty, |b| Body::from(b.to_string()));
    call_raw(app, method, uri, body).await
}

async fn call_raw(app: &Router, method: &str, uri: &str, body: Body) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body)
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn new_session(app: &Router) -> String {
    let (status, body) = call(app, "POST", "/api/session", None).await;
    assert_eq!(status, StatusCode::OK);
    body["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn health_reports_vocab() {
    let app = router(state());
    let (status, body) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["vocab_size"], 18);
}

#[tokio::test]
async fn second_turn_sees_first_exchange() {
    let st = state();
    let app = router(st.clone());
    let id = new_session(&app).await;
    let (s1, r1) = call(
        &app,
        "POST",
        "/api/chat",
        Some(json!({"session_id": id, "message": "hello , how are you ?"})),
    )
    .await;
    assert_eq!(s1, StatusCode::OK);
    let (s2, r2) = call(
        &app,
        "POST",
        "/api/chat",
        Some(json!({"session_id": id, "message": "my laptop"})),
    )
    .await;
    assert_eq!(s2, StatusCode::OK);

    let (_, view) = call(&app, "GET", &format!("/api/session/{id}"), None).await;
    assert_eq!(view["turn_count"], 4);
    let transcript = view["transcript"].as_array().unwrap();
    let speakers: Vec<&str> = transcript
        .iter()
        .map(|t| t["speaker"].as_str().unwrap())
        .collect();
    assert_eq!(speakers, ["user", "model", "user", "model"]);
    assert_eq!(transcript[1]["text"], r1["reply"]);
    assert_eq!(transcript[3]["text"], r2["reply"]);

    // Rebuild the context the second reply must have been decoded from.
    let engine = st.engine();
    let greedy = DecodeConfig {
        max_len: st.options().max_len,
        ..DecodeConfig::default()
    };
    let first = engine
        .decode(
            &[
                vec![ACTOR_A],
                engine.encode("hello , how are you ?"),
                vec![TURN],
            ]
            .concat(),
            &greedy,
        )
        .unwrap();
    let context = [
        vec![ACTOR_A],
        engine.encode("hello , how are you ?"),
        vec![TURN, ACTOR_B],
        first[0].tokens.clone(),
        vec![TURN, ACTOR_A],
        engine.encode("my laptop"),
        vec![TURN],
    ]
    .concat();
    let expected = engine.decode(&context, &greedy).unwrap();
    assert_eq!(r2["reply"], expected[0].text.as_str());
    assert_eq!(r2["logprob"].as_f64().unwrap(), expected[0].logprob);
    assert_eq!(
        view["context_tokens"],
        context.len() + expected[0].tokens.len() + 2
    );
}

#[tokio::test]
async fn width_one_matches_greedy() {
    let st = state();
    let app = router(st.clone());
    let id = new_session(&app).await;
    let (status, body) = call(
        &app,
        "POST",
        "/api/chat",
        Some(json!({"session_id": id, "message": "hi", "beam_width": 1})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let engine = st.engine();
    let ck = &engine.checkpoint;
    let context = [vec![ACTOR_A], engine.encode("hi"), vec![TURN]].concat();
    let g = greedy_decode(
        &context,
        &ck.params,
        &ck.config,
        &DecodeConfig {
            max_len: st.options().max_len,
            ..DecodeConfig::default()
        },
    )
    .unwrap();
    assert_eq!(body["reply"], engine.render(&g.tokens).as_str());
    assert!((body["logprob"].as_f64().unwrap() - g.logprob).abs() < 1e-12);
    assert_eq!(body["candidates"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn beam_candidates_are_ranked_and_capped() {
    let app = router(state());
    let id = new_session(&app).await;
    let (status, body) = call(
        &app,
        "POST",
        "/api/chat",
        Some(json!({"session_id": id, "message": "hi", "beam_width": 3})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let cands = body["candidates"].as_array().unwrap();
    assert!(!cands.is_empty() && cands.len() <= 3);
    let lps: Vec<f64> = cands
        .iter()
        .map(|c| c["logprob"].as_f64().unwrap())
        .collect();
    assert!(lps.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(body["reply"], cands[0]["text"]);
    assert_eq!(body["logprob"], cands[0]["logprob"]);
}

#[tokio::test]
async fn identical_histories_give_identical_responses() {
    let app = router(state());
    let a = new_session(&app).await;
    let b = new_session(&app).await;
    assert_ne!(a, b);
    for msg in ["hello", "how are you ?", "bye ."] {
        let (_, ra) = call(
            &app,
            "POST",
            "/api/chat",
            Some(json!({"session_id": a, "message": msg, "beam_width": 2})),
        )
        .await;
        let (_, rb) = call(
            &app,
            "POST",
            "/api/chat",
            Some(json!({"session_id": b, "message": msg, "beam_width": 2})),
        )
        .await;
        assert_eq!(ra, rb);
    }
}

#[tokio::test]
async fn context_stays_within_cap() {
    let app = router(state_with(ServeOptions {
        context_cap: 12,
        ..ServeOptions::default()
    }));
    let id = new_session(&app).await;
    for _ in 0..6 {
        let (status, _) = call(
            &app,
            "POST",
            "/api/chat",
            Some(json!({"session_id": id, "message": "how are you ?"})),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
    }
    let (_, view) = call(&app, "GET", &format!("/api/session/{id}"), None).await;
    assert!(view["context_tokens"].as_u64().unwrap() <= 12);
    assert_eq!(view["turn_count"], 12);
}

#[tokio::test]
async fn unknown_session_is_404() {
    let app = router(state());
    let (status, body) = call(&app, "GET", "/api/session/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("nope"));
    let (status, _) = call(
        &app,
        "POST",
        "/api/chat",
        Some(json!({"session_id": "nope", "message": "hi"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_bodies_name_the_field() {
    let app = router(state());
    let id = new_session(&app).await;
    let cases = [
        (json!({"session_id": id}), "message"),
        (
            json!({"session_id": id, "message": "hi", "beam_width": "wide"}),
            "beam_width",
        ),
        (json!({"session_id": id, "message": 3}), "message"),
        (json!({"session_id": id, "message": "   "}), "message"),
        (
            json!({"session_id": id, "message": "hi", "beam_width": 0}),
            "beam_width",
        ),
        (
            json!({"session_id": id, "message": "hi", "beam_width": 1000}),
            "beam_width",
        ),
    ];
    for (body, field) in cases {
        let (status, err) = call(&app, "POST", "/api/chat", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(err["field"], field, "{body}: {err}");
    }
    let (status, err) = call_raw(&app, "POST", "/api/chat", Body::from("{not json")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(err["error"].is_string());
    let (status, err) = call(&app, "POST", "/api/compare", Some(json!({"questions": []}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "questions");
    let (status, err) = call(
        &app,
        "POST",
        "/api/votes",
        Some(json!([{"item_id": "q", "judge_id": "j", "choice": "C"}])),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "[0].choice");
}

#[tokio::test]
async fn internal_errors_are_opaque() {
    let resp = ApiError::Internal("err-000001".into()).into_response();
    assert_eq!(resp.status(), StatusCode::INTERNAL_SERVER_ERROR);
    let body: Value =
        serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert_eq!(body, json!({"error": "internal error", "id": "err-000001"}));
}

#[tokio::test]
async fn three_of_four_votes_score_the_item() {
    let app = router(state());
    let votes: Vec<Value> = ["A", "A", "A", "B"]
        .iter()
        .enumerate()
        .map(|(j, c)| json!({"item_id": "q0000", "judge_id": format!("j{j}"), "choice": c}))
        .collect();
    let (status, body) = call(
        &app,
        "POST",
        "/api/votes",
        Some(Value::Array(votes[..3].to_vec())),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["pending"], 1);
    assert_eq!(body["scored"], 0);
    let (status, body) = call(
        &app,
        "POST",
        "/api/votes",
        Some(Value::Array(votes[3..].to_vec())),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        body["tally"],
        json!({"preferred_a": 1, "preferred_b": 0, "ties": 0, "disagreements": 0})
    );
    assert_eq!(body["pending"], 0);

    // Duplicate judge and a fifth vote are both rejected without changing the tally.
    let (status, _) = call(&app, "POST", "/api/votes", Some(json!([votes[0]]))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(
        &app,
        "POST",
        "/api/votes",
        Some(json!([{"item_id": "q0000", "judge_id": "j9", "choice": "tie"}])),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, now) = call(&app, "GET", "/api/votes", None).await;
    assert_eq!(now["tally"]["preferred_a"], 1);
    assert_eq!(now["scored"], 1);
}

#[tokio::test]
async fn rejected_batch_is_not_partially_applied() {
    let app = router(state());
    let batch = json!([
        {"item_id": "q1", "judge_id": "j0", "choice": "A"},
        {"item_id": "q1", "judge_id": "j0", "choice": "B"},
    ]);
    let (status, _) = call(&app, "POST", "/api/votes", Some(batch)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, now) = call(&app, "GET", "/api/votes", None).await;
    assert_eq!(now["pending"], 0);
    let (status, _) = call(
        &app,
        "POST",
        "/api/votes",
        Some(json!([{"item_id": "q1", "judge_id": "j0"}])),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn local_compare_and_blind_presentation() {
    let st = state();
    let app = router(st.clone());
    let (status, body) = call(
        &app,
        "POST",
        "/api/compare",
        Some(json!({"questions": ["hello", "how are you ?"]})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let items = body["items"].as_array().unwrap();
    // An empty reply from the untrained model counts as unavailable.
    let unavailable = body["unavailable"].as_array().unwrap();
    assert_eq!(items.len() + unavailable.len(), 2);
    assert!(!items.is_empty(), "{body}");
    let text = body.to_string();
    assert!(!text.contains("local-greedy") && !text.contains("local-beam"));

    let item = &items[0];
    let item_id = item["item_id"].as_str().unwrap();
    let seed = st.options().judge_seed;
    for j in 0..8 {
        let judge = format!("judge-{j}");
        let (status, shown) = call(
            &app,
            "GET",
            &format!("/api/compare/{item_id}?judge_id={judge}"),
            None,
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        let p = Presentation::for_judge(item_id, &judge, seed);
        let (left, right) = if p.swapped {
            ("answer_b", "answer_a")
        } else {
            ("answer_a", "answer_b")
        };
        assert_eq!(shown["left"], item[left]);
        assert_eq!(shown["right"], item[right]);
        assert!(shown.get("swapped").is_none());
    }

    // Side votes are mapped back through each judge's presentation.
    let votes: Vec<Value> = (0..4)
        .map(|j| {
            let judge = format!("judge-{j}");
            let side =
                Presentation::for_judge(item_id, &judge, seed).present(ncm_core::eval::Choice::B);
            json!({"item_id": item_id, "judge_id": judge, "side": side})
        })
        .collect();
    let (status, tally) = call(&app, "POST", "/api/votes", Some(Value::Array(votes))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(tally["tally"]["preferred_b"], 1);

    let (status, _) = call(&app, "GET", "/api/compare/q9999?judge_id=x", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, err) = call(&app, "GET", &format!("/api/compare/{item_id}"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "judge_id");
}

async fn fake_bot(delay_on: &'static str) -> String {
    async fn answer(
        Json(q): Json<QuestionBody>,
        delay_on: &'static str,
    ) -> Result<Json<AnswerBody>, StatusCode> {
        if q.question.contains(delay_on) {
            tokio::time::sleep(Duration::from_secs(3)).await;
        }
        if q.question.contains("fail") {
            return Err(StatusCode::SERVICE_UNAVAILABLE);
        }
        Ok(Json(AnswerBody {
            answer: format!("you said: {}", q.question),
        }))
    }
    let app = Router::new().route("/answer", post(move |body| answer(body, delay_on)));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/answer")
}

#[tokio::test(flavor = "multi_thread")]
async fn external_timeout_marks_item_unavailable() {
    let url = fake_bot("slow").await;
    let app = router(state_with(ServeOptions {
        external_timeout: Duration::from_millis(300),
        ..ServeOptions::default()
    }));
    let (status, body) = call(
        &app,
        "POST",
        "/api/compare",
        Some(json!({"questions": ["hello", "slow question", "bye"], "external_url": url})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let items = body["items"].as_array().unwrap();
    assert_eq!(items.len(), 2);
    assert_eq!(items[0]["answer_b"], "you said: hello");
    assert_eq!(items[1]["answer_b"], "you said: bye");
    let unavailable = body["unavailable"].as_array().unwrap();
    assert_eq!(unavailable.len(), 1);
    assert_eq!(unavailable[0]["question_index"], 1);

    let (_, body) = call(
        &app,
        "POST",
        "/api/compare",
        Some(json!({"questions": ["fail now", "ok"], "external_url": url})),
    )
    .await;
    assert_eq!(body["items"].as_array().unwrap().len(), 1);
    assert_eq!(
        body["unavailable"],
        json!([{"question_index": 0, "question": "fail now"}])
    );
}

#[tokio::test]
async fn transcript_log_has_one_record_per_turn() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("turns.jsonl");
    let app = router(state_with(ServeOptions {
        transcript_path: Some(path.clone()),
        ..ServeOptions::default()
    }));
    let id = new_session(&app).await;
    for msg in ["hello", "bye"] {
        call(
            &app,
            "POST",
            "/api/chat",
            Some(json!({"session_id": id, "message": msg})),
        )
        .await;
    }
    let text = std::fs::read_to_string(&path).unwrap();
    let records: Vec<Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 4);
    let turns: Vec<u64> = records
        .iter()
        .map(|r| r["turn"].as_u64().unwrap())
        .collect();
    assert_eq!(turns, [1, 2, 3, 4]);
    assert_eq!(records[2]["text"], "bye");
    assert_eq!(records[2]["speaker"], "user");
    assert!(records[3]["logprob"].is_number());
    assert!(records.iter().all(|r| r["session_id"] == id.as_str()));
}
