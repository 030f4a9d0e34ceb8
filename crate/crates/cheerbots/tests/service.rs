mod common;

use std::sync::{Arc, OnceLock};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use cheerbots::checkpoint::Bundle;
use cheerbots::server::{router, ErrorBody, SessionCreated};
use cheerbots::service::{replay, ChatEngine, ChatService, ChatTurnPayload, ResponderKind, Session, TracePayload};
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    bundle: Bundle,
}

/// One trained toy bundle shared by every test in this file.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let bundle = common::trained_bundle(dir.path(), 160, 21);
        Fixture { _dir: dir, bundle }
    })
}

fn engine(kind: ResponderKind) -> ChatEngine {
    ChatEngine::load(&fixture().bundle, kind).unwrap()
}

const MESSAGES: [&str; 4] = [
    "a spider in the dark made me scream",
    "the storm alarm is shaking the house",
    "now we are having a party with cheer",
    "quiet tea and a book on the sofa",
];

#[test]
fn first_message_starts_the_trace_at_zero() {
    let e = engine(ResponderKind::Retrieval);
    let mut s = Session::new("a".into(), 0);
    let p = e.turn(&mut s, MESSAGES[0]).unwrap();
    assert_eq!(p.turn_index, 0);
    assert_eq!(p.empathy_valence_so_far, 0.0);
    let q = e.turn(&mut s, MESSAGES[2]).unwrap();
    assert_eq!(q.turn_index, 1);
    assert_eq!(q.empathy_valence_so_far, q.detected_va.valence - p.detected_va.valence);
    let t = s.trace();
    assert_eq!(t.valence_trace, vec![p.detected_va.valence, q.detected_va.valence]);
    assert_eq!(t.turns, vec![p, q]);
}

#[test]
fn payload_va_matches_a_direct_detector_call() {
    let e = engine(ResponderKind::Generative);
    let direct = cheerbots::components::load_full_detector(&fixture().bundle).unwrap();
    let mut s = Session::new("b".into(), 0);
    for m in MESSAGES {
        let p = e.turn(&mut s, m).unwrap();
        let d = direct.detect(m).unwrap();
        assert_eq!(p.detected_va.valence.to_bits(), d.va.valence.to_bits());
        assert_eq!(p.detected_va.arousal.to_bits(), d.va.arousal.to_bits());
        assert_eq!(p.detected_emotion, e.catalog().name(d.dominant));
        assert!(!p.reply_text.is_empty());
    }
}

#[test]
fn empty_messages_are_rejected_without_touching_the_session() {
    let e = engine(ResponderKind::Template);
    let mut s = Session::new("c".into(), 0);
    assert!(matches!(e.turn(&mut s, "   "), Err(cheerbots::error::AppError::EmptyMessage)));
    assert!(s.trace().turns.is_empty());
}

#[test]
fn interleaved_sessions_keep_independent_traces() {
    let svc = ChatService::new(engine(ResponderKind::Retrieval), 0, Duration::from_secs(60));
    let a = svc.create_session();
    let b = svc.create_session();
    assert_ne!(a, b);
    for i in 0..4 {
        svc.message(&a, MESSAGES[i]).unwrap();
        svc.message(&b, MESSAGES[3 - i]).unwrap();
    }
    let alone_a = replay(svc.engine(), 0, &MESSAGES).unwrap();
    let mut rev = MESSAGES;
    rev.reverse();
    let alone_b = replay(svc.engine(), 0, &rev).unwrap();
    assert_eq!(svc.trace(&a).unwrap().turns, alone_a);
    assert_eq!(svc.trace(&b).unwrap().turns, alone_b);
}

#[test]
fn a_long_soak_never_changes_parameters() {
    let svc = ChatService::new(engine(ResponderKind::Retrieval), 0, Duration::from_secs(60));
    let before = svc.engine().parameter_hashes();
    let manifest = fixture().bundle.manifest().clone();
    let id = svc.create_session();
    for i in 0..100 {
        svc.message(&id, &format!("{} {i}", MESSAGES[i % 4])).unwrap();
    }
    assert_eq!(svc.trace(&id).unwrap().valence_trace.len(), 100);
    assert_eq!(svc.engine().parameter_hashes(), before);
    assert_eq!(Bundle::open(fixture().bundle.dir()).unwrap().manifest(), &manifest);
}

#[test]
fn idle_sessions_are_swept() {
    let svc = ChatService::new(engine(ResponderKind::Template), 0, Duration::ZERO);
    let id = svc.create_session();
    std::thread::sleep(Duration::from_millis(5));
    assert_eq!(svc.sweep(), 1);
    assert!(matches!(svc.message(&id, "hi"), Err(cheerbots::error::AppError::UnknownSession(_))));
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

#[tokio::test(flavor = "multi_thread")]
async fn rest_routes_follow_the_wire_protocol() {
    let svc = Arc::new(ChatService::new(engine(ResponderKind::Retrieval), 0, Duration::from_secs(60)));
    let app = router(Arc::clone(&svc));

    let (status, body) = call(&app, "POST", "/api/session", None).await;
    assert_eq!(status, StatusCode::OK);
    let SessionCreated { session_id } = serde_json::from_slice(&body).unwrap();

    let mut payloads = Vec::new();
    for m in MESSAGES {
        let uri = format!("/api/session/{session_id}/message");
        let (status, body) = call(&app, "POST", &uri, Some(&serde_json::json!({ "text": m }).to_string())).await;
        assert_eq!(status, StatusCode::OK);
        let raw: serde_json::Value = serde_json::from_slice(&body).unwrap();
        for key in ["turn_index", "user_text", "reply_text", "detected_emotion", "detected_va", "predicted_next_emotion", "empathy_valence_so_far"] {
            assert!(raw.get(key).is_some(), "missing {key}");
        }
        payloads.push(serde_json::from_value::<ChatTurnPayload>(raw).unwrap());
    }

    let (status, body) = call(&app, "GET", &format!("/api/session/{session_id}/trace"), None).await;
    assert_eq!(status, StatusCode::OK);
    let trace: TracePayload = serde_json::from_slice(&body).unwrap();
    assert_eq!(trace.turns, payloads);
    let last = payloads.last().unwrap();
    assert_eq!(last.empathy_valence_so_far, trace.valence_trace[3] - trace.valence_trace[0]);

    // the wire values decode to the very same bits as an offline replay
    assert_eq!(replay(svc.engine(), svc.seed(), &MESSAGES).unwrap(), payloads);

    let (status, body) = call(&app, "POST", "/api/session/nope/message", Some(r#"{"text":"hi"}"#)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(serde_json::from_slice::<ErrorBody>(&body).unwrap().code, "unknown_session");
    let (status, _) = call(&app, "GET", "/api/session/nope/trace", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let uri = format!("/api/session/{session_id}/message");
    let (status, body) = call(&app, "POST", &uri, Some(r#"{"text":"  "}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(serde_json::from_slice::<ErrorBody>(&body).unwrap().code, "empty_message");
    let (status, body) = call(&app, "POST", &uri, Some("{not json")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(serde_json::from_slice::<ErrorBody>(&body).unwrap().code, "bad_request");
}

#[test]
fn recorded_payload_fixture_keeps_its_contract() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/payloads.json");
    let text = std::fs::read_to_string(path).unwrap();
    let payloads: Vec<ChatTurnPayload> = serde_json::from_str(&text).unwrap();
    let (first, last) = (&payloads[0], &payloads[1]);
    assert_eq!((first.detected_emotion.as_str(), first.detected_va.valence, first.detected_va.arousal), ("afraid", -0.12, 0.79));
    assert_eq!(first.empathy_valence_so_far, 0.0);
    let trace: Vec<f64> = payloads.iter().map(|p| p.detected_va.valence).collect();
    let delta = cheerbots_core::rl::empathy_valence(&trace).unwrap();
    assert!((delta - 0.97).abs() < 1e-12);
    assert_eq!(last.empathy_valence_so_far, delta);
    // the catalog ships the same coordinates the fixture shows
    let (_, catalog) = cheerbots::catalog_io::default_catalog();
    let afraid = catalog.resolve_label("afraid").unwrap().id;
    let joyful = catalog.resolve_label("joyful").unwrap().id;
    assert_eq!(catalog.va_of(afraid).unwrap().valence, first.detected_va.valence);
    assert_eq!(catalog.va_of(joyful).unwrap().valence, last.detected_va.valence);
    // serialization round trip is byte-stable
    let again = serde_json::to_string(&payloads).unwrap();
    assert_eq!(serde_json::from_str::<Vec<ChatTurnPayload>>(&again).unwrap(), payloads);
}
