use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use fadernets::codec::{NoteEvent, Segment};
use fadernets::corpus::{synth_corpus, SynthParams};
use fadernets::model::checkpoint;
use fadernets::model::fader_ranges;
use fadernets::transfer::reconstruct;
use fadernets::{FaderNet, ModelConfig, ModelMode};
use faders_cli::service::{
    router, AppState, DecodeResponse, EncodeResponse, ErrorBody, FadeResponse, Loaded, ModelInfo, TransferResponse,
};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn model(mode: ModelMode, seed: u64) -> FaderNet<f32> {
    let mut m = FaderNet::new(ModelConfig::desk().with_mode(mode), seed).unwrap();
    let records = synth_corpus(SynthParams::new(100, 3)).unwrap();
    m.fader_ranges = fader_ranges(&m, &records).unwrap();
    m
}

fn state(mode: ModelMode) -> AppState {
    AppState::new(Some(Loaded::new(model(mode, 11)).unwrap()))
}

fn segment() -> Segment {
    Segment::from_notes([NoteEvent::new(60, 0, 4), NoteEvent::new(64, 4, 4), NoteEvent::new(67, 8, 8)]).unwrap()
}

fn notes_json() -> Value {
    json!([[60, 0, 4], [64, 4, 4], [67, 8, 8]])
}

async fn call(state: &AppState, method: Method, path: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(path)
        .header(header::CONTENT_TYPE, "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

async fn post(state: &AppState, path: &str, body: Value) -> (StatusCode, Value) {
    call(state, Method::POST, path, Some(body.to_string())).await
}

fn error_name(v: &Value) -> String {
    serde_json::from_value::<ErrorBody>(v.clone()).unwrap().error
}

#[tokio::test]
async fn no_checkpoint_is_409_everywhere() {
    let s = AppState::default();
    let (status, body) = call(&s, Method::GET, "/model/info", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(error_name(&body), "NoCheckpoint");
    for path in ["/encode", "/decode", "/fade", "/transfer"] {
        let (status, _) = post(&s, path, json!({"notes": notes_json()})).await;
        assert_eq!(status, StatusCode::CONFLICT, "{path}");
    }
}

#[tokio::test]
async fn model_info_echoes_manifest() {
    let m = model(ModelMode::GmVae, 5);
    let manifest = checkpoint::manifest(&m).unwrap();
    let s = AppState::new(Some(Loaded::new(m).unwrap()));
    let (status, body) = call(&s, Method::GET, "/model/info", None).await;
    assert_eq!(status, StatusCode::OK);
    let info: ModelInfo = serde_json::from_value(body).unwrap();
    assert_eq!(info, ModelInfo::of(&manifest));
    assert_eq!(info.checkpoint_id, manifest.id);
    assert_eq!(info.latents, vec!["rhythm", "note"]);
    assert_eq!(info.fader_ranges.len(), 2);
    assert_eq!(info.prior.len(), 2);
}

#[tokio::test]
async fn malformed_bodies_are_400() {
    let s = state(ModelMode::GmVae);
    let cases = [
        (String::from("{not json"), "/encode"),
        (json!({"notes": notes_json(), "tokens": [2]}).to_string(), "/encode"),
        (json!({}).to_string(), "/encode"),
        (json!({"notes": [[200, 0, 4]]}).to_string(), "/encode"),
        (json!({"tokens": [0, 1]}).to_string(), "/encode"),
        (json!({"notes": notes_json(), "key_index": 24}).to_string(), "/encode"),
        (json!({"notes": notes_json(), "rhythm_fader": 1.5}).to_string(), "/fade"),
        (json!({"notes": notes_json(), "note_fader": -0.1}).to_string(), "/fade"),
        (json!({"latents": [[0.0]], "key_index": 0}).to_string(), "/decode"),
        (json!({"notes": notes_json(), "target_class": 2}).to_string(), "/transfer"),
        (
            json!({"notes": notes_json(), "target_class": 0, "strength": 2.0}).to_string(),
            "/transfer",
        ),
    ];
    for (body, path) in cases {
        let (status, v) = call(&s, Method::POST, path, Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{path} {body}");
        assert_eq!(error_name(&v), "BadRequest");
    }
}

#[tokio::test]
async fn domain_errors_are_422() {
    let s = state(ModelMode::GmVae);
    let too_long: Vec<usize> = (0..101).map(|i| 2 + (i % 100)).collect();
    let (status, v) = post(&s, "/encode", json!({"tokens": too_long})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_name(&v), "TokenOverflow");

    // 16 onsets of 4-note chords serialize to far more than 100 tokens.
    let dense: Vec<[i64; 3]> = (0..16).flat_map(|t| (0..4).map(move |p| [60 + p, t, 1])).collect();
    let (status, v) = post(&s, "/fade", json!({"notes": dense})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_name(&v), "TokenOverflow");

    let single = state(ModelMode::AblationSingleLatent);
    let (status, v) = post(&single, "/fade", json!({"notes": notes_json(), "rhythm_fader": 0.5})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_name(&v), "UnsupportedInMode");

    let vanilla = state(ModelMode::VanillaVae);
    let (status, v) = post(&vanilla, "/transfer", json!({"notes": notes_json(), "target_class": 1})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_name(&v), "UnsupportedInMode");
}

#[tokio::test]
async fn fade_at_one_sets_stored_max() {
    let m = model(ModelMode::GmVae, 11);
    let ranges = m.fader_ranges.clone();
    let d = m.config().reg_dim;
    let s = AppState::new(Some(Loaded::new(m).unwrap()));
    let (status, v) = post(
        &s,
        "/fade",
        json!({"notes": notes_json(), "rhythm_fader": 1.0, "note_fader": 0.0}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let fade: FadeResponse = serde_json::from_value(v).unwrap();
    assert_eq!(fade.latents[0][d], ranges[0].max);
    assert_eq!(fade.latents[1][d], ranges[1].min);
}

#[tokio::test]
async fn unspecified_faders_leave_latents_untouched() {
    let s = state(ModelMode::GmVae);
    let (_, enc) = post(&s, "/encode", json!({"notes": notes_json()})).await;
    let enc: EncodeResponse = serde_json::from_value(enc).unwrap();
    let (_, fade) = post(&s, "/fade", json!({"notes": notes_json(), "note_fader": 0.25})).await;
    let fade: FadeResponse = serde_json::from_value(fade).unwrap();
    assert_eq!(fade.latents[0], enc.latents[0].mean);
    assert_ne!(fade.latents[1], enc.latents[1].mean);
}

#[tokio::test]
async fn encode_then_decode_is_greedy_reconstruction() {
    let m = model(ModelMode::GmVae, 11);
    let want = reconstruct(&m, &segment()).unwrap();
    let s = AppState::new(Some(Loaded::new(m).unwrap()));
    let (status, enc) = post(&s, "/encode", json!({"notes": notes_json()})).await;
    assert_eq!(status, StatusCode::OK);
    let enc: EncodeResponse = serde_json::from_value(enc).unwrap();
    assert_eq!(enc.latents.len(), 2);
    for l in &enc.latents {
        assert_eq!(l.posterior.as_ref().unwrap().len(), 2);
        let f = l.fader.unwrap();
        assert!((0.0..=1.0).contains(&f));
    }
    let latents: Vec<Vec<f64>> = enc.latents.iter().map(|l| l.mean.clone()).collect();
    let (status, dec) = post(&s, "/decode", json!({"latents": latents, "key_index": enc.key_index})).await;
    assert_eq!(status, StatusCode::OK);
    let dec: DecodeResponse = serde_json::from_value(dec).unwrap();
    let canonical = fadernets::encode_tokens(&fadernets::decode_tokens(&want)).unwrap();
    assert_eq!(dec.tokens, canonical.ids());
    assert_eq!(dec.checkpoint_id, enc.checkpoint_id);
}

#[tokio::test]
async fn tokens_and_notes_inputs_agree() {
    let s = state(ModelMode::GmVae);
    let tokens = fadernets::encode_tokens(&segment()).unwrap().ids();
    let (_, a) = post(&s, "/encode", json!({"notes": notes_json()})).await;
    let (_, b) = post(&s, "/encode", json!({"tokens": tokens})).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn responses_are_deterministic() {
    let s = state(ModelMode::GmVae);
    for (path, body) in [
        ("/encode", json!({"notes": notes_json()})),
        ("/fade", json!({"notes": notes_json(), "rhythm_fader": 0.7})),
        (
            "/transfer",
            json!({"notes": notes_json(), "target_class": 1, "strength": 0.5}),
        ),
    ] {
        let first = post(&s, path, body.clone()).await;
        let second = post(&s, path, body).await;
        assert_eq!(first.0, StatusCode::OK, "{path}");
        assert_eq!(first, second, "{path}");
    }
}

#[tokio::test]
async fn transfer_wraps_the_transfer_op() {
    let m = model(ModelMode::GmVae, 11);
    let want = fadernets::transfer(&m, &segment(), 0, 1.0).unwrap();
    let s = AppState::new(Some(Loaded::new(m).unwrap()));
    let (status, v) = post(&s, "/transfer", json!({"notes": notes_json(), "target_class": 0})).await;
    assert_eq!(status, StatusCode::OK);
    let got: TransferResponse = serde_json::from_value(v.clone()).unwrap();
    assert_eq!(got.result, want);
    assert!(v.get("density_delta").is_some());
    assert!(v.get("tokens_in").is_some() && v.get("tokens_out").is_some());
}

#[tokio::test]
async fn load_swaps_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = model(ModelMode::GmVae, 99);
    checkpoint::save(&m, &path).unwrap();
    let s = AppState::default();
    let (status, v) = post(&s, "/model/load", json!({"path": path})).await;
    assert_eq!(status, StatusCode::OK);
    let info: ModelInfo = serde_json::from_value(v).unwrap();
    assert_eq!(info.checkpoint_id, checkpoint::checkpoint_id(&m).unwrap());
    let (status, _) = call(&s, Method::GET, "/model/info", None).await;
    assert_eq!(status, StatusCode::OK);

    let (status, v) = post(&s, "/model/load", json!({"path": dir.path().join("missing.ckpt")})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_name(&v), "Io");
}

#[tokio::test]
async fn cors_preflight_is_allowed() {
    let s = state(ModelMode::GmVae);
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/fade")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .header(header::ACCESS_CONTROL_REQUEST_HEADERS, "content-type")
        .body(Body::empty())
        .unwrap();
    let resp = router(s).oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
}
