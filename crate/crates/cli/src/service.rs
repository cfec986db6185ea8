//! HTTP/JSON service over one loaded checkpoint.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fadernets::codec::{decode_tokens, Segment, Token, TokenSeq};
use fadernets::corpus::{CorpusLine, CorpusRecord};
use fadernets::diff::Tensor;
use fadernets::eval::Controllable;
use fadernets::model::checkpoint::{self, latent_names, LatentRange, Manifest, PriorSummary};
use fadernets::model::{infer_cluster_tensor, TrainMeta};
use fadernets::transfer::{transfer, MAX_STRENGTH};
use fadernets::{Densities, FaderNet, Feature, KeyVector, TransferResult};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

/// A checkpoint held by the service.
#[derive(Debug)]
pub struct Loaded {
    pub model: FaderNet<f32>,
    pub manifest: Manifest,
}

impl Loaded {
    pub fn new(model: FaderNet<f32>) -> fadernets::Result<Self> {
        let manifest = checkpoint::manifest(&model)?;
        Ok(Self { model, manifest })
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> fadernets::Result<Self> {
        let (model, manifest) = checkpoint::load(path)?;
        Ok(Self { model, manifest })
    }

    fn id(&self) -> String {
        self.manifest.id.clone()
    }
}

/// Shared handle to the current checkpoint. Swapping replaces the whole
/// model; requests already running keep the one they started with.
#[derive(Debug, Clone, Default)]
pub struct AppState {
    current: Arc<RwLock<Option<Arc<Loaded>>>>,
}

impl AppState {
    pub fn new(loaded: Option<Loaded>) -> Self {
        Self {
            current: Arc::new(RwLock::new(loaded.map(Arc::new))),
        }
    }

    pub fn swap(&self, loaded: Loaded) {
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(loaded));
    }

    pub fn current(&self) -> Option<Arc<Loaded>> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("no checkpoint is loaded")]
    NoCheckpoint,
    #[error(transparent)]
    Domain(#[from] fadernets::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, name) = match &self {
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "BadRequest"),
            ApiError::NoCheckpoint => (StatusCode::CONFLICT, "NoCheckpoint"),
            ApiError::Domain(e) => (StatusCode::UNPROCESSABLE_ENTITY, e.name()),
        };
        let body = ErrorBody {
            error: name.to_string(),
            detail: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(e.to_string()))
}

fn bad(detail: impl Into<String>) -> ApiError {
    ApiError::BadRequest(detail.into())
}

/// A segment given either as `[pitch, onset_step, duration_steps]` triples
/// or as token ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<Vec<[i64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<usize>>,
}

impl SegmentInput {
    pub fn from_notes(segment: &Segment) -> Self {
        Self {
            notes: Some(note_triples(segment)),
            tokens: None,
        }
    }

    fn segment(&self) -> Result<Segment, ApiError> {
        match (&self.notes, &self.tokens) {
            (Some(notes), None) => CorpusLine {
                notes: notes.clone(),
                arousal: None,
                reference_class: None,
            }
            .segment()
            .map_err(bad),
            (None, Some(ids)) => {
                if let Some(&id) = ids.iter().find(|&&id| Token::from_id(id).is_none()) {
                    return Err(bad(format!("token id {id} is not a note or time-shift token")));
                }
                Ok(decode_tokens(&TokenSeq::from_ids(ids)))
            }
            _ => Err(bad("give exactly one of `notes` or `tokens`")),
        }
    }

    fn record(&self) -> Result<CorpusRecord, ApiError> {
        if let Some(ids) = &self.tokens {
            if ids.len() > fadernets::codec::MAX_TOKENS {
                return Err(fadernets::Error::TokenOverflow(ids.len()).into());
            }
        }
        Ok(CorpusRecord::from_segment(self.segment()?, None)?)
    }
}

fn note_triples(segment: &Segment) -> Vec<[i64; 3]> {
    segment
        .notes()
        .iter()
        .map(|n| [n.pitch as i64, n.onset_step as i64, n.duration_steps as i64])
        .collect()
}

fn key_override(key_index: Option<usize>, fallback: KeyVector) -> Result<KeyVector, ApiError> {
    match key_index {
        Some(i) => KeyVector::new(i).map_err(|e| bad(e.to_string())),
        None => Ok(fallback),
    }
}

fn check_fader(name: &str, value: Option<f64>) -> Result<(), ApiError> {
    match value {
        Some(v) if !(0.0..=1.0).contains(&v) => Err(bad(format!("{name} {v} outside [0, 1]"))),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeRequest {
    #[serde(flatten)]
    pub segment: SegmentInput,
    #[serde(default)]
    pub key_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentReport {
    pub latent: String,
    pub mean: Vec<f64>,
    pub z_d: f64,
    /// Fader position of `z_d`, absent for latents without a fader.
    pub fader: Option<f64>,
    /// `q(c | z)`, absent without a mixture prior.
    pub posterior: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub checkpoint_id: String,
    pub key_index: usize,
    pub tokens: Vec<usize>,
    pub latents: Vec<LatentReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRequest {
    /// One vector per latent, in `/model/info` order.
    pub latents: Vec<Vec<f64>>,
    pub key_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResponse {
    pub checkpoint_id: String,
    pub tokens: Vec<usize>,
    pub notes: Vec<[i64; 3]>,
    pub densities: Densities,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaderRequest {
    #[serde(flatten)]
    pub segment: SegmentInput,
    #[serde(default)]
    pub rhythm_fader: Option<f64>,
    #[serde(default)]
    pub note_fader: Option<f64>,
    #[serde(default)]
    pub key_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadeResponse {
    #[serde(flatten)]
    pub output: DecodeResponse,
    pub key_index: usize,
    /// Latents after the fader overrides.
    pub latents: Vec<Vec<f64>>,
}

fn default_strength() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRequest {
    #[serde(flatten)]
    pub segment: SegmentInput,
    pub target_class: usize,
    #[serde(default = "default_strength")]
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResponse {
    pub checkpoint_id: String,
    #[serde(flatten)]
    pub result: TransferResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub checkpoint_id: String,
    pub mode: String,
    pub latents: Vec<String>,
    pub z_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub clusters: usize,
    pub reg_dim: usize,
    pub latent_reg: bool,
    pub fader_ranges: Vec<LatentRange>,
    pub prior: Vec<PriorSummary>,
    pub train: Option<TrainMeta>,
}

impl ModelInfo {
    pub fn of(manifest: &Manifest) -> Self {
        let c = &manifest.config;
        Self {
            checkpoint_id: manifest.id.clone(),
            mode: c.mode.to_string(),
            latents: latent_names(c.mode.latent_count()).iter().map(|s| s.to_string()).collect(),
            z_dim: c.z_dim,
            hidden_dim: c.hidden_dim,
            embed_dim: c.embed_dim,
            clusters: c.clusters,
            reg_dim: c.reg_dim,
            latent_reg: c.latent_reg,
            fader_ranges: manifest.fader_ranges.clone(),
            prior: manifest.prior.clone(),
            train: manifest.train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRequest {
    pub path: PathBuf,
}

fn row_tensors(latents: &[Vec<f64>]) -> Vec<Tensor<f64>> {
    latents
        .iter()
        .map(|v| Tensor::matrix(1, v.len(), v.clone()).expect("one row"))
        .collect()
}

fn decode_one(loaded: &Loaded, latents: &[Vec<f64>], key: KeyVector) -> Result<DecodeResponse, ApiError> {
    let segment = loaded.model.decode_latents(&row_tensors(latents), &[key], &[])?.remove(0);
    let tokens = fadernets::encode_tokens(&segment)?;
    Ok(DecodeResponse {
        checkpoint_id: loaded.id(),
        tokens: tokens.ids(),
        notes: note_triples(&segment),
        densities: Densities::of(&segment),
    })
}

fn encode_one(loaded: &Loaded, record: &CorpusRecord) -> Result<Vec<Vec<f64>>, ApiError> {
    let z = loaded.model.encode_latents(&[record])?;
    Ok(z.iter().map(|t| t.row(0).to_vec()).collect())
}

fn feature_of_slot(model: &FaderNet<f32>, slot: usize) -> Option<Feature> {
    if model.latent_count() == 1 {
        return None;
    }
    Feature::ALL.into_iter().find(|&f| model.slot_of(f) == slot)
}

fn handle_encode(loaded: &Loaded, req: EncodeRequest) -> Result<EncodeResponse, ApiError> {
    let record = req.segment.record()?;
    let key = key_override(req.key_index, record.key)?;
    let model = &loaded.model;
    let d = model.config().reg_dim;
    let names = latent_names(model.latent_count());
    let mut latents = Vec::with_capacity(names.len());
    for (slot, mean) in encode_one(loaded, &record)?.into_iter().enumerate() {
        let z_d = mean[d];
        let fader = match feature_of_slot(model, slot) {
            Some(f) => Some(model.fader_range(f)?.to_fader(z_d)),
            None => None,
        };
        let posterior = if model.mode().has_mixture_prior() {
            let z: Tensor<f32> = Tensor::matrix(1, mean.len(), mean.clone())?.cast();
            let q = infer_cluster_tensor(&z, model.prior_means_tensor(slot)?, model.config().prior_variance)?;
            Some(q.row(0).iter().map(|&v| v as f64).collect())
        } else {
            None
        };
        latents.push(LatentReport {
            latent: names[slot].to_string(),
            mean,
            z_d,
            fader,
            posterior,
        });
    }
    Ok(EncodeResponse {
        checkpoint_id: loaded.id(),
        key_index: key.index(),
        tokens: record.tokens.ids(),
        latents,
    })
}

fn handle_decode(loaded: &Loaded, req: DecodeRequest) -> Result<DecodeResponse, ApiError> {
    let model = &loaded.model;
    let z = model.config().z_dim;
    if req.latents.len() != model.latent_count() {
        return Err(bad(format!(
            "expected {} latents, got {}",
            model.latent_count(),
            req.latents.len()
        )));
    }
    if let Some(v) = req.latents.iter().find(|v| v.len() != z || v.iter().any(|x| !x.is_finite())) {
        return Err(bad(format!("each latent needs {z} finite values, got {}", v.len())));
    }
    let key = KeyVector::new(req.key_index).map_err(|e| bad(e.to_string()))?;
    decode_one(loaded, &req.latents, key)
}

fn handle_fade(loaded: &Loaded, req: FaderRequest) -> Result<FadeResponse, ApiError> {
    check_fader("rhythm_fader", req.rhythm_fader)?;
    check_fader("note_fader", req.note_fader)?;
    let record = req.segment.record()?;
    let key = key_override(req.key_index, record.key)?;
    let model = &loaded.model;
    let mut latents = encode_one(loaded, &record)?;
    for (feature, value) in [(Feature::Rhythm, req.rhythm_fader), (Feature::Note, req.note_fader)] {
        if let Some(f) = value {
            let (slot, dim) = model.fader(feature)?;
            latents[slot][dim] = model.fader_range(feature)?.to_latent(f);
        }
    }
    Ok(FadeResponse {
        output: decode_one(loaded, &latents, key)?,
        key_index: key.index(),
        latents,
    })
}

fn handle_transfer(loaded: &Loaded, req: TransferRequest) -> Result<TransferResponse, ApiError> {
    let k = loaded.model.config().clusters;
    if req.target_class >= k {
        return Err(bad(format!("target_class {} outside 0..{k}", req.target_class)));
    }
    if !(0.0..=MAX_STRENGTH).contains(&req.strength) {
        return Err(bad(format!("strength {} outside [0, {MAX_STRENGTH}]", req.strength)));
    }
    let record = req.segment.record()?;
    Ok(TransferResponse {
        checkpoint_id: loaded.id(),
        result: transfer(&loaded.model, &record.segment, req.target_class, req.strength)?,
    })
}

/// Parses the body and runs `f` on a blocking thread against the current
/// checkpoint.
async fn run<Req, Resp>(state: &AppState, body: Bytes, f: fn(&Loaded, Req) -> Result<Resp, ApiError>) -> ApiResult<Resp>
where
    Req: DeserializeOwned + Send + 'static,
    Resp: Send + 'static,
{
    let loaded = state.current().ok_or(ApiError::NoCheckpoint)?;
    let req: Req = parse(&body)?;
    let out = tokio::task::spawn_blocking(move || f(&loaded, req))
        .await
        .map_err(|e| ApiError::BadRequest(format!("request failed: {e}")))??;
    Ok(Json(out))
}

async fn encode(State(s): State<AppState>, body: Bytes) -> ApiResult<EncodeResponse> {
    run(&s, body, handle_encode).await
}

async fn decode(State(s): State<AppState>, body: Bytes) -> ApiResult<DecodeResponse> {
    run(&s, body, handle_decode).await
}

async fn fade(State(s): State<AppState>, body: Bytes) -> ApiResult<FadeResponse> {
    run(&s, body, handle_fade).await
}

async fn transfer_route(State(s): State<AppState>, body: Bytes) -> ApiResult<TransferResponse> {
    run(&s, body, handle_transfer).await
}

async fn info(State(s): State<AppState>) -> ApiResult<ModelInfo> {
    let loaded = s.current().ok_or(ApiError::NoCheckpoint)?;
    Ok(Json(ModelInfo::of(&loaded.manifest)))
}

async fn load(State(s): State<AppState>, body: Bytes) -> ApiResult<ModelInfo> {
    let req: LoadRequest = parse(&body)?;
    let loaded = tokio::task::spawn_blocking(move || Loaded::from_file(&req.path))
        .await
        .map_err(|e| ApiError::BadRequest(format!("load failed: {e}")))??;
    let info = ModelInfo::of(&loaded.manifest);
    s.swap(loaded);
    Ok(Json(info))
}

pub fn router(state: AppState) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/encode", post(encode))
        .route("/decode", post(decode))
        .route("/fade", post(fade))
        .route("/transfer", post(transfer_route))
        .route("/model/info", get(info))
        .route("/model/load", post(load))
        .layer(cors)
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
