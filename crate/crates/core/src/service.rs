//! HTTP/JSON scoring and experiment service.
//!
//! Scoring and screening are read-only and run concurrently. Training goes
//! through a single async mutex, so at most one job runs at a time and the
//! registry has one writer.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::Error;
use crate::fairness::{evaluate_scenario, ScreeningReport};
use crate::nn::TrainingConfig;
use crate::registry::{model_id, ModelRegistryEntry, Registry};
use crate::scenario::{
    predict_features, protocol_config, train_scenario, CandidateFeatures, FeatureGroup, FeatureSet, ScenarioId,
    ScenarioSpec, TargetKind, TrainedScorer,
};
use crate::synth::{
    apply_bias, generate_testbed, unbiased_score, BiasConfig, Demographics, EmbeddingTemplates, Ethnicity, Gender,
    MeritBlock, MeritFeatures, ScoringWeights, Testbed, TestbedConfig, DEFAULT_MAX_PENALTY, MERIT_DIM,
};

pub const BIAS_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const DEFAULT_OTHER_MERIT: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Testbed and training seed for on-demand models.
    pub seed: u64,
    pub n: usize,
    pub leakage: f64,
    pub bias_grid: Vec<f64>,
    pub training: TrainingConfig,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            seed: 1,
            n: 24_000,
            leakage: 1.0,
            bias_grid: BIAS_GRID.to_vec(),
            training: protocol_config(1),
        }
    }

    /// Nearest grid point; ties go to the lower one.
    pub fn snap(&self, bias_level: f64) -> f64 {
        let mut best = self.bias_grid[0];
        for &b in &self.bias_grid[1..] {
            if (b - bias_level).abs() < (best - bias_level).abs() {
                best = b;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Human,
    TraditionalAi,
    ResponsibleAi,
}

/// One candidate plus the system settings from the what-if controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRequest {
    pub gender: Gender,
    pub ethnicity: Ethnicity,
    pub skills: [f64; 4],
    /// Education (2), experience (3), languages (2), references (1).
    #[serde(default = "default_other_merits")]
    pub other_merits: [f64; 8],
    pub bias_level: f64,
    #[serde(default)]
    pub inputs: FeatureSet,
    pub method: MethodKind,
}

fn default_other_merits() -> [f64; 8] {
    [DEFAULT_OTHER_MERIT; 8]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl CandidateRequest {
    pub fn field_errors(&self) -> Vec<FieldError> {
        let mut out = Vec::new();
        let mut unit = |field: String, v: f64| {
            if !(0.0..=1.0).contains(&v) {
                out.push(FieldError {
                    field,
                    message: format!("{v} is outside [0, 1]"),
                });
            }
        };
        for (i, v) in self.skills.iter().enumerate() {
            unit(format!("skills[{i}]"), *v);
        }
        for (i, v) in self.other_merits.iter().enumerate() {
            unit(format!("other_merits[{i}]"), *v);
        }
        unit("bias_level".into(), self.bias_level);
        out
    }

    pub fn demographics(&self) -> Demographics {
        Demographics::new(self.gender, self.ethnicity)
    }

    pub fn merits(&self) -> crate::Result<MeritFeatures> {
        let mut values = [0.0; MERIT_DIM];
        let mut rest = self.other_merits.iter();
        for (i, v) in values.iter_mut().enumerate() {
            *v = if MeritBlock::Skills.range().contains(&i) {
                self.skills[i - MeritBlock::Skills.range().start]
            } else {
                *rest.next().expect("eight non-skill features")
            };
        }
        MeritFeatures::new(values)
    }

    /// Scenario used by the AI methods.
    pub fn scenario(&self) -> Option<ScenarioSpec> {
        match self.method {
            MethodKind::Human => None,
            MethodKind::TraditionalAi => Some(ScenarioSpec::custom(
                self.inputs.with(FeatureGroup::Merits),
                TargetKind::Biased,
                false,
            )),
            MethodKind::ResponsibleAi => Some(ScenarioSpec::canonical(ScenarioId::S5).expect("canonical")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
    pub method: MethodKind,
    pub model_id: Option<String>,
    /// β actually used: raw for the human method, snapped to the grid otherwise.
    pub bias_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRequest {
    pub scenario: ScenarioId,
    pub bias_level: f64,
    pub seed: Option<u64>,
    /// Required for `custom`, ignored otherwise.
    pub inputs: Option<FeatureSet>,
    #[serde(default)]
    pub target: Option<TargetKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub model_id: String,
    pub val_mae: f64,
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestbedMeta {
    pub seed: u64,
    pub n: usize,
    pub bias_grid: Vec<f64>,
    pub leakage: f64,
    pub max_penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub fields: Vec<FieldError>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
            fields: Vec::new(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Argument(_) | Error::Config(_) | Error::Usage(_) => (StatusCode::BAD_REQUEST, "invalid_request"),
            Error::Parse { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "corrupt_artifact"),
            Error::Io(_) | Error::Json(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> std::result::Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let message = e.inner().to_string();
        let mut err = ApiError::bad_request(format!("invalid body: {message}"));
        err.fields.push(FieldError { field, message });
        err
    })
}

pub struct AppState {
    pub config: ServiceConfig,
    templates: EmbeddingTemplates,
    registry: RwLock<Registry>,
    models: RwLock<HashMap<String, Arc<TrainedScorer>>>,
    testbeds: Mutex<HashMap<(u64, u64, u64, usize), Arc<Testbed>>>,
    training: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> crate::Result<Arc<Self>> {
        if config.bias_grid.is_empty() {
            return Err(crate::error::config("bias grid is empty"));
        }
        let registry = Registry::open(&config.data_dir)?;
        Ok(Arc::new(Self {
            templates: EmbeddingTemplates::from_seed(config.seed),
            config,
            registry: RwLock::new(registry),
            models: RwLock::new(HashMap::new()),
            testbeds: Mutex::new(HashMap::new()),
            training: tokio::sync::Mutex::new(()),
        }))
    }

    pub fn entries(&self) -> Vec<ModelRegistryEntry> {
        self.registry.read().unwrap().entries().cloned().collect()
    }

    fn testbed(&self, seed: u64, bias_level: f64, leakage: f64, n: usize) -> crate::Result<Arc<Testbed>> {
        let key = (seed, bias_level.to_bits(), leakage.to_bits(), n);
        if let Some(tb) = self.testbeds.lock().unwrap().get(&key) {
            return Ok(tb.clone());
        }
        let cfg = TestbedConfig::new(seed, n, BiasConfig::gender(bias_level)).with_leakage(leakage);
        let tb = Arc::new(generate_testbed(&cfg)?);
        self.testbeds.lock().unwrap().insert(key, tb.clone());
        Ok(tb)
    }

    /// Registered model by id, read through the in-memory cache.
    pub fn model(&self, id: &str) -> crate::Result<Arc<TrainedScorer>> {
        if let Some(m) = self.models.read().unwrap().get(id) {
            return Ok(m.clone());
        }
        let scorer = Arc::new(self.registry.read().unwrap().load(id)?);
        self.models.write().unwrap().insert(id.to_string(), scorer.clone());
        Ok(scorer)
    }

    /// Train and register; callers must hold the training lock.
    fn train_blocking(&self, spec: &ScenarioSpec, bias_level: f64, seed: u64) -> crate::Result<Arc<TrainedScorer>> {
        let tb = self.testbed(seed, bias_level, self.config.leakage, self.config.n)?;
        let cfg = TrainingConfig {
            shuffle_seed: seed,
            ..self.config.training
        };
        let scorer = train_scenario(&tb, spec, &cfg, seed)?;
        let entry = self.registry.write().unwrap().register(&scorer)?;
        let scorer = Arc::new(scorer);
        self.models.write().unwrap().insert(entry.model_id, scorer.clone());
        Ok(scorer)
    }

    async fn train(self: &Arc<Self>, spec: ScenarioSpec, bias_level: f64, seed: u64, force: bool) -> Result<Arc<TrainedScorer>, ApiError> {
        let _guard = self.training.lock().await;
        let id = model_id(&spec, bias_level, seed);
        if !force && self.registry.read().unwrap().get(&id).is_some() {
            return Ok(self.model(&id)?);
        }
        let state = self.clone();
        tokio::task::spawn_blocking(move || state.train_blocking(&spec, bias_level, seed))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
            .map_err(ApiError::from)
    }

    /// Registered model for `spec` at `bias_level`, trained first if missing.
    pub async fn model_for(self: &Arc<Self>, spec: ScenarioSpec, bias_level: f64) -> Result<(String, Arc<TrainedScorer>), ApiError> {
        let id = model_id(&spec, bias_level, self.config.seed);
        let known = self.registry.read().unwrap().get(&id).is_some();
        let scorer = if known {
            self.model(&id)?
        } else {
            self.train(spec, bias_level, self.config.seed, false).await?
        };
        Ok((id, scorer))
    }

    /// Score one candidate. Never writes unless a needed model is missing.
    pub async fn score(self: &Arc<Self>, req: &CandidateRequest) -> Result<ScoreResponse, ApiError> {
        let errors = req.field_errors();
        if !errors.is_empty() {
            let mut e = ApiError::bad_request("request values out of range");
            e.fields = errors;
            return Err(e);
        }
        let demo = req.demographics();
        let merits = req.merits()?;
        let Some(spec) = req.scenario() else {
            let bias = BiasConfig::gender(req.bias_level);
            let score = apply_bias(unbiased_score(&merits, &ScoringWeights::uniform()), &demo, &bias);
            return Ok(ScoreResponse {
                score,
                method: req.method,
                model_id: None,
                bias_level: req.bias_level,
            });
        };
        let beta = self.config.snap(req.bias_level);
        let (id, scorer) = self.model_for(spec, beta).await?;
        let features = CandidateFeatures {
            merits,
            demographics: Some(demo),
            embedding: Some(self.templates.mean(&demo, self.config.leakage)),
        };
        Ok(ScoreResponse {
            score: predict_features(&scorer, &features)?,
            method: req.method,
            model_id: Some(id),
            bias_level: beta,
        })
    }

    /// Train every grid model the three methods need by default.
    pub async fn pretrain(self: &Arc<Self>) -> Result<Vec<String>, ApiError> {
        let mut ids = Vec::new();
        for &beta in &self.config.bias_grid.clone() {
            for id in [ScenarioId::S2, ScenarioId::S3, ScenarioId::S4, ScenarioId::S5] {
                let (mid, _) = self.model_for(ScenarioSpec::canonical(id)?, beta).await?;
                ids.push(mid);
            }
        }
        Ok(ids)
    }
}

async fn score(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<ScoreResponse> {
    let req: CandidateRequest = parse_body(&body)?;
    Ok(Json(state.score(&req).await?))
}

async fn train(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<TrainResponse> {
    let req: TrainRequest = parse_body(&body)?;
    if !(0.0..=1.0).contains(&req.bias_level) {
        let mut e = ApiError::bad_request("request values out of range");
        e.fields.push(FieldError {
            field: "bias_level".into(),
            message: format!("{} is outside [0, 1]", req.bias_level),
        });
        return Err(e);
    }
    let spec = match req.scenario {
        ScenarioId::Custom => {
            let inputs = req
                .inputs
                .ok_or_else(|| ApiError::bad_request("custom scenarios need `inputs`"))?;
            ScenarioSpec::custom(inputs, req.target.unwrap_or(TargetKind::Biased), false)
        }
        id => ScenarioSpec::canonical(id)?,
    };
    spec.validate()?;
    let seed = req.seed.unwrap_or(state.config.seed);
    let scorer = state.train(spec, req.bias_level, seed, true).await?;
    Ok(Json(TrainResponse {
        model_id: model_id(&spec, req.bias_level, seed),
        val_mae: scorer.meta.val_mae,
        history: scorer.meta.history.clone(),
    }))
}

async fn models(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "models": state.entries() }))
}

async fn screen(
    State(state): State<Arc<AppState>>,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult<ScreeningReport> {
    let id = query
        .get("model_id")
        .ok_or_else(|| ApiError::bad_request("missing query parameter `model_id`"))?;
    let k = match query.get("k") {
        None => 100,
        Some(k) => k
            .parse::<usize>()
            .map_err(|_| ApiError::bad_request(format!("k = {k:?} is not a non-negative integer")))?,
    };
    let scorer = state.model(id)?;
    let meta = &scorer.meta;
    let s = state.clone();
    let (beta, leakage, n, seed) = (meta.bias_level, meta.leakage, meta.n, meta.seed);
    let tb = tokio::task::spawn_blocking(move || s.testbed(seed, beta, leakage, n))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(evaluate_scenario(&scorer, &tb.validation(), k)?))
}

async fn testbed_meta(State(state): State<Arc<AppState>>) -> Json<TestbedMeta> {
    let c = &state.config;
    Json(TestbedMeta {
        seed: c.seed,
        n: c.n,
        bias_grid: c.bias_grid.clone(),
        leakage: c.leakage,
        max_penalty: DEFAULT_MAX_PENALTY,
    })
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/score", post(score))
        .route("/api/train", post(train))
        .route("/api/models", get(models))
        .route("/api/screen", get(screen))
        .route("/api/testbed/meta", get(testbed_meta))
        .fallback(fallback)
        .with_state(state)
}

/// Bind `addr` and serve until the process is stopped.
pub fn run(config: ServiceConfig, addr: SocketAddr, pretrain: bool) -> crate::Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let state = AppState::new(config)?;
        if pretrain {
            state
                .pretrain()
                .await
                .map_err(|e| Error::Config(format!("pretraining failed: {}", e.message)))?;
        }
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state)).await?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(method: MethodKind) -> CandidateRequest {
        CandidateRequest {
            gender: Gender::G0,
            ethnicity: Ethnicity::E1,
            skills: [0.9, 0.8, 0.7, 0.6],
            other_merits: default_other_merits(),
            bias_level: 0.5,
            inputs: FeatureSet::default(),
            method,
        }
    }

    #[test]
    fn snapping() {
        let c = ServiceConfig::new("unused");
        assert_eq!(c.snap(0.1), 0.0);
        assert_eq!(c.snap(0.125), 0.0);
        assert_eq!(c.snap(0.13), 0.25);
        assert_eq!(c.snap(0.74), 0.75);
        assert_eq!(c.snap(1.0), 1.0);
    }

    #[test]
    fn merits_interleave_skills() {
        let mut r = request(MethodKind::Human);
        r.other_merits = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
        let m = r.merits().unwrap();
        assert_eq!(m.block(MeritBlock::Skills), &[0.9, 0.8, 0.7, 0.6]);
        assert_eq!(m.values()[..5], [0.0, 0.1, 0.2, 0.3, 0.4]);
        assert_eq!(m.values()[9..], [0.5, 0.6, 0.7]);
    }

    #[test]
    fn traditional_ai_mapping() {
        use FeatureGroup::*;
        let mut r = request(MethodKind::TraditionalAi);
        let id = |r: &CandidateRequest| r.scenario().unwrap().id;
        assert_eq!(id(&r), ScenarioId::S3);
        r.inputs = FeatureSet::of(&[Gender]);
        assert_eq!(id(&r), ScenarioId::S2);
        r.inputs = FeatureSet::of(&[Embedding]);
        assert_eq!(id(&r), ScenarioId::S4);
        r.inputs = FeatureSet::of(&[Gender, Embedding]);
        let s = r.scenario().unwrap();
        assert_eq!(s.id, ScenarioId::Custom);
        assert_eq!(s.input_width(), 46);
        r.method = MethodKind::ResponsibleAi;
        assert_eq!(id(&r), ScenarioId::S5);
        r.method = MethodKind::Human;
        assert!(r.scenario().is_none());
    }

    #[test]
    fn out_of_range_values_are_named() {
        let mut r = request(MethodKind::Human);
        r.skills[2] = 1.5;
        r.other_merits[7] = -0.1;
        r.bias_level = 2.0;
        let fields: Vec<String> = r.field_errors().into_iter().map(|f| f.field).collect();
        assert_eq!(fields, vec!["skills[2]", "other_merits[7]", "bias_level"]);
    }

    #[test]
    fn body_errors_carry_the_path() {
        let err = parse_body::<CandidateRequest>(br#"{"gender":"G3"}"#).unwrap_err();
        assert_eq!(err.status, 400);
        assert_eq!(err.fields[0].field, "gender");
        let err = parse_body::<CandidateRequest>(br#"{"gender":"G0","ethnicity":"E0","skills":[0.1,0.2]}"#).unwrap_err();
        assert!(err.fields[0].field.starts_with("skills"), "{:?}", err.fields);
    }
}
