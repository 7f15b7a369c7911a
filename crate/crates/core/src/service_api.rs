//! HTTP/JSON backend for the curator workflow.
//!
//! Handlers only read shared state. Training runs on one background worker
//! thread that consumes jobs in FIFO order and is the only writer of models.
//! Curator decisions go to an append-only JSON-lines log that is replayed at
//! startup.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Cursor, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::augment::make_clones;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::metrics::{calibration_sweep, delta_grid, CalibrationRow, LabeledScores, DEFAULT_DELTA_POINTS};
use crate::rng;
use crate::trainer::{score_corpus, train_anchor_with_progress, AnchorModel, ScoreTable, TrainConfig, DEFAULT_SCORE_BATCH};
use crate::{CHANNELS, IMAGE_SIDE};

pub const HISTOGRAM_BINS: usize = 32;
pub const THUMBNAIL_SCALE: usize = 4;
pub const DEFAULT_K: usize = 20;
pub const MAX_PAGE: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    /// Holds `models/` and `decisions.jsonl`.
    pub state_dir: PathBuf,
    /// Used when a train request carries no config.
    pub train: TrainConfig,
    /// Held-out clones per anchor for the stats endpoint.
    pub n_test_pos: usize,
}

impl ServiceConfig {
    pub fn new(state_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            state_dir: state_dir.into(),
            train: TrainConfig::default(),
            n_test_pos: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub step: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub tau: f32,
    pub mu: f32,
    pub m: f32,
    pub model_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    pub job_id: usize,
    pub anchor_id: usize,
    pub seed: u64,
    pub state: JobState,
    pub progress: Progress,
    pub result: Option<JobResult>,
    pub error: Option<String>,
    #[serde(skip)]
    config: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Accept,
    Reject,
    Unsure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratorDecision {
    pub anchor_id: usize,
    pub candidate_id: usize,
    pub action: Action,
    pub score: f32,
    pub tau: f32,
    pub delta: f64,
    pub note: Option<String>,
    /// UTC, RFC 3339.
    pub timestamp: String,
}

/// A finished anchor: its model, corpus scores and held-out clone norms.
#[derive(Debug)]
pub struct TrainedAnchor {
    pub model: AnchorModel,
    pub seed: u64,
    pub scores: ScoreTable,
    pub test_pos_norms: Vec<f32>,
}

enum Task {
    Train(usize),
    Restore(usize, PathBuf),
}

#[derive(Default)]
struct Registry {
    jobs: Vec<TrainJob>,
    by_key: HashMap<(usize, u64), usize>,
    trained: HashMap<usize, Arc<TrainedAnchor>>,
}

struct DecisionLog {
    file: File,
    entries: Vec<CuratorDecision>,
}

struct Shared {
    corpus: Arc<Corpus>,
    config: ServiceConfig,
    registry: Mutex<Registry>,
    decisions: Mutex<DecisionLog>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Cheap to clone; every clone talks to the same worker.
#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
    tx: mpsc::Sender<Task>,
}

fn model_stem(anchor: usize, seed: u64) -> String {
    format!("anchor-{anchor}-seed-{seed}")
}

impl AppState {
    /// Replays the decision log, re-registers persisted models and starts the
    /// worker thread.
    pub fn open(corpus: Arc<Corpus>, config: ServiceConfig) -> Result<AppState> {
        config.train.validate()?;
        let models_dir = config.state_dir.join("models");
        std::fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;
        let log_path = config.state_dir.join("decisions.jsonl");
        let entries = replay_decisions(&log_path)?;
        log::info!("replayed {} curator decisions", entries.len());
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;

        let mut registry = Registry::default();
        let mut restore = Vec::new();
        let mut listing: Vec<PathBuf> = std::fs::read_dir(&models_dir)
            .map_err(|e| Error::io(&models_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        listing.sort();
        for meta in listing {
            let text = std::fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
            let saved: SavedModel = serde_json::from_str(&text)?;
            if saved.anchor_id >= corpus.len() {
                log::warn!("ignoring {}: anchor outside corpus", meta.display());
                continue;
            }
            let job_id = registry.jobs.len();
            registry
                .by_key
                .insert((saved.anchor_id, saved.config.seed), job_id);
            registry.jobs.push(TrainJob {
                job_id,
                anchor_id: saved.anchor_id,
                seed: saved.config.seed,
                state: JobState::Queued,
                progress: Progress {
                    step: 0,
                    total: saved.config.total_steps(),
                },
                result: None,
                error: None,
                config: saved.config,
            });
            restore.push(Task::Restore(job_id, meta.with_extension("cfe")));
        }

        let shared = Arc::new(Shared {
            corpus,
            config,
            registry: Mutex::new(registry),
            decisions: Mutex::new(DecisionLog { file, entries }),
        });
        let (tx, rx) = mpsc::channel();
        let worker = Arc::clone(&shared);
        std::thread::Builder::new()
            .name("train-worker".into())
            .spawn(move || {
                for task in rx {
                    run_task(&worker, task);
                }
            })
            .map_err(|e| Error::io(Path::new("<thread>"), e))?;
        for task in restore {
            let _ = tx.send(task);
        }
        Ok(AppState { shared, tx })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.shared.corpus
    }

    pub fn job(&self, job_id: usize) -> Option<TrainJob> {
        lock(&self.shared.registry).jobs.get(job_id).cloned()
    }

    pub fn trained(&self, anchor: usize) -> Option<Arc<TrainedAnchor>> {
        lock(&self.shared.registry).trained.get(&anchor).cloned()
    }

    pub fn decisions(&self) -> Vec<CuratorDecision> {
        lock(&self.shared.decisions).entries.clone()
    }
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    anchor_id: usize,
    config: TrainConfig,
}

fn replay_decisions(path: &Path) -> Result<Vec<CuratorDecision>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(d) => out.push(d),
            Err(e) => log::warn!("{}:{}: unreadable decision: {e}", path.display(), n + 1),
        }
    }
    Ok(out)
}

fn set_job(shared: &Shared, job_id: usize, f: impl FnOnce(&mut TrainJob)) {
    if let Some(job) = lock(&shared.registry).jobs.get_mut(job_id) {
        f(job);
    }
}

fn run_task(shared: &Shared, task: Task) {
    let job_id = match &task {
        Task::Train(j) | Task::Restore(j, _) => *j,
    };
    let Some(job) = lock(&shared.registry).jobs.get(job_id).cloned() else {
        return;
    };
    set_job(shared, job_id, |j| j.state = JobState::Running);
    let outcome = match task {
        Task::Train(_) => train_job(shared, &job),
        Task::Restore(_, path) => AnchorModel::load(&path, job.anchor_id).and_then(|model| {
            finish(shared, &job, model, path.clone())
        }),
    };
    let mut reg = lock(&shared.registry);
    match outcome {
        Ok((trained, result)) => {
            reg.trained.insert(job.anchor_id, trained);
            let j = &mut reg.jobs[job_id];
            j.progress.step = j.progress.total;
            j.result = Some(result);
            j.state = JobState::Done;
        }
        Err(e) => {
            log::error!("job {job_id} (anchor {}) failed: {e}", job.anchor_id);
            let j = &mut reg.jobs[job_id];
            j.error = Some(e.to_string());
            j.state = JobState::Failed;
        }
    }
}

fn train_job(shared: &Shared, job: &TrainJob) -> Result<(Arc<TrainedAnchor>, JobResult)> {
    let model = train_anchor_with_progress(&shared.corpus, job.anchor_id, &job.config, &mut |step, total| {
        set_job(shared, job.job_id, |j| j.progress = Progress { step, total });
    })?;
    let dir = shared.config.state_dir.join("models");
    let stem = model_stem(job.anchor_id, job.seed);
    let path = dir.join(format!("{stem}.cfe"));
    model.save(&path)?;
    let meta = dir.join(format!("{stem}.json"));
    let saved = SavedModel {
        anchor_id: job.anchor_id,
        config: job.config,
    };
    std::fs::write(&meta, serde_json::to_vec_pretty(&saved)?).map_err(|e| Error::io(&meta, e))?;
    finish(shared, job, model, path)
}

fn finish(
    shared: &Shared,
    job: &TrainJob,
    model: AnchorModel,
    model_path: PathBuf,
) -> Result<(Arc<TrainedAnchor>, JobResult)> {
    let scores = score_corpus(&model, &shared.corpus, DEFAULT_SCORE_BATCH)?;
    let mut aug = job.config.augment;
    aug.seed = rng::derive_indexed(job.seed, "test-clones", job.anchor_id as u64);
    let clones = make_clones(shared.corpus.get(job.anchor_id)?, shared.config.n_test_pos, &aug)?;
    let test_pos_norms = model.encoder.latent_norms_of(clones.data(), DEFAULT_SCORE_BATCH)?;
    let result = JobResult {
        tau: model.tau,
        mu: model.mu,
        m: model.m,
        model_path,
    };
    Ok((
        Arc::new(TrainedAnchor {
            model,
            seed: job.seed,
            scores,
            test_pos_norms,
        }),
        result,
    ))
}

/// JSON error body with a status code.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidArgument(_) | Error::OutOfRange { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn check_anchor(state: &AppState, id: usize) -> ApiResult<()> {
    if id >= state.corpus().len() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("unknown image id {id} (corpus has {})", state.corpus().len()),
        ));
    }
    Ok(())
}

fn require_trained(state: &AppState, id: usize) -> ApiResult<Arc<TrainedAnchor>> {
    check_anchor(state, id)?;
    state
        .trained(id)
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, format!("anchor {id} has no finished training")))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/corpus", get(list_corpus))
        .route("/images/{id}", get(thumbnail))
        .route("/anchors/{id}/train", post(start_training))
        .route("/jobs/{id}", get(get_job))
        .route("/anchors/{id}/candidates", get(candidates))
        .route("/anchors/{id}/decisions", post(record_decision).get(list_decisions))
        .route("/anchors/{id}/stats", get(stats))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(Path::new(&addr.to_string()), e))?;
    log::info!("listening on http://{}", addr);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(Path::new(&addr.to_string()), e))
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    offset: Option<usize>,
    limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorpusItem {
    pub id: usize,
    pub name: String,
    pub thumbnail_url: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorpusPage {
    pub total: usize,
    pub offset: usize,
    pub items: Vec<CorpusItem>,
}

fn thumbnail_url(id: usize) -> String {
    format!("/images/{id}")
}

async fn list_corpus(State(state): State<AppState>, Query(q): Query<PageQuery>) -> Json<CorpusPage> {
    let ids = state.corpus().ids();
    let offset = q.offset.unwrap_or(0).min(ids.len());
    let limit = q.limit.unwrap_or(50).min(MAX_PAGE);
    let items = ids[offset..]
        .iter()
        .take(limit)
        .enumerate()
        .map(|(i, name)| CorpusItem {
            id: offset + i,
            name: name.clone(),
            thumbnail_url: thumbnail_url(offset + i),
        })
        .collect();
    Json(CorpusPage {
        total: ids.len(),
        offset,
        items,
    })
}

/// Nearest-neighbour upscaled PNG of a stored CHW image.
pub fn thumbnail_png(pixels: &[f32], scale: usize) -> Vec<u8> {
    let side = (IMAGE_SIDE * scale) as u32;
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    let img = image::RgbImage::from_fn(side, side, |x, y| {
        let (sx, sy) = (x as usize / scale, y as usize / scale);
        let px = |c: usize| (pixels[c * plane + sy * IMAGE_SIDE + sx] * 255.0).round().clamp(0.0, 255.0) as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

async fn thumbnail(State(state): State<AppState>, UrlPath(id): UrlPath<usize>) -> ApiResult<Response> {
    check_anchor(&state, id)?;
    let png = thumbnail_png(state.corpus().get(id)?, THUMBNAIL_SCALE);
    debug_assert_eq!(CHANNELS, 3);
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct TrainRequest {
    pub seed: Option<u64>,
    pub config: Option<TrainConfig>,
}

async fn start_training(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<usize>,
    body: Bytes,
) -> ApiResult<Response> {
    check_anchor(&state, id)?;
    let req: TrainRequest = if body.iter().all(u8::is_ascii_whitespace) {
        TrainRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?
    };
    let mut config = req.config.unwrap_or(state.shared.config.train);
    if let Some(seed) = req.seed {
        config.seed = seed;
    }
    config.validate()?;

    let mut reg = lock(&state.shared.registry);
    if let Some(&job_id) = reg.by_key.get(&(id, config.seed)) {
        let job = &reg.jobs[job_id];
        if job.config != config {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("anchor {id} with seed {} already has a job with a different config", config.seed),
            ));
        }
        return Ok((StatusCode::ACCEPTED, Json(job.clone())).into_response());
    }
    let job_id = reg.jobs.len();
    let job = TrainJob {
        job_id,
        anchor_id: id,
        seed: config.seed,
        state: JobState::Queued,
        progress: Progress {
            step: 0,
            total: config.total_steps(),
        },
        result: None,
        error: None,
        config,
    };
    reg.jobs.push(job.clone());
    reg.by_key.insert((id, config.seed), job_id);
    drop(reg);
    state
        .tx
        .send(Task::Train(job_id))
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "training worker stopped"))?;
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

async fn get_job(State(state): State<AppState>, UrlPath(id): UrlPath<usize>) -> ApiResult<Json<TrainJob>> {
    state
        .job(id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown job {id}")))
}

#[derive(Debug, Deserialize)]
struct CandidateQuery {
    k: Option<usize>,
    delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: usize,
    pub name: String,
    pub score: f32,
    pub is_clone: bool,
    pub thumbnail_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub anchor_id: usize,
    pub tau: f32,
    pub delta: f64,
    pub candidates: Vec<Candidate>,
    pub least_similar: Option<Candidate>,
}

pub fn clamp_delta(delta: f64) -> f64 {
    if delta.is_nan() {
        0.0
    } else {
        delta.clamp(-0.5, 0.5)
    }
}

/// Clone iff `s ≥ −(τ + δ)`.
pub fn is_clone_at(score: f32, tau: f32, delta: f64) -> bool {
    f64::from(score) >= -(f64::from(tau) + delta)
}

fn candidate_list(state: &AppState, trained: &TrainedAnchor, k: usize, delta: f64) -> CandidateList {
    let tau = trained.model.tau;
    let ids = state.corpus().ids();
    let card = |(i, s): (usize, f32)| Candidate {
        candidate_id: i,
        name: ids[i].clone(),
        score: s,
        is_clone: is_clone_at(s, tau, delta),
        thumbnail_url: thumbnail_url(i),
    };
    CandidateList {
        anchor_id: trained.model.anchor_id,
        tau,
        delta,
        candidates: trained.scores.top_k(k).into_iter().map(card).collect(),
        least_similar: trained.scores.least_similar().map(card),
    }
}

async fn candidates(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<usize>,
    Query(q): Query<CandidateQuery>,
) -> ApiResult<Json<CandidateList>> {
    let trained = require_trained(&state, id)?;
    let delta = clamp_delta(q.delta.unwrap_or(0.0));
    Ok(Json(candidate_list(&state, &trained, q.k.unwrap_or(DEFAULT_K), delta)))
}

#[derive(Debug, Deserialize)]
struct DecisionRequest {
    candidate_id: usize,
    action: Action,
    #[serde(default)]
    delta: f64,
    #[serde(default)]
    note: Option<String>,
}

async fn record_decision(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<usize>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<CuratorDecision>)> {
    check_anchor(&state, id)?;
    let req: DecisionRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    if req.candidate_id >= state.corpus().len() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("unknown candidate {}", req.candidate_id),
        ));
    }
    let trained = require_trained(&state, id)?;
    let decision = CuratorDecision {
        anchor_id: id,
        candidate_id: req.candidate_id,
        action: req.action,
        score: trained.scores.scores[req.candidate_id],
        tau: trained.model.tau,
        delta: clamp_delta(req.delta),
        note: req.note,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
    };
    let mut line = serde_json::to_string(&decision).map_err(Error::from)?;
    line.push('\n');
    let mut log = lock(&state.shared.decisions);
    let log_path = state.shared.config.state_dir.join("decisions.jsonl");
    log.file
        .write_all(line.as_bytes())
        .and_then(|_| log.file.sync_data())
        .map_err(|e| ApiError::from(Error::io(&log_path, e)))?;
    log.entries.push(decision.clone());
    Ok((StatusCode::CREATED, Json(decision)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecisionSummary {
    pub anchor_id: usize,
    /// Every log entry for the anchor, including superseded ones.
    pub total_entries: usize,
    /// Latest decision per candidate, by candidate id.
    pub latest: Vec<CuratorDecision>,
}

async fn list_decisions(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<usize>,
) -> ApiResult<Json<DecisionSummary>> {
    check_anchor(&state, id)?;
    let log = lock(&state.shared.decisions);
    let mut latest = BTreeMap::new();
    let mut total = 0;
    for d in log.entries.iter().filter(|d| d.anchor_id == id) {
        total += 1;
        latest.insert(d.candidate_id, d.clone());
    }
    Ok(Json(DecisionSummary {
        anchor_id: id,
        total_entries: total,
        latest: latest.into_values().collect(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    /// `HISTOGRAM_BINS + 1` edges spanning `[0, max norm]`.
    pub edges: Vec<f64>,
    pub positive: Vec<u64>,
    pub corpus: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorStats {
    pub anchor_id: usize,
    pub mu: f32,
    pub m: f32,
    pub tau: f32,
    pub n_test_pos: usize,
    pub histograms: Histograms,
    pub calibration: Vec<CalibrationRow>,
}

/// Counts of `values` in `bins` equal-width bins over `[0, max]`; the top bin
/// is closed.
pub fn histogram(values: &[f32], max: f64, bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    for &v in values {
        let i = if max > 0.0 {
            ((f64::from(v) / max * bins as f64).floor().max(0.0) as usize).min(bins - 1)
        } else {
            0
        };
        counts[i] += 1;
    }
    counts
}

/// Held-out clones against every corpus image except the anchor.
pub fn anchor_stats(trained: &TrainedAnchor) -> AnchorStats {
    let anchor = trained.model.anchor_id;
    let corpus_norms: Vec<f32> = trained.scores.scores.iter().map(|s| -s).collect();
    let max = trained
        .test_pos_norms
        .iter()
        .chain(&corpus_norms)
        .fold(0.0f64, |a, &v| a.max(f64::from(v)));
    let edges = (0..=HISTOGRAM_BINS)
        .map(|i| max * i as f64 / HISTOGRAM_BINS as f64)
        .collect();
    let negatives: Vec<f32> = corpus_norms
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != anchor)
        .map(|(_, &n)| n)
        .collect();
    let neg_scores: Vec<f32> = negatives.iter().map(|n| -n).collect();
    let pos_scores: Vec<f32> = trained.test_pos_norms.iter().map(|n| -n).collect();
    let scores = LabeledScores::from_f32(&pos_scores, &neg_scores);
    AnchorStats {
        anchor_id: anchor,
        mu: trained.model.mu,
        m: trained.model.m,
        tau: trained.model.tau,
        n_test_pos: trained.test_pos_norms.len(),
        histograms: Histograms {
            edges,
            positive: histogram(&trained.test_pos_norms, max, HISTOGRAM_BINS),
            corpus: histogram(&corpus_norms, max, HISTOGRAM_BINS),
        },
        calibration: calibration_sweep(
            &scores,
            f64::from(trained.model.tau),
            &delta_grid(DEFAULT_DELTA_POINTS),
        ),
    }
}

async fn stats(State(state): State<AppState>, UrlPath(id): UrlPath<usize>) -> ApiResult<Json<AnchorStats>> {
    let trained = require_trained(&state, id)?;
    Ok(Json(anchor_stats(&trained)))
}
